#include "hydrolimit/verify_harness.hpp"

int main(int argc, char** argv) { return hydrolimit::cli_dispatch(argc, argv); }
