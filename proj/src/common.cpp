#include "hydrolimit/common.hpp"

namespace hydrolimit {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Domain: return "domain error";
        case ErrorKind::NotRarefaction: return "not a rarefaction";
        case ErrorKind::Vacuum: return "vacuum";
        case ErrorKind::Numeric: return "numeric error";
        case ErrorKind::IncompatibleWaveStrength: return "incompatible wave strength";
        case ErrorKind::Incompatibility: return "incompatibility";
        case ErrorKind::Projection: return "projection error";
        case ErrorKind::Consistency: return "consistency error";
        case ErrorKind::Positivity: return "positivity error";
        case ErrorKind::CflViolation: return "CFL violation";
        case ErrorKind::MemoryBudget: return "memory budget exceeded";
        case ErrorKind::Config: return "config error";
    }
    return "error";
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string o = "\"";
    for (char c : s) {
        if (c == '"') o += '"';
        o += c;
    }
    return o + "\"";
}

}  // namespace hydrolimit
