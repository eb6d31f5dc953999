// Q(mu, mu) on an n^3 lattice: serial reference, OpenMP double loop, offset plan.
#include <benchmark/benchmark.h>

#include "hydrolimit/collision_operator.hpp"
#include "hydrolimit/maxwellian_frame.hpp"

using namespace hydrolimit;

namespace {

struct Setup {
    KernelSpec kernel;
    VelocityGrid grid;
    Field mu;
    explicit Setup(int n) : grid(4.0, n) { mu = maxwellian_on(GasState{}, grid); }
};

void BM_Reference(benchmark::State& st) {
    const Setup s(static_cast<int>(st.range(0)));
    for (auto _ : st) benchmark::DoNotOptimize(reference::q_bilinear(s.mu, s.mu, s.kernel, s.grid));
    st.counters["nodes"] = static_cast<double>(s.grid.size());
}

void BM_OpenMP(benchmark::State& st) {
    const Setup s(static_cast<int>(st.range(0)));
    for (auto _ : st) benchmark::DoNotOptimize(q_bilinear(s.mu, s.mu, s.kernel, s.grid));
    st.counters["nodes"] = static_cast<double>(s.grid.size());
}

void BM_Plan(benchmark::State& st) {
    const Setup s(static_cast<int>(st.range(0)));
    const CollisionPlan plan(s.kernel, s.grid);
    for (auto _ : st) benchmark::DoNotOptimize(plan.apply(s.mu, s.mu));
    st.counters["nodes"] = static_cast<double>(s.grid.size());
    st.counters["entries"] = static_cast<double>(plan.entries());
}

void BM_PlanBuild(benchmark::State& st) {
    const Setup s(static_cast<int>(st.range(0)));
    for (auto _ : st) benchmark::DoNotOptimize(CollisionPlan(s.kernel, s.grid).entries());
}

}  // namespace

BENCHMARK(BM_Reference)->Arg(6)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_OpenMP)->Arg(6)->Arg(8)->Arg(10)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Plan)->Arg(6)->Arg(8)->Arg(10)->Arg(12)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PlanBuild)->Arg(8)->Arg(12)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
