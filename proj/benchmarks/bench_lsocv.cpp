#include "lsocv/criteria.hpp"
#include "lsocv/estimator.hpp"
#include "lsocv/optimizer.hpp"
#include "lsocv/simulation.hpp"

#include <benchmark/benchmark.h>

#include <memory>

using namespace lsocv;

namespace {

std::shared_ptr<const PenalizedSystem> scenario_system(int N) {
    SimScenario sc;
    sc.n = N / sc.cluster_size;
    sc.seed = 11;
    const SimulatedData sim = gen_dataset(sc, 0);
    const auto design = assemble_design(sim.data, simulation_terms(10));
    return std::make_shared<const PenalizedSystem>(
        PenalizedSystem::build(sim.data, design, working_blocks(sc.truth, sim.data)));
}

void BM_Fit(benchmark::State& state) {
    const auto sys = scenario_system(static_cast<int>(state.range(0)));
    const Eigen::VectorXd lambda = Eigen::Vector2d(0.3, 3.0);
    for (auto _ : state) benchmark::DoNotOptimize(fit(sys, lambda));
    state.SetComplexityN(state.range(0));
}

void BM_LsocvExact(benchmark::State& state) {
    const auto sys = scenario_system(static_cast<int>(state.range(0)));
    const FitResult f = fit(sys, Eigen::Vector2d(0.3, 3.0));
    for (auto _ : state) benchmark::DoNotOptimize(lsocv_exact(f));
    state.SetComplexityN(state.range(0));
}

void BM_LsocvStarEvaluate(benchmark::State& state) {
    const LsocvStarObjective obj(scenario_system(static_cast<int>(state.range(0))));
    const Eigen::VectorXd eta = Eigen::Vector2d(-1.0, 1.0);
    for (auto _ : state) benchmark::DoNotOptimize(obj.evaluate(eta));
    state.SetComplexityN(state.range(0));
}

void BM_OptimizeLambda(benchmark::State& state) {
    const auto sys = scenario_system(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(optimize_lambda(sys));
}

}  // namespace

BENCHMARK(BM_Fit)->Arg(500)->Arg(1000)->Arg(2000)->Arg(4000)->Complexity(benchmark::oN);
BENCHMARK(BM_LsocvExact)->Arg(500)->Arg(1000)->Arg(2000)->Arg(4000)->Complexity(benchmark::oN);
BENCHMARK(BM_LsocvStarEvaluate)->Arg(500)->Arg(1000)->Arg(2000)->Arg(4000)->Complexity(benchmark::oN);
BENCHMARK(BM_OptimizeLambda)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
