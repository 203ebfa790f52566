#include <benchmark/benchmark.h>

#include "seqoed/design.hpp"
#include "seqoed/inference.hpp"
#include "seqoed/models/fv_solver.hpp"
#include "seqoed/models/linear_gaussian.hpp"
#include "seqoed/models/source_inversion.hpp"

using namespace seqoed;

namespace {

nnet::Mlp net_80x80(int input, int output) {
  Rng rng = substream(1, "bench");
  return nnet::Mlp(nnet::make_arch(input, {80, 80}, output), rng);
}

void BM_MlpForward(benchmark::State& state) {
  const auto net = net_80x80(15, 1);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(15, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpForward)->Arg(1)->Arg(64)->Arg(2000);

void BM_MlpGrad(benchmark::State& state) {
  const auto net = net_80x80(15, 1);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(15, state.range(0));
  const Eigen::MatrixXd up = Eigen::MatrixXd::Ones(1, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(nnet::mlp_grad(net, x, up));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpGrad)->Arg(64)->Arg(2000);

void BM_FvSolve(benchmark::State& state) {
  const auto cfg = models::case_config(2);
  const auto profile = state.range(0) == 0 ? models::SolverProfile::desk : models::SolverProfile::fine;
  const models::FvSolver solver(models::make_fv_grid(cfg.z_lo, cfg.z_hi, cfg.velocity, profile));
  const models::SourceParams src;
  for (auto _ : state) benchmark::DoNotOptimize(solver.solve(src, cfg.times));
}
BENCHMARK(BM_FvSolve)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_KernelPrediction(benchmark::State& state) {
  const auto prob = models::source_inversion_problem(models::case_config(2), models::SolverProfile::desk);
  const auto& model = dynamic_cast<const models::SourceInversionModel&>(*prob.model);
  model.prepare();
  Vector theta(2), pos(2);
  theta << 0.3, 0.6;
  pos << 0.55, 0.45;
  for (auto _ : state) benchmark::DoNotOptimize(model.concentration(theta, 1, pos));
}
BENCHMARK(BM_KernelPrediction);

void BM_GridPosterior(benchmark::State& state) {
  const ProblemSpec p = models::linear_gaussian_problem();
  const auto prior = inference::init_belief_grid(p.prior, static_cast<int>(state.range(0)));
  History h(2);
  h = h.append(Vector::Constant(1, 0.5), Vector::Constant(1, 1.2));
  h = h.append(Vector::Constant(1, 0.4), Vector::Constant(1, 0.3));
  for (auto _ : state) {
    const auto post = inference::posterior_from_history(prior, p, h);
    benchmark::DoNotOptimize(inference::kl_divergence(post, prior));
  }
}
BENCHMARK(BM_GridPosterior)->Arg(50)->Arg(400);

void BM_CasePosterior(benchmark::State& state) {
  const auto prob = models::source_inversion_problem(models::case_config(2), models::SolverProfile::desk);
  const auto prior = inference::init_belief_grid(prob.prior, 50);
  History h(2);
  Vector d(2);
  d << 0.1, -0.1;
  h = h.append(d, Vector::Constant(1, 0.2));
  h = h.append(d, Vector::Constant(1, 0.5));
  inference::posterior_from_history(prior, prob, h);  // builds the grid tables
  for (auto _ : state) benchmark::DoNotOptimize(inference::posterior_from_history(prior, prob, h));
}
BENCHMARK(BM_CasePosterior)->Unit(benchmark::kMicrosecond);

void BM_SimulateBenchmarkEpisodes(benchmark::State& state) {
  const ProblemSpec p = models::linear_gaussian_problem();
  Rng rng = substream(2, "bench");
  const auto pol = design::Policy::create(p, design::DesignMode::soed, {80, 80}, rng);
  const auto grid = inference::init_belief_grid(p.prior, 50);
  design::SimulationOptions opt;
  opt.grid = &grid;
  const auto draws = design::draw_episodes(p, 1000, 3, 0);
  for (auto _ : state) benchmark::DoNotOptimize(design::simulate_episodes(pol, p, draws, 0.2, opt));
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_SimulateBenchmarkEpisodes)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
