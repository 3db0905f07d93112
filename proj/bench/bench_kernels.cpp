// Serial reference vs OpenMP kernels. Set OMP_NUM_THREADS to vary the team.

#include <benchmark/benchmark.h>

#include <map>
#include <vector>

#include "irllab/kernels.hpp"
#include "irllab/policy.hpp"
#include "irllab/random.hpp"
#include "irllab/world.hpp"

using namespace irllab;

namespace {

struct Fixture {
  WorldConfig world;
  FeatureSpec spec{true, true, true, true};
  PolicyParams policy{12, 2};
  std::vector<Sequence> prompts;
  std::vector<Sequence> trajectories;
  std::vector<double> w;
  std::vector<FeatureVector> diffs;
  std::vector<double> x, y;

  explicit Fixture(std::size_t n) {
    Rng rng = make_stream(1);
    for (double& v : policy.table()) v = standard_normal(rng);
    for (const auto& item : generate_corpus(world, static_cast<int>(n / 2), 0.8, 0.35, 2)) prompts.push_back(item.seq);
    trajectories = kernels::serial::rollout_batch(policy, prompts, world, 1.0, 3, 4);
    const auto dim = spec.dimension(world.vocab_size);
    w.resize(dim);
    for (double& v : w) v = standard_normal(rng);
    diffs.assign(n, FeatureVector(dim));
    for (auto& d : diffs)
      for (double& v : d) v = standard_normal(rng);
    x.resize(n);
    y.resize(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = standard_normal(rng), y[i] = x[i] + standard_normal(rng);
  }
};

const Fixture& fixture(std::size_t n) {
  static std::map<std::size_t, Fixture> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, Fixture(n)).first;
  return it->second;
}

template <bool Parallel>
void BM_Rollout(benchmark::State& state) {
  const auto& f = fixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto out = Parallel ? kernels::parallel::rollout_batch(f.policy, f.prompts, f.world, 1.0, 5, 6)
                        : kernels::serial::rollout_batch(f.policy, f.prompts, f.world, 1.0, 5, 6);
    benchmark::DoNotOptimize(out);
  }
}

template <bool Parallel>
void BM_FeatureSum(benchmark::State& state) {
  const auto& f = fixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto out = Parallel ? kernels::parallel::mean_feature_sum(f.trajectories, f.spec, f.world, 1.0)
                        : kernels::serial::mean_feature_sum(f.trajectories, f.spec, f.world, 1.0);
    benchmark::DoNotOptimize(out);
  }
}

template <bool Parallel>
void BM_LossGrad(benchmark::State& state) {
  const auto& f = fixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto out = Parallel ? kernels::parallel::pairwise_loss_grad(f.w, f.diffs)
                        : kernels::serial::pairwise_loss_grad(f.w, f.diffs);
    benchmark::DoNotOptimize(out);
  }
}

template <bool Parallel>
void BM_Kendall(benchmark::State& state) {
  const auto& f = fixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto out = Parallel ? kernels::parallel::kendall_counts(f.x, f.y) : kernels::serial::kendall_counts(f.x, f.y);
    benchmark::DoNotOptimize(out);
  }
}

}  // namespace

BENCHMARK(BM_Rollout<false>)->Arg(400)->Arg(4000);
BENCHMARK(BM_Rollout<true>)->Arg(400)->Arg(4000);
BENCHMARK(BM_FeatureSum<false>)->Arg(400)->Arg(4000);
BENCHMARK(BM_FeatureSum<true>)->Arg(400)->Arg(4000);
BENCHMARK(BM_LossGrad<false>)->Arg(400)->Arg(4000);
BENCHMARK(BM_LossGrad<true>)->Arg(400)->Arg(4000);
BENCHMARK(BM_Kendall<false>)->Arg(400)->Arg(4000);
BENCHMARK(BM_Kendall<true>)->Arg(400)->Arg(4000);

BENCHMARK_MAIN();
