// Microbenchmarks for the three local-update rules and for the two ways of
// applying curvature factors. Run with --benchmark_filter to select.
#include <benchmark/benchmark.h>

#include "metafl/local_update.hpp"
#include "metafl/model.hpp"
#include "metafl/rng.hpp"

namespace {

using namespace metafl;

struct Workbench {
  ModelSpec spec;
  ModelParams params;
  Batch batch;

  Workbench(int features, int hidden, int classes, int rows)
      : spec(ModelSpec::mlp(features, {hidden}, classes)),
        params(init_params(spec, 7)) {
    RngStream s(8);
    batch.inputs = Matrix(rows, features);
    for (double& v : batch.inputs.data) v = s.uniform();
    batch.labels.resize(rows);
    for (int& l : batch.labels) l = static_cast<int>(s.below(classes));
  }
};

// 16 -> 32 -> 10 is 874 parameters, above the dense-Hessian cap, so the
// engines run in Hessian-vector-product mode here.
const Workbench& large() {
  static const Workbench w(16, 32, 10, 40);
  return w;
}

// 8 -> 8 -> 4 is 108 parameters, small enough to materialize the Hessian.
const Workbench& small_net() {
  static const Workbench w(8, 8, 4, 40);
  return w;
}

HyperParams hyper(int nu) {
  HyperParams hp;
  hp.alpha = 0.05;
  hp.beta = 0.05;
  hp.nu = nu;
  hp.delta = 1e-3;
  hp.plan = BatchPlan::uniform(nu, 40);
  return hp;
}

double checksum(const Vector& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

void BM_ExactUpdate(benchmark::State& state) {
  const Workbench& w = large();
  const HyperParams hp = hyper(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    FixedBatchSource src(w.batch);
    benchmark::DoNotOptimize(
        checksum(exact_local_update(w.spec, w.params, src, hp).direction));
  }
}
BENCHMARK(BM_ExactUpdate)->Arg(1)->Arg(2)->Arg(3);

void BM_FirstOrderUpdate(benchmark::State& state) {
  const Workbench& w = large();
  const HyperParams hp = hyper(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    FixedBatchSource src(w.batch);
    benchmark::DoNotOptimize(
        checksum(fo_local_update(w.spec, w.params, src, hp).direction));
  }
}
BENCHMARK(BM_FirstOrderUpdate)->Arg(1)->Arg(2)->Arg(3);

void BM_HessianFreeUpdate(benchmark::State& state) {
  const Workbench& w = large();
  const HyperParams hp = hyper(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    FixedBatchSource src(w.batch);
    benchmark::DoNotOptimize(
        checksum(hf_local_update(w.spec, w.params, src, hp).direction));
  }
}
BENCHMARK(BM_HessianFreeUpdate)->Arg(1)->Arg(2)->Arg(3);

void BM_OracleHvp(benchmark::State& state) {
  const Workbench& w = small_net();
  for (auto _ : state)
    benchmark::DoNotOptimize(checksum(exact_meta_gradient_oracle(
        w.spec, w.params, w.batch, 0.05, static_cast<int>(state.range(0)),
        HessianApply::kHvp)));
}
BENCHMARK(BM_OracleHvp)->Arg(1)->Arg(3);

void BM_OracleDense(benchmark::State& state) {
  const Workbench& w = small_net();
  for (auto _ : state)
    benchmark::DoNotOptimize(checksum(exact_meta_gradient_oracle(
        w.spec, w.params, w.batch, 0.05, static_cast<int>(state.range(0)),
        HessianApply::kDense)));
}
BENCHMARK(BM_OracleDense)->Arg(1)->Arg(3);

}  // namespace

BENCHMARK_MAIN();
