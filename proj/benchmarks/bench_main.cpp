#include <benchmark/benchmark.h>

#include "ksoftmax/model.hpp"

using namespace ksoftmax;

namespace {

Matrix uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

constexpr int kBatch = 64;
constexpr int kDim = 32;

// range(0): kernel index, range(1): vocabulary size.
void BM_BatchLogits(benchmark::State& state) {
  const KernelKind kind = kAllKernels[static_cast<std::size_t>(state.range(0))];
  const auto V = static_cast<Eigen::Index>(state.range(1));
  Rng rng(1);
  const double scale = 0.5 / std::sqrt(kDim);
  const Matrix W = uniform(rng, kDim, V, scale);
  const Matrix H = uniform(rng, kBatch, kDim, scale);
  const KernelSpec spec = KernelSpec::with_defaults(kind, kDim);
  for (auto _ : state) benchmark::DoNotOptimize(batch_logits(spec, W, H));
  state.SetLabel(std::string(to_string(kind)));
  state.SetItemsProcessed(state.iterations() * kBatch * V);
}

void BM_BatchBackward(benchmark::State& state) {
  const KernelKind kind = kAllKernels[static_cast<std::size_t>(state.range(0))];
  const auto V = static_cast<Eigen::Index>(state.range(1));
  Rng rng(2);
  const double scale = 0.5 / std::sqrt(kDim);
  const Matrix W = uniform(rng, kDim, V, scale);
  const Matrix H = uniform(rng, kBatch, kDim, scale);
  const Matrix G = uniform(rng, kBatch, V, 1.0);
  const KernelSpec spec = KernelSpec::with_defaults(kind, kDim);
  const Vector log_vars = Vector::Zero(V);
  for (auto _ : state) benchmark::DoNotOptimize(batch_backward(spec, W, H, log_vars, 0.0, G));
  state.SetLabel(std::string(to_string(kind)));
  state.SetItemsProcessed(state.iterations() * kBatch * V);
}

void kernel_args(benchmark::internal::Benchmark* b) {
  for (std::size_t k = 0; k < kAllKernels.size(); ++k) b->Args({static_cast<std::int64_t>(k), 2000});
}

// Full forward and backward pass of a model; range(0) is the number of components.
void BM_TrainStepMixture(benchmark::State& state) {
  static const char* const kernels[] = {"lin", "lin,pow", "lin,pow,rbf"};
  TrainConfig cfg;
  cfg.mixture.d = kDim;
  cfg.mixture.V = 2000;
  cfg.d_e = kDim;
  cfg.n = 3;
  KernelHyper hyper;
  cfg.mixture.components = parse_kernel_list(kernels[state.range(0) - 1], hyper, kDim);
  Rng rng(3);
  const Model model = init_model(cfg, rng);
  Batch batch;
  batch.windows = Windows(kBatch, cfg.n);
  for (Eigen::Index i = 0; i < batch.windows.size(); ++i) batch.windows.data()[i] = 2 + static_cast<int>(rng.below(1998));
  for (int b = 0; b < kBatch; ++b) batch.targets.push_back(2 + static_cast<int>(rng.below(1998)));
  for (auto _ : state) {
    const BatchLoss fwd = forward(cfg, model, batch);
    benchmark::DoNotOptimize(gradients(cfg, model, batch, fwd));
  }
  state.SetItemsProcessed(state.iterations() * kBatch);
}

}  // namespace

BENCHMARK(BM_BatchLogits)->Apply(kernel_args)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_BatchBackward)->Apply(kernel_args)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_TrainStepMixture)->DenseRange(1, 3)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
