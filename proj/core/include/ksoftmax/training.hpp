#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ksoftmax/model.hpp"

namespace ksoftmax {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainState {
  Model model;
  Model adam_m;
  Model adam_v;
  std::int64_t step = 0;
  int epoch = 0;  // completed epochs
  double best_dev_ppl = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int epochs_since_best = 0;
  std::string rng_state;
};

TrainState init_state(const TrainConfig& config);

/// Scales grads so their global L2 norm is at most clip_norm. Returns the norm
/// before clipping.
double clip_gradients(Model& grads, double clip_norm);

double global_norm(const Model& grads);

/// One optimizer update on already-clipped gradients; advances state.step.
void apply_update(const TrainConfig& config, TrainState& state, const Model& grads,
                  const AdamSettings& adam = {});

struct StepResult {
  double loss = 0.0;
  double cross_entropy = 0.0;
  double regularizer = 0.0;
  Vector pi_mean;  // K, mean mixture weight over the batch
};

/// Forward, backward, clip, update and (for hpb) ball projection on one batch.
/// Throws Error(DivergenceDetected) before touching the state when the loss
/// or a gradient is non-finite.
StepResult train_step(const TrainConfig& config, TrainState& state, const Batch& batch);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_ppl = 0.0;
  std::vector<double> pi_mean;
  double reg_term = 0.0;
};

struct TrainResult {
  TrainState best;
  TrainState last;  // state after the last finite step
  std::vector<EpochMetrics> metrics;  // epoch 0 is the untrained model
  bool diverged = false;
  std::string divergence;
  std::int64_t divergence_step = -1;
};

struct TrainOptions {
  /// Continue from a saved state instead of a fresh initialization.
  const TrainState* resume = nullptr;
  /// Called after every epoch (including epoch 0).
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Trains until max_epochs or until dev perplexity has not improved for
/// `patience` epochs. The returned `best` state has the lowest dev perplexity.
TrainResult train(const TrainConfig& config, const CorpusSplit& corpus,
                  const TrainOptions& options = {});

/// Header plus one row per epoch: epoch,train_loss,dev_ppl,pi_mean_1..K,reg_term.
std::string metrics_csv(const std::vector<EpochMetrics>& metrics, int K);

struct GridAxis {
  std::string key;  // an ExperimentConfig key, e.g. "train.rho"
  std::vector<std::string> values;
};

struct GridRow {
  int rank = 0;  // 1 = best dev perplexity; diverged points rank last
  std::vector<std::pair<std::string, std::string>> assignment;
  double dev_ppl = 0.0;
  double mean_pi_variance = 0.0;
  int epochs = 0;
  bool diverged = false;
  std::string note;
  TrainResult result;
};

/// Trains every point of the Cartesian product of `grid` on top of `base` and
/// returns the rows ranked by dev perplexity. At most `jobs` points train at
/// once. Diverged points are recorded, not fatal. Corpus keys cannot be swept.
std::vector<GridRow> grid_search(const ExperimentConfig& base, const std::vector<GridAxis>& grid,
                                 const CorpusSplit& corpus, int V, std::uint64_t fallback_seed,
                                 int jobs = 1);

/// Ranked table: rank,<axis keys...>,dev_ppl,mean_pi_variance,epochs,status
std::string grid_csv(const std::vector<GridRow>& rows);

}  // namespace ksoftmax
