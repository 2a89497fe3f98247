#include "ksoftmax/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "ksoftmax/error.hpp"
#include "ksoftmax/eval.hpp"

namespace ksoftmax {
namespace {

using Map = Eigen::Map<Vector>;
using ConstMap = Eigen::Map<const Vector>;

[[noreturn]] void diverge(std::int64_t step, const std::string& what) {
  throw Error(Errc::DivergenceDetected, "step " + std::to_string(step) + ": " + what);
}

std::string first_nonfinite_tensor(const Model& grads) {
  for (const auto& t : tensors(grads)) {
    if (!ConstMap(t.data, t.size()).allFinite()) return t.name;
  }
  return {};
}

}  // namespace

TrainState init_state(const TrainConfig& config) {
  config.validate();
  Rng rng{config.seed, 0x1417u};
  TrainState s;
  s.model = init_model(config, rng);
  s.adam_m = s.model.zeros_like();
  s.adam_v = s.model.zeros_like();
  s.rng_state = rng.state();
  return s;
}

double global_norm(const Model& grads) {
  double sq = 0.0;
  for (const auto& t : tensors(grads)) sq += ConstMap(t.data, t.size()).squaredNorm();
  return std::sqrt(sq);
}

double clip_gradients(Model& grads, double clip_norm) {
  const double norm = global_norm(grads);
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (auto& t : tensors(grads)) Map(t.data, t.size()) *= scale;
  }
  return norm;
}

void apply_update(const TrainConfig& config, TrainState& state, const Model& grads,
                  const AdamSettings& adam) {
  ++state.step;
  auto params = tensors(state.model);
  auto g = tensors(grads);
  auto m = tensors(state.adam_m);
  auto v = tensors(state.adam_v);
  const double lr = config.learning_rate;
  const auto t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(adam.beta1, t);
  const double bias2 = 1.0 - std::pow(adam.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Map p(params[i].data, params[i].size());
    ConstMap gi(g[i].data, g[i].size());
    if (config.optimizer == OptimizerKind::sgd) {
      p -= lr * gi;
      continue;
    }
    Map mi(m[i].data, m[i].size());
    Map vi(v[i].data, v[i].size());
    mi = adam.beta1 * mi + (1.0 - adam.beta1) * gi;
    vi = adam.beta2 * vi + (1.0 - adam.beta2) * gi.cwiseProduct(gi);
    p.array() -= lr * (mi.array() / bias1) / ((vi.array() / bias2).sqrt() + adam.epsilon);
  }
  project_to_ball(config.mixture, state.model.output);
}

StepResult train_step(const TrainConfig& config, TrainState& state, const Batch& batch) {
  BatchLoss fwd;
  try {
    fwd = forward(config, state.model, batch);
  } catch (const Error& e) {
    if (e.code() == Errc::NonFiniteScore) diverge(state.step + 1, e.what());
    throw;
  }
  if (!std::isfinite(fwd.output.value)) {
    diverge(state.step + 1, "loss is " + format_double(fwd.output.value));
  }
  Model grads = gradients(config, state.model, batch, fwd);
  if (auto bad = first_nonfinite_tensor(grads); !bad.empty()) {
    diverge(state.step + 1, "gradient of " + bad + " is not finite");
  }
  clip_gradients(grads, config.clip_norm);
  apply_update(config, state, grads);

  StepResult r;
  r.loss = fwd.output.value;
  r.cross_entropy = fwd.output.cross_entropy;
  r.regularizer = fwd.output.regularizer;
  r.pi_mean = fwd.output.cache.pi.colwise().mean().transpose();
  return r;
}

TrainResult train(const TrainConfig& config, const CorpusSplit& corpus,
                  const TrainOptions& options) {
  config.validate();
  if (corpus.train.num_tokens() == 0) throw Error(Errc::EmptyCorpus, "training split is empty");
  if (corpus.dev.num_tokens() == 0) throw Error(Errc::EmptyCorpus, "dev split is empty");

  TrainResult result;
  TrainState state = options.resume ? *options.resume : init_state(config);
  const int K = config.mixture.K();

  auto dev_stats = [&](const TrainState& s) {
    try {
      return evaluate_split(config, s.model, corpus.dev);
    } catch (const Error& e) {
      if (e.code() == Errc::NonFiniteScore) diverge(s.step, e.what());
      throw;
    }
  };
  auto emit = [&](EpochMetrics m) {
    if (options.on_epoch) options.on_epoch(m);
    result.metrics.push_back(std::move(m));
  };

  try {
    if (!options.resume) {
      SplitStats tr;
      try {
        tr = evaluate_split(config, state.model, corpus.train);
      } catch (const Error& e) {
        if (e.code() == Errc::NonFiniteScore) diverge(0, e.what());
        throw;
      }
      const SplitStats dv = dev_stats(state);
      emit(EpochMetrics{0, tr.cross_entropy + tr.regularizer, dv.perplexity, tr.pi_mean,
                        tr.regularizer});
      state.best_dev_ppl = dv.perplexity;
      state.best_epoch = 0;
      state.epochs_since_best = 0;
    }
    result.best = state;

    for (int epoch = state.epoch + 1; epoch <= config.max_epochs; ++epoch) {
      if (state.epochs_since_best >= config.patience) break;
      BatchStream stream(corpus.train, config.n, config.batch_size, config.seed, epoch);
      Batch batch;
      double loss_sum = 0.0;
      double reg_sum = 0.0;
      Vector pi_sum = Vector::Zero(K);
      std::size_t seen = 0;
      while (stream.next(batch)) {
        const StepResult r = train_step(config, state, batch);
        const auto count = static_cast<double>(batch.targets.size());
        loss_sum += r.loss * count;
        reg_sum += r.regularizer * count;
        pi_sum += r.pi_mean * count;
        seen += batch.targets.size();
      }
      state.epoch = epoch;
      const SplitStats dv = dev_stats(state);
      if (!std::isfinite(dv.perplexity)) diverge(state.step, "dev perplexity is not finite");

      const double denom = static_cast<double>(std::max<std::size_t>(seen, 1));
      EpochMetrics m;
      m.epoch = epoch;
      m.train_loss = loss_sum / denom;
      m.dev_ppl = dv.perplexity;
      m.pi_mean.resize(static_cast<std::size_t>(K));
      for (int k = 0; k < K; ++k) m.pi_mean[static_cast<std::size_t>(k)] = pi_sum[k] / denom;
      m.reg_term = reg_sum / denom;

      if (dv.perplexity < state.best_dev_ppl) {
        state.best_dev_ppl = dv.perplexity;
        state.best_epoch = epoch;
        state.epochs_since_best = 0;
        result.best = state;
      } else {
        ++state.epochs_since_best;
      }
      emit(std::move(m));
    }
  } catch (const Error& e) {
    if (e.code() != Errc::DivergenceDetected) throw;
    result.diverged = true;
    result.divergence = e.detail();
    result.divergence_step = state.step + 1;
  }
  result.last = std::move(state);
  return result;
}

std::string metrics_csv(const std::vector<EpochMetrics>& metrics, int K) {
  std::ostringstream out;
  out << "epoch,train_loss,dev_ppl";
  for (int k = 1; k <= K; ++k) out << ",pi_mean_" << k;
  out << ",reg_term\n";
  for (const auto& m : metrics) {
    out << m.epoch << ',' << format_double(m.train_loss) << ',' << format_double(m.dev_ppl);
    for (int k = 0; k < K; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      out << ',' << format_double(kk < m.pi_mean.size() ? m.pi_mean[kk] : 0.0);
    }
    out << ',' << format_double(m.reg_term) << '\n';
  }
  return out.str();
}

std::vector<GridRow> grid_search(const ExperimentConfig& base, const std::vector<GridAxis>& grid,
                                 const CorpusSplit& corpus, int V, std::uint64_t fallback_seed,
                                 int jobs) {
  if (grid.empty()) throw Error(Errc::InvalidConfig, "grid has no axes");
  for (const auto& axis : grid) {
    if (axis.values.empty()) {
      throw Error(Errc::InvalidConfig, "grid axis " + axis.key + " has no values");
    }
    if (axis.key.rfind("corpus.", 0) == 0) {
      throw Error(Errc::InvalidConfig, "grid cannot sweep corpus setting " + axis.key);
    }
  }

  // Cartesian product, last axis varying fastest.
  std::vector<GridRow> rows;
  std::vector<TrainConfig> configs;
  std::size_t total = 1;
  for (const auto& axis : grid) total *= axis.values.size();
  for (std::size_t point = 0; point < total; ++point) {
    std::vector<std::size_t> index(grid.size());
    std::size_t rest = point;
    for (std::size_t a = grid.size(); a-- > 0;) {
      index[a] = rest % grid[a].values.size();
      rest /= grid[a].values.size();
    }
    GridRow row;
    ExperimentConfig cfg = base;
    for (std::size_t a = 0; a < grid.size(); ++a) {
      const auto& value = grid[a].values[index[a]];
      cfg.set(grid[a].key, value);
      row.assignment.emplace_back(grid[a].key, value);
    }
    configs.push_back(cfg.resolve(V, fallback_seed));
    rows.push_back(std::move(row));
  }

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < rows.size(); i = next++) {
      try {
        GridRow& row = rows[i];
        row.result = train(configs[i], corpus);
        row.diverged = row.result.diverged;
        row.note = row.result.divergence;
        row.epochs = row.result.best.epoch;
        row.dev_ppl = row.result.best.best_dev_ppl;
        row.mean_pi_variance =
            evaluate_split(configs[i], row.result.best.model, corpus.dev).mean_pi_variance;
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int workers = std::clamp(jobs, 1, static_cast<int>(rows.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (rows[x].diverged != rows[y].diverged) return !rows[x].diverged;
    return rows[x].dev_ppl < rows[y].dev_ppl;
  });
  std::vector<GridRow> ranked;
  ranked.reserve(rows.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    ranked.push_back(std::move(rows[order[r]]));
    ranked.back().rank = static_cast<int>(r + 1);
  }
  return ranked;
}

std::string grid_csv(const std::vector<GridRow>& rows) {
  std::ostringstream out;
  out << "rank";
  if (!rows.empty()) {
    for (const auto& [key, value] : rows.front().assignment) out << ',' << key;
  }
  out << ",dev_ppl,mean_pi_variance,epochs,status\n";
  for (const auto& row : rows) {
    out << row.rank;
    for (const auto& [key, value] : row.assignment) out << ',' << value;
    out << ',' << format_double(row.dev_ppl) << ',' << format_double(row.mean_pi_variance) << ','
        << row.epochs << ',' << (row.diverged ? "diverged" : "ok") << '\n';
  }
  return out.str();
}

}  // namespace ksoftmax
