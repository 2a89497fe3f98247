#pragma once

// Experiment configuration: a flat `key = value` file with [section] headers.
// Every key is addressed as "section.key" (e.g. train.lr), which is also the
// name of its command-line flag.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ksoftmax/output_layer.hpp"

namespace ksoftmax {

enum class OptimizerKind { sgd, adam };

struct CorpusConfig {
  std::string path;  // text corpus, one sentence per line
  bool synthetic = false;
  double zipf_s = 1.0;
  int synth_vocab = 200;
  std::size_t synth_tokens = 100000;
  std::uint64_t synth_seed = 1;
  double context_weight = 0.5;
  int max_vocab = 10000;
  int min_count = 1;
  bool lowercase = true;
  double train_frac = 0.8;
  double dev_frac = 0.1;
  std::uint64_t split_seed = 1;  // shuffles lines before splitting
};

/// Hyperparameters shared by every mixture component unless a component
/// overrides them inline (e.g. "pow:p=1.5"). Unset alpha/gamma mean 1/d.
struct KernelHyper {
  double p = 2.0;
  std::optional<double> alpha;
  double c = 1.0;
  std::optional<double> gamma;
  double a = 1.0;
  double b = 1.0;
  int num_gauss = 2;
  bool learn_variances = true;
  bool mog_log_of_sum = false;
};

struct TrainConfig {
  MixtureConfig mixture;  // mixture.V comes from the vocabulary
  int n = 3;
  int d_e = 32;
  int batch_size = 64;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double clip_norm = 5.0;
  int max_epochs = 20;
  int patience = 5;
  std::uint64_t seed = 1;

  int d() const { return mixture.d; }
  void validate() const;
};

struct ExperimentConfig {
  CorpusConfig corpus;
  std::string kernels = "lin";
  KernelHyper hyper;
  int n = 3;
  int d = 32;
  int d_e = 0;  // 0: same as d
  double rho = 0.1;
  VarianceMode variance_mode = VarianceMode::per_datum;
  int batch_size = 64;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double clip_norm = 5.0;
  int max_epochs = 20;
  int patience = 5;
  std::optional<std::uint64_t> seed;

  /// Assigns one "section.key". Throws InvalidConfig naming the key.
  void set(std::string_view key, std::string_view value);
  /// Current value of a key, formatted as it would be written to a file.
  std::string get(std::string_view key) const;

  static const std::vector<std::string>& keys();

  /// Parses the file format; errors name the source and line.
  static ExperimentConfig parse(std::string_view text, std::string_view source = "<config>");
  static ExperimentConfig load(const std::string& path);
  std::string to_text() const;

  /// Builds the kernel list and training settings for vocabulary size V.
  /// `fallback_seed` is used when no seed was configured.
  TrainConfig resolve(int V, std::uint64_t fallback_seed = 1) const;
};

/// "2*lin,pow:p=1.5" -> three specs with the shared defaults applied.
std::vector<KernelSpec> parse_kernel_list(std::string_view text, const KernelHyper& hyper, int d);

std::string_view to_string(OptimizerKind kind);
std::string_view to_string(VarianceMode mode);

/// Round-trippable decimal form of a double.
std::string format_double(double value);

}  // namespace ksoftmax
