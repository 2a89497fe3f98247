#pragma once

#include <span>
#include <string>
#include <vector>

#include "ksoftmax/model.hpp"

namespace ksoftmax {

struct SplitStats {
  double cross_entropy = 0.0;  // mean -ln p(target), nats
  double perplexity = 0.0;
  double regularizer = 0.0;    // mean per-batch penalty
  std::vector<double> pi_mean;
  double mean_pi_variance = 0.0;
  std::size_t targets = 0;
};

/// Forward-only pass over every target position of `corpus`, in corpus order.
SplitStats evaluate_split(const TrainConfig& config, const Model& model, const Corpus& corpus,
                          int batch_size = 512);

double perplexity(const TrainConfig& config, const Model& model, const Corpus& corpus);

/// exp(-mean(log_probs)).
double perplexity_from_log_probs(std::span<const double> log_probs);

/// Add-`add_count` smoothed unigram log-probabilities over the V - 1
/// predictable ids (BOS is never a target and gets -inf).
Vector unigram_log_probs(const Corpus& train, int V, double add_count = 1.0);
double unigram_perplexity(const Vector& log_probs, const Corpus& corpus);

// Kernel profiles ------------------------------------------------------------

enum class CurveAxis { squared_distance, dot };

struct CurvePoint {
  double x = 0.0;
  double value = 0.0;
  double slope = 0.0;  // dS/dx
};

struct KernelCurve {
  KernelSpec spec;
  CurveAxis axis = CurveAxis::squared_distance;
  std::vector<CurvePoint> points;
};

/// `steps` evenly spaced samples on [x_min, x_max]. Distance kernels use the
/// squared distance; lin and pol use the dot product. ssg uses d = 1 and unit
/// variances; hpb places one operand at the ball's center (needs x_max < 1).
/// mog has no one-dimensional profile and throws WrongKernelKind.
KernelCurve kernel_curve(const KernelSpec& spec, double x_min, double x_max, int steps);

/// Header "sq_dist,S,dS_dx" (or "dot,S,dS_ddot") and one row per sample.
std::string curve_csv(const KernelCurve& curve);

// Disambiguation probe --------------------------------------------------------

struct Neighbor {
  int id = 0;
  std::string token;
  double similarity = 0.0;  // raw inner product of W columns
};

struct ContextProbe {
  std::string context;
  std::vector<int> window;
  std::vector<double> pi;                             // K
  std::vector<std::vector<double>> logits;            // [k][j] over the neighbor list
  std::vector<double> posterior;                      // [j]
  std::vector<std::vector<double>> logit_gap;         // [k][j]: query minus neighbor j
  std::vector<double> posterior_gap;                  // [j]: query minus neighbor j
  std::vector<std::pair<std::string, double>> top;    // highest posterior words overall
};

struct QueryProbe {
  int id = 0;
  std::string token;
  std::vector<Neighbor> neighbors;  // descending similarity; includes the query
  std::vector<ContextProbe> contexts;
};

struct ProbeReport {
  std::vector<std::string> kernels;
  std::vector<QueryProbe> queries;
};

/// For each query: its top_m inner-product neighbors in W, then for each
/// context the per-component logits, mixture weights and posterior over that
/// neighbor set. Throws TokenOutOfRange for a query not in the vocabulary.
ProbeReport disambiguation_probe(const TrainConfig& config, const Model& model,
                                 const Vocabulary& vocab, const std::vector<std::string>& queries,
                                 const std::vector<std::string>& contexts, int top_m,
                                 int top_predictions = 5);

std::string probe_text(const ProbeReport& report);
/// One record per line, tab-separated, first field is the record type.
std::string probe_tsv(const ProbeReport& report);

}  // namespace ksoftmax
