#include "ksoftmax/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ksoftmax/error.hpp"

namespace ksoftmax {

SplitStats evaluate_split(const TrainConfig& config, const Model& model, const Corpus& corpus,
                          int batch_size) {
  const int K = config.mixture.K();
  SplitStats stats;
  stats.pi_mean.assign(static_cast<std::size_t>(K), 0.0);
  BatchStream stream(corpus, config.n, batch_size, 0, 0, /*shuffle=*/false);
  Batch batch;
  double nll = 0.0;
  double reg = 0.0;
  double var = 0.0;
  while (stream.next(batch)) {
    const BatchLoss fwd = forward(config, model, batch);
    const auto count = static_cast<double>(batch.targets.size());
    nll += fwd.output.cross_entropy * count;
    reg += fwd.output.regularizer * count;
    const Matrix& pi = fwd.output.cache.pi;
    var += mean_weight_variance(pi) * count;
    for (int k = 0; k < K; ++k) stats.pi_mean[static_cast<std::size_t>(k)] += pi.col(k).sum();
    stats.targets += batch.targets.size();
  }
  if (stats.targets == 0) throw Error(Errc::EmptyCorpus, "cannot evaluate an empty split");
  const auto n = static_cast<double>(stats.targets);
  stats.cross_entropy = nll / n;
  stats.perplexity = std::exp(stats.cross_entropy);
  stats.regularizer = reg / n;
  stats.mean_pi_variance = var / n;
  for (auto& p : stats.pi_mean) p /= n;
  return stats;
}

double perplexity(const TrainConfig& config, const Model& model, const Corpus& corpus) {
  return evaluate_split(config, model, corpus).perplexity;
}

double perplexity_from_log_probs(std::span<const double> log_probs) {
  if (log_probs.empty()) throw Error(Errc::EmptyCorpus, "no log-probabilities");
  double sum = 0.0;
  for (double lp : log_probs) sum += lp;
  return std::exp(-sum / static_cast<double>(log_probs.size()));
}

Vector unigram_log_probs(const Corpus& train, int V, double add_count) {
  if (V < 2) throw Error(Errc::InvalidConfig, "V must be at least 2");
  Vector counts = Vector::Zero(V);
  for (const auto& s : train.sentences) {
    for (int id : s) {
      if (id < 0 || id >= V) throw Error(Errc::TokenOutOfRange, "token id outside vocabulary");
      counts[id] += 1.0;
    }
  }
  counts[kBosId] = 0.0;
  const double total = counts.sum() + add_count * (V - 1);
  if (!(total > 0.0)) throw Error(Errc::EmptyCorpus, "no tokens to estimate unigrams from");
  Vector out(V);
  for (int v = 0; v < V; ++v) {
    out[v] = v == kBosId ? -std::numeric_limits<double>::infinity()
                         : std::log((counts[v] + add_count) / total);
  }
  return out;
}

double unigram_perplexity(const Vector& log_probs, const Corpus& corpus) {
  std::vector<double> lps;
  for (const auto& s : corpus.sentences) {
    for (int id : s) lps.push_back(log_probs[id]);
  }
  return perplexity_from_log_probs(lps);
}

KernelCurve kernel_curve(const KernelSpec& spec, double x_min, double x_max, int steps) {
  if (steps < 2) throw Error(Errc::InvalidConfig, "curves need at least 2 steps");
  if (!(x_max > x_min)) throw Error(Errc::InvalidConfig, "curve range must be increasing");
  spec.validate();
  KernelCurve curve;
  curve.spec = spec;
  const bool inner = spec.kind == KernelKind::lin || spec.kind == KernelKind::pol;
  curve.axis = inner ? CurveAxis::dot : CurveAxis::squared_distance;
  if (!inner && x_min < 0.0) throw Error(Errc::InvalidConfig, "squared distances start at 0");
  if (spec.kind == KernelKind::mog) {
    throw Error(Errc::WrongKernelKind, "mog has no one-dimensional profile");
  }
  if (spec.kind == KernelKind::hpb && !(x_max < 1.0)) {
    throw Error(Errc::InvalidConfig, "hpb profile needs squared distances below 1");
  }

  for (int i = 0; i < steps; ++i) {
    const double x = x_min + (x_max - x_min) * i / (steps - 1);
    CurvePoint pt{x, 0.0, 0.0};
    switch (spec.kind) {
      case KernelKind::lin:
        pt.value = x;
        pt.slope = 1.0;
        break;
      case KernelKind::pol: {
        const double base = spec.alpha * x + spec.c;
        pt.value = std::pow(base, spec.p);
        pt.slope = spec.p * spec.alpha * std::pow(base, spec.p - 1.0);
        break;
      }
      case KernelKind::ssg: {
        // d = 1, both variances 1: s = 2.
        pt.value = -0.5 * std::log(2.0 * std::numbers::pi * 2.0) - x / 4.0;
        pt.slope = -0.25;
        break;
      }
      case KernelKind::hpb: {
        // One operand at the center: z = 2x / (1 - x).
        const double z = 2.0 * x / (1.0 - x);
        pt.value = -std::log1p(z + std::sqrt(z * (z + 2.0)));
        pt.slope = x > 0.0 ? -1.0 / std::sqrt(z * (z + 2.0)) * 2.0 / ((1.0 - x) * (1.0 - x)) : 0.0;
        break;
      }
      default: {
        const RadialPoint r = radial_profile(spec, x);
        pt.value = r.value;
        pt.slope = r.slope;
        break;
      }
    }
    curve.points.push_back(pt);
  }
  return curve;
}

std::string curve_csv(const KernelCurve& curve) {
  std::ostringstream out;
  out << (curve.axis == CurveAxis::dot ? "dot,S,dS_ddot\n" : "sq_dist,S,dS_dx\n");
  for (const auto& p : curve.points) {
    out << format_double(p.x) << ',' << format_double(p.value) << ',' << format_double(p.slope)
        << '\n';
  }
  return out.str();
}

ProbeReport disambiguation_probe(const TrainConfig& config, const Model& model,
                                 const Vocabulary& vocab, const std::vector<std::string>& queries,
                                 const std::vector<std::string>& contexts, int top_m,
                                 int top_predictions) {
  if (top_m < 1) throw Error(Errc::InvalidConfig, "top_m must be at least 1");
  const Matrix& W = model.output.W;
  const int V = static_cast<int>(W.cols());
  const int K = config.mixture.K();

  ProbeReport report;
  for (const auto& spec : config.mixture.components) report.kernels.emplace_back(to_string(spec.kind));

  for (const auto& q : queries) {
    const auto parts = tokenize(q, vocab.lowercase());
    const std::string key = parts.empty() ? q : parts.front();
    if (!vocab.contains(key)) throw Error(Errc::TokenOutOfRange, "'" + q + "' is not in the vocabulary");
    QueryProbe qp;
    qp.id = vocab.id(key);
    qp.token = key;
    if (qp.id >= V) throw Error(Errc::TokenOutOfRange, "'" + q + "' has no output embedding");

    const Vector sims = W.transpose() * W.col(qp.id);
    std::vector<int> ids;
    for (int v = 2; v < V; ++v) ids.push_back(v);
    std::stable_sort(ids.begin(), ids.end(), [&](int x, int y) { return sims[x] > sims[y]; });
    ids.resize(std::min<std::size_t>(ids.size(), static_cast<std::size_t>(top_m)));
    for (int id : ids) qp.neighbors.push_back({id, vocab.token(id), sims[id]});

    for (const auto& ctx : contexts) {
      ContextProbe cp;
      cp.context = ctx;
      const std::vector<int> history = vocab.encode(ctx);
      cp.window.resize(static_cast<std::size_t>(config.n));
      fill_window(history, history.size(), config.n, cp.window.data());
      Windows win(1, config.n);
      for (int j = 0; j < config.n; ++j) win(0, j) = cp.window[static_cast<std::size_t>(j)];
      const Matrix H = encode(model.encoder, win);
      const Posterior post = posterior(config.mixture, model.output, H);

      cp.pi.resize(static_cast<std::size_t>(K));
      cp.logits.assign(static_cast<std::size_t>(K), {});
      cp.logit_gap.assign(static_cast<std::size_t>(K), {});
      for (int k = 0; k < K; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        cp.pi[ks] = post.cache.pi(0, k);
        const double query_logit = post.cache.logits[ks](0, qp.id);
        for (const auto& nb : qp.neighbors) {
          const double l = post.cache.logits[ks](0, nb.id);
          cp.logits[ks].push_back(l);
          cp.logit_gap[ks].push_back(query_logit - l);
        }
      }
      const double query_post = post.probs(0, qp.id);
      for (const auto& nb : qp.neighbors) {
        cp.posterior.push_back(post.probs(0, nb.id));
        cp.posterior_gap.push_back(query_post - post.probs(0, nb.id));
      }
      std::vector<int> order(static_cast<std::size_t>(V));
      std::iota(order.begin(), order.end(), 0);
      const auto shown = std::min<std::size_t>(order.size(), static_cast<std::size_t>(std::max(top_predictions, 0)));
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(shown), order.end(),
                        [&](int x, int y) {
                          const double px = post.probs(0, x), py = post.probs(0, y);
                          return px != py ? px > py : x < y;
                        });
      for (std::size_t i = 0; i < shown; ++i) cp.top.emplace_back(vocab.token(order[i]), post.probs(0, order[i]));
      qp.contexts.push_back(std::move(cp));
    }
    report.queries.push_back(std::move(qp));
  }
  return report;
}

std::string probe_text(const ProbeReport& report) {
  std::ostringstream out;
  for (const auto& q : report.queries) {
    out << "query " << q.token << " (id " << q.id << ")\n";
    out << "  neighbors by inner product:\n";
    for (std::size_t r = 0; r < q.neighbors.size(); ++r) {
      out << "    " << r + 1 << ". " << q.neighbors[r].token << "  "
          << format_double(q.neighbors[r].similarity) << '\n';
    }
    for (const auto& c : q.contexts) {
      out << "  context \"" << c.context << "\"\n";
      out << "    mixture weights:";
      for (std::size_t k = 0; k < c.pi.size(); ++k) {
        out << ' ' << report.kernels[k] << '#' << k + 1 << '=' << format_double(c.pi[k]);
      }
      out << '\n';
      out << "    top predictions:";
      for (const auto& [tok, p] : c.top) out << ' ' << tok << '=' << format_double(p);
      out << '\n';
      for (std::size_t j = 0; j < q.neighbors.size(); ++j) {
        out << "    " << q.neighbors[j].token << ": posterior " << format_double(c.posterior[j])
            << " (gap " << format_double(c.posterior_gap[j]) << ")\n";
        for (std::size_t k = 0; k < c.logits.size(); ++k) {
          out << "      " << report.kernels[k] << '#' << k + 1 << " logit "
              << format_double(c.logits[k][j]) << " (gap " << format_double(c.logit_gap[k][j])
              << ")\n";
        }
      }
    }
  }
  return out.str();
}

std::string probe_tsv(const ProbeReport& report) {
  std::ostringstream out;
  for (const auto& q : report.queries) {
    for (std::size_t r = 0; r < q.neighbors.size(); ++r) {
      out << "neighbor\t" << q.token << '\t' << r + 1 << '\t' << q.neighbors[r].token << '\t'
          << format_double(q.neighbors[r].similarity) << '\n';
    }
    for (std::size_t ci = 0; ci < q.contexts.size(); ++ci) {
      const auto& c = q.contexts[ci];
      for (std::size_t k = 0; k < c.pi.size(); ++k) {
        out << "weight\t" << q.token << '\t' << ci + 1 << '\t' << k + 1 << '\t' << report.kernels[k]
            << '\t' << format_double(c.pi[k]) << '\n';
      }
      for (std::size_t j = 0; j < q.neighbors.size(); ++j) {
        out << "posterior\t" << q.token << '\t' << ci + 1 << '\t' << q.neighbors[j].token << '\t'
            << format_double(c.posterior[j]) << '\t' << format_double(c.posterior_gap[j]) << '\n';
        for (std::size_t k = 0; k < c.logits.size(); ++k) {
          out << "logit\t" << q.token << '\t' << ci + 1 << '\t' << q.neighbors[j].token << '\t'
              << k + 1 << '\t' << report.kernels[k] << '\t' << format_double(c.logits[k][j])
              << '\t' << format_double(c.logit_gap[k][j]) << '\n';
        }
      }
    }
  }
  return out.str();
}

}  // namespace ksoftmax
