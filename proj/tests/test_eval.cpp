#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ksoftmax/error.hpp"
#include "ksoftmax/eval.hpp"
#include "oracles.hpp"

using namespace ksoftmax;

namespace {

TrainConfig tiny_config(std::vector<KernelSpec> components, int V, int d = 4, int n = 2) {
  TrainConfig cfg;
  cfg.mixture.components = std::move(components);
  cfg.mixture.d = d;
  cfg.mixture.V = V;
  cfg.mixture.rho = 0.0;
  cfg.n = n;
  cfg.d_e = d;
  return cfg;
}

Model make_model(const TrainConfig& cfg, std::uint64_t seed = 3) {
  Rng rng{seed, 0u};
  return init_model(cfg, rng);
}

Corpus random_corpus(int V, int sentences, std::uint64_t seed) {
  Rng rng{seed, 7u};
  Corpus c;
  for (int s = 0; s < sentences; ++s) {
    std::vector<int> sent(1 + rng.below(12));
    for (auto& t : sent) t = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(V - 2)));
    c.sentences.push_back(std::move(sent));
  }
  return c;
}

}  // namespace

TEST_CASE("a uniform model has perplexity V") {
  const TrainConfig cfg = tiny_config({KernelSpec{}}, 100);
  Model model = make_model(cfg);
  model.output.W.setZero();
  const Corpus c = random_corpus(100, 40, 1);
  CHECK(std::abs(perplexity(cfg, model, c) - 100.0) < 1e-9);
}

TEST_CASE("a model that always predicts the target has perplexity 1") {
  const TrainConfig cfg = tiny_config({KernelSpec{}}, 10);
  Model model = make_model(cfg);
  model.encoder.E.setZero();
  model.encoder.F.setZero();
  model.encoder.bias.setOnes();
  model.output.W.setZero();
  model.output.W.col(4).setConstant(60.0);
  Corpus c;
  c.sentences = {{4, 4, 4}, {4}, {4, 4, 4, 4, 4, 4}};
  CHECK(std::abs(perplexity(cfg, model, c) - 1.0) < 1e-9);
}

TEST_CASE("perplexity is exp of the mean cross-entropy") {
  const TrainConfig cfg = tiny_config({KernelSpec{}, KernelSpec::with_defaults(KernelKind::rbf, 4)}, 12);
  const Model model = make_model(cfg);
  const Corpus c = random_corpus(12, 15, 4);

  BatchStream stream(c, cfg.n, 1 << 20, 0, 0, false);
  Batch batch;
  REQUIRE(stream.next(batch));
  const BatchLoss full = forward(cfg, model, batch);
  const SplitStats stats = evaluate_split(cfg, model, c, 7);
  CHECK(stats.targets == c.num_tokens());
  CHECK(stats.cross_entropy == doctest::Approx(full.output.cross_entropy).epsilon(1e-12));
  CHECK(stats.perplexity == doctest::Approx(std::exp(full.output.cross_entropy)).epsilon(1e-12));

  std::vector<double> log_probs;
  for (std::size_t b = 0; b < batch.targets.size(); ++b) {
    log_probs.push_back(full.output.cache.log_posterior(static_cast<Eigen::Index>(b), batch.targets[b]));
  }
  CHECK(perplexity_from_log_probs(log_probs) == doctest::Approx(stats.perplexity).epsilon(1e-12));
}

TEST_CASE("unigram baseline matches a hand computation") {
  Corpus train;
  train.sentences = {{2, 2, 3}, {4, 2}};
  Corpus test;
  test.sentences = {{2, 3, 5}};
  const int V = 6;
  const Vector lp = unigram_log_probs(train, V);
  CHECK(std::isinf(lp[0]));
  // counts over ids 1..5: UNK 0, 2:3, 3:1, 4:1, 5:0; N = 5, add-1 over 5 ids.
  CHECK(lp[1] == doctest::Approx(std::log(1.0 / 10)));
  CHECK(lp[2] == doctest::Approx(std::log(4.0 / 10)));
  double total = 0.0;
  for (int v = 1; v < V; ++v) total += std::exp(lp[v]);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  const double expected = std::exp(-(std::log(0.4) + std::log(0.2) + std::log(0.1)) / 3.0);
  CHECK(std::abs(unigram_perplexity(lp, test) - expected) < 1e-6);
}

TEST_CASE("curves agree with the kernel functions") {
  for (const char* name : {"log", "pow", "rbf", "wav"}) {
    const KernelSpec spec = KernelSpec::with_defaults(parse_kernel_kind(name), 1);
    const KernelCurve curve = kernel_curve(spec, 0.0, 10.0, 200);
    REQUIRE(curve.points.size() == 200);
    CHECK(curve.axis == CurveAxis::squared_distance);
    for (const auto& pt : curve.points) {
      Vector w(1), h(1);
      w << std::sqrt(pt.x);
      h << 0.0;
      CHECK(std::abs(pt.value - score(spec, w, h).value) <= 1e-12);
      if (pt.x > 0.5) {
        const double step = 1e-6;
        const double fd = (radial_profile(spec, pt.x + step).value - radial_profile(spec, pt.x - step).value) / (2 * step);
        CHECK(std::abs(fd - pt.slope) <= 1e-6 * std::max(1.0, std::abs(pt.slope)));
      }
    }
    double best = -INFINITY;
    for (const auto& pt : curve.points) best = std::max(best, pt.value);
    CHECK(curve.points.front().value == best);
  }
}

TEST_CASE("curve shapes") {
  KernelSpec pw = KernelSpec::with_defaults(KernelKind::pow, 1);
  pw.p = 2.0;
  for (const auto& pt : kernel_curve(pw, 0.0, 10.0, 50).points) CHECK(pt.slope == doctest::Approx(-1.0));

  const KernelSpec rbf = KernelSpec::with_defaults(KernelKind::rbf, 1);
  CHECK(std::abs(kernel_curve(rbf, 0.0, 10.0, 200).points.back().value - std::exp(-10.0)) < 1e-15);

  const KernelSpec hpb = KernelSpec::with_defaults(KernelKind::hpb, 2);
  for (const auto& pt : kernel_curve(hpb, 0.0, 0.9, 30).points) {
    Vector w(2), h = Vector::Zero(2);
    w << std::sqrt(pt.x), 0.0;
    CHECK(pt.value == doctest::Approx(score(hpb, w, h).value).epsilon(1e-12));
  }
  CHECK_THROWS_AS(kernel_curve(hpb, 0.0, 1.0, 10), Error);

  const KernelCurve lin = kernel_curve(KernelSpec{}, -2.0, 2.0, 5);
  CHECK(lin.axis == CurveAxis::dot);
  CHECK(curve_csv(lin).rfind("dot,S,dS_ddot\n", 0) == 0);
  CHECK(curve_csv(kernel_curve(rbf, 0.0, 1.0, 3)).rfind("sq_dist,S,dS_dx\n", 0) == 0);

  try {
    kernel_curve(KernelSpec::with_defaults(KernelKind::mog, 4), 0.0, 1.0, 10);
    FAIL("expected WrongKernelKind");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::WrongKernelKind);
  }
}

TEST_CASE("probe: neighbors, gaps and determinism") {
  const Vocabulary vocab = Vocabulary::from_words({"bank", "river", "money", "shore", "loan"});
  TrainConfig cfg = tiny_config({KernelSpec{}, KernelSpec::with_defaults(KernelKind::rbf, 4)}, vocab.size());
  Model model = make_model(cfg);
  const int bank = vocab.id("bank"), river = vocab.id("river"), shore = vocab.id("shore");
  model.output.W.setZero();
  for (int v = 2; v < vocab.size(); ++v) model.output.W(v % 4, v) = 0.5;
  model.output.W.col(bank) << 0.9, 0.1, 0.0, 0.0;
  model.output.W.col(shore) = model.output.W.col(bank);

  const ProbeReport r = disambiguation_probe(cfg, model, vocab, {"Bank"}, {"the river", "money"}, 3, 4);
  REQUIRE(r.queries.size() == 1);
  const QueryProbe& q = r.queries[0];
  CHECK(q.id == bank);
  REQUIRE(q.neighbors.size() == 3);
  CHECK(q.neighbors[0].id == bank);
  CHECK(q.neighbors[1].id == shore);
  CHECK(q.neighbors[0].similarity == doctest::Approx(0.82));
  REQUIRE(q.contexts.size() == 2);
  for (const auto& c : q.contexts) {
    CHECK(c.window.size() == 2);
    CHECK(c.top.size() == 4);
    double pi = 0.0;
    for (double p : c.pi) pi += p;
    CHECK(pi == doctest::Approx(1.0));
    CHECK(c.posterior_gap[0] == 0.0);
    CHECK(c.posterior_gap[1] == 0.0);
    for (const auto& gaps : c.logit_gap) CHECK(gaps[1] == 0.0);
  }
  CHECK(q.contexts[0].window.back() == river);

  const ProbeReport again = disambiguation_probe(cfg, model, vocab, {"bank"}, {"the river", "money"}, 3, 4);
  CHECK(probe_tsv(again) == probe_tsv(r));
  CHECK(probe_text(again) == probe_text(r));

  try {
    disambiguation_probe(cfg, model, vocab, {"zebra"}, {"x"}, 3);
    FAIL("expected TokenOutOfRange");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TokenOutOfRange);
  }
}

TEST_CASE("probe output formats") {
  const Vocabulary vocab = Vocabulary::from_words({"a", "b", "c"});
  const TrainConfig cfg = tiny_config({KernelSpec{}, KernelSpec::with_defaults(KernelKind::pow, 4)}, vocab.size());
  const Model model = make_model(cfg);
  const ProbeReport r = disambiguation_probe(cfg, model, vocab, {"a"}, {"b c"}, 2, 2);

  std::istringstream tsv(probe_tsv(r));
  std::string line;
  int neighbor = 0, weight = 0, posterior = 0, logit = 0;
  while (std::getline(tsv, line)) {
    const std::string type = line.substr(0, line.find('\t'));
    neighbor += type == "neighbor";
    weight += type == "weight";
    posterior += type == "posterior";
    logit += type == "logit";
  }
  CHECK(neighbor == 2);
  CHECK(weight == 2);
  CHECK(posterior == 2);
  CHECK(logit == 4);

  const std::string text = probe_text(r);
  CHECK(text.find("query a") != std::string::npos);
  CHECK(text.find("context \"b c\"") != std::string::npos);
  CHECK(text.find("lin#1") != std::string::npos);
  CHECK(text.find("pow#2") != std::string::npos);
}
