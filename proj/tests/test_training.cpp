#include <doctest.h>

#include <bit>
#include <cmath>
#include <filesystem>

#include "ksoftmax/checkpoint.hpp"
#include "ksoftmax/error.hpp"
#include "ksoftmax/eval.hpp"
#include "ksoftmax/experiment.hpp"
#include "ksoftmax/training.hpp"

using namespace ksoftmax;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_experiment(const std::string& kernels = "lin") {
  ExperimentConfig e;
  e.corpus.synthetic = true;
  e.corpus.synth_vocab = 40;
  e.corpus.synth_tokens = 3000;
  e.kernels = kernels;
  e.d = 8;
  e.n = 2;
  e.batch_size = 32;
  e.max_epochs = 3;
  e.patience = 10;
  e.seed = 5;
  return e;
}

const PreparedCorpus& small_corpus() {
  static const PreparedCorpus c = prepare_corpus(small_experiment().corpus);
  return c;
}

TrainConfig small_config(const std::string& kernels = "lin") {
  return small_experiment(kernels).resolve(small_corpus().vocab.size());
}

bool bit_equal(const Model& a, const Model& b) {
  const auto ta = tensors(a), tb = tensors(b);
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].name != tb[i].name || ta[i].rows != tb[i].rows || ta[i].cols != tb[i].cols) return false;
    for (Eigen::Index j = 0; j < ta[i].size(); ++j) {
      if (std::bit_cast<std::uint64_t>(ta[i].data[j]) != std::bit_cast<std::uint64_t>(tb[i].data[j])) return false;
    }
  }
  return true;
}

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "ksoftmax_test_training";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters and dev perplexity unchanged") {
  for (auto opt : {OptimizerKind::adam, OptimizerKind::sgd}) {
    TrainConfig cfg = small_config("lin,hpb");
    cfg.learning_rate = 0.0;
    cfg.optimizer = opt;
    cfg.patience = 100;
    const TrainState init = init_state(cfg);
    const TrainResult r = train(cfg, small_corpus().split);
    CHECK(bit_equal(r.last.model, init.model));
    REQUIRE(r.metrics.size() == 4);
    for (const auto& m : r.metrics) CHECK(m.dev_ppl == r.metrics.front().dev_ppl);
  }
}

TEST_CASE("early stopping after patience epochs without improvement") {
  TrainConfig cfg = small_config();
  cfg.learning_rate = 0.0;
  cfg.max_epochs = 10;
  cfg.patience = 2;
  const TrainResult r = train(cfg, small_corpus().split);
  CHECK(r.metrics.size() == 3);
  CHECK(r.best.best_epoch == 0);
}

TEST_CASE("training reduces dev perplexity below the unigram baseline") {
  TrainConfig cfg = small_config();
  cfg.max_epochs = 8;
  cfg.learning_rate = 3e-3;
  const TrainResult r = train(cfg, small_corpus().split);
  CHECK_FALSE(r.diverged);
  const double unigram = unigram_perplexity(
      unigram_log_probs(small_corpus().split.train, small_corpus().vocab.size()), small_corpus().split.dev);
  CHECK(r.best.best_dev_ppl < r.metrics.front().dev_ppl);
  CHECK(r.best.best_dev_ppl < unigram);
  CHECK(r.best.best_dev_ppl == doctest::Approx(perplexity(cfg, r.best.model, small_corpus().split.dev)));
}

TEST_CASE("identical seeds give identical metric traces") {
  const TrainConfig cfg = small_config("lin,pow,rbf");
  const auto a = metrics_csv(train(cfg, small_corpus().split).metrics, 3);
  const auto b = metrics_csv(train(cfg, small_corpus().split).metrics, 3);
  CHECK(a == b);
  CHECK(a.rfind("epoch,train_loss,dev_ppl,pi_mean_1,pi_mean_2,pi_mean_3,reg_term\n", 0) == 0);
  TrainConfig other = cfg;
  other.seed = 6;
  CHECK(metrics_csv(train(other, small_corpus().split).metrics, 3) != a);
}

TEST_CASE("gradient clipping bounds the global norm") {
  const TrainConfig cfg = small_config("lin,ssg");
  TrainState s = init_state(cfg);
  BatchStream stream(small_corpus().split.train, cfg.n, cfg.batch_size, 1, 1);
  Batch batch;
  stream.next(batch);
  const Model g = gradients(cfg, s.model, batch, forward(cfg, s.model, batch));
  const double norm = global_norm(g);
  REQUIRE(norm > 0.0);

  Model clipped = g;
  CHECK(clip_gradients(clipped, norm / 10) == norm);
  CHECK(std::abs(global_norm(clipped) - norm / 10) <= 1e-12);
  CHECK(global_norm(clipped) <= norm / 10 + 1e-12);

  Model untouched = g;
  clip_gradients(untouched, norm * 2);
  CHECK(bit_equal(untouched, g));
}

TEST_CASE("checkpoint round trip then one step equals the uninterrupted step") {
  const TrainConfig cfg = small_config("lin,mog,hpb");
  TrainState s = init_state(cfg);
  BatchStream stream(small_corpus().split.train, cfg.n, cfg.batch_size, cfg.seed, 1);
  Batch batch;
  for (int i = 0; i < 3; ++i) {
    stream.next(batch);
    train_step(cfg, s, batch);
  }
  s.epoch = 1;
  s.best_dev_ppl = 12.345678901234567;
  s.best_epoch = 1;
  s.epochs_since_best = 0;

  const fs::path path = temp_dir() / "ck";
  save_checkpoint(path, s, "[train]\nlr = 0.001\n");
  const Checkpoint loaded = load_checkpoint(path);
  CHECK(bit_equal(loaded.state.model, s.model));
  CHECK(bit_equal(loaded.state.adam_m, s.adam_m));
  CHECK(bit_equal(loaded.state.adam_v, s.adam_v));
  CHECK(loaded.state.step == s.step);
  CHECK(loaded.state.best_dev_ppl == s.best_dev_ppl);
  CHECK(loaded.state.rng_state == s.rng_state);
  CHECK(loaded.config_text == "[train]\nlr = 0.001\n");

  stream.next(batch);
  TrainState resumed = loaded.state;
  train_step(cfg, s, batch);
  train_step(cfg, resumed, batch);
  CHECK(bit_equal(resumed.model, s.model));
  CHECK(bit_equal(resumed.adam_v, s.adam_v));
}

TEST_CASE("checkpoint errors") {
  try {
    load_checkpoint(temp_dir() / "does-not-exist");
    FAIL("expected Io");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::Io);
  }
  const TrainState s = init_state(small_config());
  const fs::path path = temp_dir() / "truncated";
  save_checkpoint(path, s, "");
  fs::resize_file(path, fs::file_size(path) - 8);
  CHECK_THROWS_AS(load_checkpoint(path), Error);
}

TEST_CASE("resumed training continues the uninterrupted run") {
  TrainConfig cfg = small_config("lin,log");
  cfg.max_epochs = 4;
  const TrainResult full = train(cfg, small_corpus().split);

  cfg.max_epochs = 2;
  const TrainResult first = train(cfg, small_corpus().split);
  const fs::path path = temp_dir() / "half";
  save_checkpoint(path, first.last, "");
  const Checkpoint ck = load_checkpoint(path);
  cfg.max_epochs = 4;
  TrainOptions opts;
  opts.resume = &ck.state;
  const TrainResult second = train(cfg, small_corpus().split, opts);

  std::vector<EpochMetrics> joined = first.metrics;
  joined.insert(joined.end(), second.metrics.begin(), second.metrics.end());
  CHECK(metrics_csv(joined, 2) == metrics_csv(full.metrics, 2));
  CHECK(bit_equal(second.last.model, full.last.model));
}

TEST_CASE("divergence is reported and the last finite state kept") {
  TrainConfig cfg = small_config("pol:p=3");
  cfg.learning_rate = 1e6;
  cfg.clip_norm = 1e300;
  cfg.max_epochs = 3;
  const TrainResult r = train(cfg, small_corpus().split);
  CHECK(r.diverged);
  CHECK(r.divergence.find("step") != std::string::npos);
  CHECK(all_finite(r.last.model));
  CHECK(r.divergence_step > 0);
}

TEST_CASE("grid search: counts, ranking and singleton equivalence") {
  ExperimentConfig base = small_experiment("lin,pow");
  base.max_epochs = 2;
  const auto& c = small_corpus();

  const auto rows = grid_search(base, {{"train.rho", {"0.01", "1"}}, {"train.lr", {"0.001", "0.003"}}},
                                c.split, c.vocab.size(), 1, 2);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].rank == static_cast<int>(i + 1));
    if (i > 0) CHECK(rows[i - 1].dev_ppl <= rows[i].dev_ppl);
  }
  const std::string csv = grid_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(csv.rfind("rank,train.rho,train.lr,dev_ppl,mean_pi_variance,epochs,status\n", 0) == 0);

  const auto single = grid_search(base, {{"train.rho", {"0.1"}}}, c.split, c.vocab.size(), 1);
  REQUIRE(single.size() == 1);
  const TrainResult direct = train(base.resolve(c.vocab.size()), c.split);
  CHECK(metrics_csv(single[0].result.metrics, 2) == metrics_csv(direct.metrics, 2));
  CHECK(single[0].dev_ppl == direct.best.best_dev_ppl);

  CHECK_THROWS_AS(grid_search(base, {}, c.split, c.vocab.size(), 1), Error);
  CHECK_THROWS_AS(grid_search(base, {{"corpus.max_vocab", {"10"}}}, c.split, c.vocab.size(), 1), Error);
  CHECK_THROWS_AS(grid_search(base, {{"train.rho", {}}}, c.split, c.vocab.size(), 1), Error);
}

TEST_CASE("grid search records diverged points without failing") {
  ExperimentConfig base = small_experiment("pol:p=3");
  base.max_epochs = 2;
  base.clip_norm = 1e300;
  const auto& c = small_corpus();
  const auto rows = grid_search(base, {{"train.lr", {"1e6", "0.001"}}}, c.split, c.vocab.size(), 1);
  REQUIRE(rows.size() == 2);
  CHECK_FALSE(rows[0].diverged);
  CHECK(rows[1].diverged);
  CHECK(grid_csv(rows).find("diverged") != std::string::npos);
}

TEST_CASE("config: every key round-trips through text") {
  ExperimentConfig e = small_experiment("2*lin,pow:p=1.5");
  e.hyper.gamma = 0.25;
  const ExperimentConfig back = ExperimentConfig::parse(e.to_text());
  for (const auto& key : ExperimentConfig::keys()) CHECK(back.get(key) == e.get(key));
  CHECK(back.to_text() == e.to_text());
}

TEST_CASE("config: errors name the line or key") {
  try {
    ExperimentConfig::parse("[train]\nlr = 0.1\nbogus = 3\n", "cfg.ini");
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidConfig);
    CHECK(std::string(e.what()).find("cfg.ini:3") != std::string::npos);
  }
  try {
    ExperimentConfig::parse("[model]\nd = -4x\n", "x.ini");
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("x.ini:2") != std::string::npos);
    CHECK(std::string(e.what()).find("model.d") != std::string::npos);
  }
  ExperimentConfig e;
  CHECK_THROWS_AS(e.set("train.nope", "1"), Error);
  CHECK_THROWS_AS(e.set("train.optimizer", "rmsprop"), Error);
  e.set("train.patience", "0");
  CHECK_THROWS_AS(e.resolve(10), Error);
}

TEST_CASE("config: kernel lists and scaled defaults") {
  KernelHyper hyper;
  const auto specs = parse_kernel_list("2*lin,pow:p=1.5,rbf", hyper, 16);
  REQUIRE(specs.size() == 4);
  CHECK(specs[0].kind == KernelKind::lin);
  CHECK(specs[1].kind == KernelKind::lin);
  CHECK(specs[2].p == 1.5);
  CHECK(specs[3].gamma == 1.0 / 16);
  CHECK_THROWS_AS(parse_kernel_list("lin,foo", hyper, 4), Error);

  ExperimentConfig e;
  CHECK(e.resolve(10, 9).seed == 9);
  e.seed = 3;
  const TrainConfig t = e.resolve(10, 9);
  CHECK(t.seed == 3);
  CHECK(t.d_e == t.d());
  CHECK(t.mixture.rho == 0.1);
  CHECK(t.patience == 5);
  CHECK(t.learning_rate == 1e-3);
  CHECK(t.clip_norm == 5.0);
}
