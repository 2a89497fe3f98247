#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = ksoftmax::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ksoftmax_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path small_config(const fs::path& dir) {
  const fs::path path = dir / "small.ini";
  std::ofstream(path) << "[corpus]\nsynthetic = true\nsynth_vocab = 30\nsynth_tokens = 2000\n"
                         "[model]\nkernels = lin,rbf\nd = 6\nn = 2\n"
                         "[train]\nmax_epochs = 2\nbatch_size = 32\nseed = 4\n";
  return path;
}

}  // namespace

TEST_CASE("train then eval prints one perplexity line") {
  const fs::path dir = fresh_dir("train_eval");
  const Run t = run({"train", "--config", small_config(dir).string(), "--out", (dir / "run").string()});
  REQUIRE(t.code == 0);
  for (const char* f : {"config.ini", "vocab.txt", "train.log", "metrics.csv", "best", "last"}) {
    CHECK(fs::exists(dir / "run" / f));
  }
  CHECK(count_lines(slurp(dir / "run" / "metrics.csv")) == 4);

  const Run e = run({"eval", "--checkpoint", (dir / "run" / "best").string()});
  REQUIRE(e.code == 0);
  CHECK(count_lines(e.out) == 1);
  CHECK(e.out.rfind("test perplexity ", 0) == 0);
  const double ppl = std::stod(e.out.substr(16));
  CHECK(ppl > 1.0);
  CHECK(ppl < 30.0);

  const Run d = run({"eval", "--checkpoint", (dir / "run" / "best").string(), "--split", "dev"});
  CHECK(d.out.rfind("dev perplexity ", 0) == 0);
  CHECK(run({"eval", "--checkpoint", (dir / "run" / "best").string(), "--split", "valid"}).code == 1);
}

TEST_CASE("resume appends to the metrics file") {
  const fs::path dir = fresh_dir("resume");
  REQUIRE(run({"train", "--config", small_config(dir).string(), "--out", (dir / "run").string()}).code == 0);
  const Run r = run({"train", "--resume", (dir / "run" / "last").string(), "--out", (dir / "run").string(),
                     "--train.max_epochs", "3"});
  REQUIRE(r.code == 0);
  const std::string metrics = slurp(dir / "run" / "metrics.csv");
  CHECK(count_lines(metrics) == 5);
  CHECK(metrics.find("\n3,") != std::string::npos);
}

TEST_CASE("repeated runs write identical artifacts") {
  const fs::path dir = fresh_dir("repeat");
  const fs::path cfg = small_config(dir);
  REQUIRE(run({"train", "--config", cfg.string(), "--out", (dir / "a").string()}).code == 0);
  REQUIRE(run({"train", "--config", cfg.string(), "--out", (dir / "b").string()}).code == 0);
  for (const char* f : {"config.ini", "vocab.txt", "metrics.csv", "best", "last"}) {
    CHECK_MESSAGE(slurp(dir / "a" / f) == slurp(dir / "b" / f), f);
  }
  auto without_header = [](std::string log) { return log.substr(log.find('\n')); };
  CHECK(without_header(slurp(dir / "a" / "train.log")) == without_header(slurp(dir / "b" / "train.log")));
}

TEST_CASE("the seed falls back to KSOFTMAX_SEED") {
  const fs::path dir = fresh_dir("seed");
  const fs::path cfg = dir / "noseed.ini";
  std::ofstream(cfg) << "[corpus]\nsynthetic = true\nsynth_vocab = 20\nsynth_tokens = 800\n"
                        "[model]\nd = 4\nn = 2\n[train]\nmax_epochs = 1\n";
  ::setenv("KSOFTMAX_SEED", "77", 1);
  const Run a = run({"train", "--config", cfg.string(), "--out", (dir / "a").string()});
  ::unsetenv("KSOFTMAX_SEED");
  REQUIRE(a.code == 0);
  CHECK(slurp(dir / "a" / "config.ini").find("seed = 77") != std::string::npos);

  REQUIRE(run({"train", "--config", cfg.string(), "--out", (dir / "b").string()}).code == 0);
  CHECK(slurp(dir / "b" / "config.ini").find("seed = 1\n") != std::string::npos);

  ::setenv("KSOFTMAX_SEED", "abc", 1);
  CHECK(run({"train", "--config", cfg.string(), "--out", (dir / "c").string()}).code == 1);
  ::unsetenv("KSOFTMAX_SEED");
}

TEST_CASE("validation failures exit 1, divergence exits 2") {
  const fs::path dir = fresh_dir("codes");
  CHECK(run({"train", "--bogus"}).code == 1);
  CHECK(run({}).code == 1);

  const fs::path bad = dir / "bad.ini";
  std::ofstream(bad) << "[model]\nd = zero\n";
  const Run b = run({"train", "--config", bad.string(), "--out", (dir / "x").string()});
  CHECK(b.code == 1);
  CHECK(b.err.find("bad.ini:2") != std::string::npos);

  const Run d = run({"train", "--config", small_config(dir).string(), "--out", (dir / "div").string(),
                     "--model.kernels", "pol:p=3", "--train.lr", "1e6", "--train.clip_norm", "1e300"});
  CHECK(d.code == 2);
  CHECK(d.err.find("diverged") != std::string::npos);
  CHECK(fs::exists(dir / "div" / "last"));
}

TEST_CASE("gradcheck passes") {
  const Run r = run({"gradcheck", "--kernel", "all", "--dims", "2,5", "--trials", "5", "--pipeline"});
  CHECK(r.code == 0);
  CHECK(r.out.find("all checks passed") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(run({"gradcheck", "--kernel", "nope"}).code == 1);
}

TEST_CASE("curves write one csv per kernel") {
  const fs::path dir = fresh_dir("curves");
  const Run r = run({"curves", "--kernels", "rbf,wav,log,pow:p=1", "--xmin", "0", "--xmax", "10", "--steps", "200",
                     "--out", dir.string()});
  REQUIRE(r.code == 0);
  for (const char* k : {"rbf", "wav", "log", "pow"}) {
    const std::string csv = slurp(dir / (std::string(k) + ".csv"));
    CHECK(count_lines(csv) == 201);
    CHECK(csv.rfind("sq_dist,S,dS_dx\n", 0) == 0);
  }
  CHECK(run({"curves", "--kernels", "mog", "--out", dir.string()}).code == 1);
}

TEST_CASE("grid writes a ranked table") {
  const fs::path dir = fresh_dir("grid");
  const Run r = run({"grid", "--config", small_config(dir).string(), "--out", (dir / "g").string(), "--grid",
                     "train.rho=0.01,1", "--grid", "train.lr=0.001,0.003"});
  REQUIRE(r.code == 0);
  const std::string csv = slurp(dir / "g" / "grid.csv");
  CHECK(count_lines(csv) == 5);
  CHECK(fs::exists(dir / "g" / "point_1" / "best"));
  CHECK(fs::exists(dir / "g" / "point_4" / "metrics.csv"));
}

TEST_CASE("probe and synth") {
  const fs::path dir = fresh_dir("probe");
  REQUIRE(run({"train", "--config", small_config(dir).string(), "--out", (dir / "run").string()}).code == 0);
  const Run p = run({"probe", "--checkpoint", (dir / "run" / "best").string(), "--query", "w0,w1", "--context",
                     "w2 w3", "--top", "3", "--format", "tsv"});
  REQUIRE(p.code == 0);
  CHECK(p.out.rfind("neighbor\tw0\t1\t", 0) == 0);
  CHECK(run({"probe", "--checkpoint", (dir / "run" / "best").string(), "--query", "zzz"}).code == 1);

  const Run s = run({"synth", "--vocab", "12", "--tokens", "500", "--seed", "3", "--out", (dir / "s.txt").string()});
  REQUIRE(s.code == 0);
  std::istringstream text(slurp(dir / "s.txt"));
  std::string word;
  std::size_t tokens = 0;
  while (text >> word) ++tokens;
  CHECK(tokens == 500);
}
