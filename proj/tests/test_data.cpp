#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "ksoftmax/data.hpp"
#include "ksoftmax/error.hpp"
#include "ksoftmax/rng.hpp"

using namespace ksoftmax;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ksoftmax_test_data";
  fs::create_directories(dir);
  return dir / name;
}

Corpus random_corpus(Rng& rng, int sentences, int V) {
  Corpus c;
  for (int s = 0; s < sentences; ++s) {
    std::vector<int> ids(1 + rng.below(12));
    for (int& id : ids) id = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(V - 2)));
    c.sentences.push_back(ids);
  }
  return c;
}

}  // namespace

TEST_CASE("vocabulary: frequency order with reserved ids") {
  const Vocabulary v = Vocabulary::build({"a a b"}, 4);
  CHECK(v.size() == 4);
  CHECK(v.id("<s>") == kBosId);
  CHECK(v.id("<unk>") == kUnkId);
  CHECK(v.id("a") == 2);
  CHECK(v.id("b") == 3);
  CHECK(v.id("zzz") == kUnkId);
  CHECK_FALSE(v.contains("zzz"));
}

TEST_CASE("vocabulary: ties break lexicographically") {
  const Vocabulary v = Vocabulary::build({"b a", "c"}, 10);
  CHECK(v.id("a") == 2);
  CHECK(v.id("b") == 3);
  CHECK(v.id("c") == 4);
}

TEST_CASE("vocabulary: size cap and minimum count") {
  const Vocabulary capped = Vocabulary::build({"a a a b b c"}, 4);
  CHECK(capped.size() == 4);
  CHECK(capped.id("c") == kUnkId);
  CHECK(capped.encode("c a x") == std::vector<int>{kUnkId, 2, kUnkId});

  const Vocabulary counted = Vocabulary::build({"a a a b b c"}, 100, 2);
  CHECK(counted.size() == 4);
  CHECK_FALSE(counted.contains("c"));
}

TEST_CASE("vocabulary: lowercasing is on by default") {
  const Vocabulary v = Vocabulary::build({"The the THE cat"}, 10);
  CHECK(v.size() == 4);
  CHECK(v.id("the") == 2);
  CHECK(v.id("The") == 2);
  const Vocabulary cased = Vocabulary::build({"The the cat"}, 10, 1, false);
  CHECK(cased.size() == 5);
  CHECK(tokenize("  A\tb  c ", true) == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("vocabulary: round trips") {
  const Vocabulary v = Vocabulary::build({"x y z y", "w z"}, 100);
  for (int id = 2; id < v.size(); ++id) CHECK(v.id(v.token(id)) == id);
  CHECK(v.token(kBosId) == "<s>");
  CHECK_THROWS_AS(v.token(v.size()), Error);

  const fs::path path = temp_path("vocab.txt");
  v.save(path);
  std::ifstream f(path);
  std::string first;
  std::getline(f, first);
  CHECK(first == v.token(2));
  const Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded.size() == v.size());
  for (int id = 0; id < v.size(); ++id) CHECK(loaded.token(id) == v.token(id));
}

TEST_CASE("vocabulary: empty corpus") {
  try {
    Vocabulary::build({"", "   "}, 10);
    FAIL("expected EmptyCorpus");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::EmptyCorpus);
  }
}

TEST_CASE("read_lines skips blank lines") {
  const fs::path path = temp_path("lines.txt");
  {
    std::ofstream f(path);
    f << "one two\n\n  \nthree\n";
  }
  CHECK(read_lines(path) == std::vector<std::string>{"one two", "three"});
  try {
    read_lines(temp_path("missing.txt"));
    FAIL("expected Io");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::Io);
  }
}

TEST_CASE("windows are left-padded with BOS") {
  int w[2];
  fill_window({5}, 0, 2, w);
  CHECK(w[0] == kBosId);
  CHECK(w[1] == kBosId);
  int w3[3];
  fill_window({5, 6, 7, 8}, 2, 3, w3);
  CHECK(w3[0] == kBosId);
  CHECK(w3[1] == 5);
  CHECK(w3[2] == 6);

  Corpus c;
  c.sentences = {{5}};
  BatchStream s(c, 2, 4, 1, 1);
  Batch b;
  REQUIRE(s.next(b));
  CHECK(b.targets == std::vector<int>{5});
  CHECK(b.windows(0, 0) == kBosId);
  CHECK(b.windows(0, 1) == kBosId);
  CHECK_FALSE(s.next(b));
}

TEST_CASE("batch stream: every position is a target exactly once per epoch") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Corpus c = random_corpus(rng, 1 + static_cast<int>(rng.below(40)), 30);
    const int n = 1 + static_cast<int>(rng.below(4));
    const int bs = 1 + static_cast<int>(rng.below(17));
    BatchStream stream(c, n, bs, 11, trial);
    CHECK(stream.num_targets() == c.num_tokens());

    // Count (window, target) pairs against the expected multiset.
    std::map<std::vector<int>, int> expected, seen;
    for (const auto& s : c.sentences) {
      for (std::size_t pos = 0; pos < s.size(); ++pos) {
        std::vector<int> key(static_cast<std::size_t>(n) + 1);
        fill_window(s, pos, n, key.data());
        key.back() = s[pos];
        ++expected[key];
      }
    }
    Batch b;
    std::size_t batches = 0, total = 0;
    while (stream.next(b)) {
      ++batches;
      CHECK(b.windows.rows() == static_cast<Eigen::Index>(b.targets.size()));
      CHECK(b.targets.size() <= static_cast<std::size_t>(bs));
      for (std::size_t r = 0; r < b.targets.size(); ++r) {
        std::vector<int> key;
        for (int j = 0; j < n; ++j) key.push_back(b.windows(static_cast<Eigen::Index>(r), j));
        key.push_back(b.targets[r]);
        ++seen[key];
      }
      total += b.targets.size();
    }
    CHECK(total == c.num_tokens());
    CHECK(batches == stream.num_batches());
    CHECK(seen == expected);
  }
}

TEST_CASE("batch stream: order is a pure function of seed and epoch") {
  Rng rng(8);
  const Corpus c = random_corpus(rng, 50, 40);
  auto targets = [&](std::uint64_t seed, int epoch) {
    BatchStream s(c, 3, 8, seed, epoch);
    Batch b;
    std::vector<int> out;
    while (s.next(b)) out.insert(out.end(), b.targets.begin(), b.targets.end());
    return out;
  };
  CHECK(targets(3, 1) == targets(3, 1));
  CHECK(targets(3, 1) != targets(3, 2));
  CHECK(targets(3, 1) != targets(4, 1));

  BatchStream full(c, 3, 8, 3, 1), skipped(c, 3, 8, 3, 1);
  Batch a, b;
  full.next(a);
  full.next(a);
  skipped.skip(1);
  skipped.next(b);
  CHECK(a.targets == b.targets);
}

TEST_CASE("split: disjoint, complete and reproducible") {
  std::vector<std::string> lines;
  for (int i = 0; i < 103; ++i) lines.push_back("line " + std::to_string(i));
  const LineSplit s = split_lines(lines, 0.8, 0.1, 42);
  CHECK(s.train.size() == 82);
  CHECK(s.dev.size() == 10);
  CHECK(s.test.size() == 11);
  std::multiset<std::string> all(s.train.begin(), s.train.end());
  all.insert(s.dev.begin(), s.dev.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all == std::multiset<std::string>(lines.begin(), lines.end()));

  const LineSplit again = split_lines(lines, 0.8, 0.1, 42);
  CHECK(again.train == s.train);
  CHECK(again.dev == s.dev);
  CHECK(again.test == s.test);
  CHECK(split_lines(lines, 0.8, 0.1, 43).train != s.train);

  CHECK_THROWS_AS(split_lines(lines, 0.9, 0.2, 1), Error);
  CHECK_THROWS_AS(split_lines({}, 0.8, 0.1, 1), Error);

  const Vocabulary v = Vocabulary::build(s.train, 1000);
  const CorpusSplit enc = encode_split(s, v);
  CHECK(enc.train.sentences.size() == 82);
  CHECK(enc.train.num_tokens() == 164);
}

TEST_CASE("synthetic Zipf corpus") {
  ZipfCorpusOptions o;
  o.tokens = 20000;
  const auto lines = generate_zipf_corpus(o);
  std::size_t tokens = 0;
  std::map<std::string, int> counts;
  for (const auto& l : lines) {
    for (const auto& t : tokenize(l, true)) {
      ++tokens;
      ++counts[t];
    }
  }
  CHECK(tokens == 20000);
  CHECK(counts.size() <= 198);
  CHECK(generate_zipf_corpus(o) == lines);
  o.seed = 2;
  CHECK(generate_zipf_corpus(o) != lines);
  // The most frequent type dominates the tail.
  CHECK(counts["w0"] > 5 * counts["w50"]);

  ZipfCorpusOptions bad;
  bad.vocab = 2;
  CHECK_THROWS_AS(generate_zipf_corpus(bad), Error);
}
