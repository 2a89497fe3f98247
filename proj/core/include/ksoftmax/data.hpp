#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ksoftmax/encoder.hpp"

namespace ksoftmax {

inline constexpr int kBosId = 0;
inline constexpr int kUnkId = 1;
inline constexpr std::string_view kBosToken = "<s>";
inline constexpr std::string_view kUnkToken = "<unk>";

/// Whitespace split, optionally lowercased (ASCII).
std::vector<std::string> tokenize(std::string_view line, bool lowercase);

class Vocabulary {
 public:
  /// Keeps the max_size - 2 most frequent tokens seen at least min_count
  /// times; ties go to the lexicographically smaller token. Throws EmptyCorpus
  /// when the lines hold no tokens.
  static Vocabulary build(const std::vector<std::string>& lines, int max_size, int min_count = 1,
                          bool lowercase = true);

  /// `words` are the non-reserved tokens in id order (first one gets id 2).
  static Vocabulary from_words(std::vector<std::string> words, bool lowercase = true);

  /// One token per line; line i holds id i + 2.
  static Vocabulary load(const std::filesystem::path& path, bool lowercase = true);
  void save(const std::filesystem::path& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  bool lowercase() const { return lowercase_; }
  bool contains(std::string_view token) const;
  /// UNK for out-of-vocabulary tokens.
  int id(std::string_view token) const;
  /// Throws TokenOutOfRange.
  const std::string& token(int id) const;

  std::vector<int> encode(std::string_view line) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  bool lowercase_ = true;
};

/// Non-empty lines of a UTF-8 text file. Throws Io.
std::vector<std::string> read_lines(const std::filesystem::path& path);

struct Corpus {
  std::vector<std::vector<int>> sentences;

  std::size_t num_tokens() const;
};

struct LineSplit {
  std::vector<std::string> train;
  std::vector<std::string> dev;
  std::vector<std::string> test;
};

/// Shuffles line indices with `seed` and cuts train/dev/test by fraction;
/// test takes the remainder. Every line lands in exactly one split.
LineSplit split_lines(const std::vector<std::string>& lines, double train_frac, double dev_frac,
                      std::uint64_t seed);

struct CorpusSplit {
  Corpus train;
  Corpus dev;
  Corpus test;
};

CorpusSplit encode_split(const LineSplit& lines, const Vocabulary& vocab);

struct Batch {
  Windows windows;           // B x n
  std::vector<int> targets;  // B
};

/// Context for position `pos`: the previous n ids, BOS-padded on the left.
void fill_window(const std::vector<int>& sentence, std::size_t pos, int n, int* out);

/// One epoch of (window, target) batches. Every token position of the corpus
/// is a target exactly once; the order is a pure function of (seed, epoch).
class BatchStream {
 public:
  BatchStream(const Corpus& corpus, int n, int batch_size, std::uint64_t seed, int epoch,
              bool shuffle = true);

  bool next(Batch& batch);
  std::size_t num_batches() const;
  std::size_t num_targets() const { return positions_.size(); }
  void skip(std::size_t batches);

 private:
  struct Position {
    std::uint32_t sentence;
    std::uint32_t offset;
  };
  const Corpus* corpus_;
  int n_;
  int batch_size_;
  std::vector<Position> positions_;
  std::size_t cursor_ = 0;
};

/// Options for the synthetic Zipf corpus.
///
/// `vocab` counts the two reserved ids, so the corpus uses vocab - 2 word
/// types (w0, w1, ...). The first token of a sentence is drawn from a global
/// Zipf(s) law over the types. Each later token is, with probability
/// `context_weight`, a Zipf(s) draw pushed through a fixed random permutation
/// owned by the previous token; otherwise it is another global Zipf draw.
/// Sentence lengths are uniform in [min_len, max_len]; the last sentence is
/// cut so the corpus holds exactly `tokens` tokens.
struct ZipfCorpusOptions {
  double zipf_s = 1.0;
  int vocab = 200;
  std::size_t tokens = 100000;
  std::uint64_t seed = 1;
  double context_weight = 0.5;
  int min_len = 8;
  int max_len = 24;
};

std::vector<std::string> generate_zipf_corpus(const ZipfCorpusOptions& options);

}  // namespace ksoftmax
