#include "ksoftmax/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "ksoftmax/error.hpp"
#include "ksoftmax/rng.hpp"

namespace ksoftmax {

std::vector<std::string> tokenize(std::string_view line, bool lowercase) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) {
      std::string tok(line.substr(i, j - i));
      if (lowercase) {
        std::transform(tok.begin(), tok.end(), tok.begin(),
                       [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      }
      out.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& lines, int max_size, int min_count,
                             bool lowercase) {
  if (max_size < 2) throw Error(Errc::InvalidConfig, "vocabulary max_size must be at least 2");
  std::map<std::string, long> counts;
  for (const auto& line : lines) {
    for (auto& tok : tokenize(line, lowercase)) ++counts[tok];
  }
  if (counts.empty()) throw Error(Errc::EmptyCorpus, "no tokens to build a vocabulary from");

  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  // counts is ordered by token, so a stable sort by count keeps the
  // lexicographic tie-break.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& x, const auto& y) { return x.second > y.second; });
  std::vector<std::string> words;
  for (const auto& [tok, count] : ranked) {
    if (static_cast<int>(words.size()) >= max_size - 2) break;
    if (count < min_count) break;
    if (tok == kBosToken || tok == kUnkToken) continue;
    words.push_back(tok);
  }
  return from_words(std::move(words), lowercase);
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words, bool lowercase) {
  Vocabulary v;
  v.lowercase_ = lowercase;
  v.tokens_.emplace_back(kBosToken);
  v.tokens_.emplace_back(kUnkToken);
  for (auto& w : words) v.tokens_.push_back(std::move(w));
  for (int i = 0; i < v.size(); ++i) {
    if (!v.ids_.emplace(v.tokens_[static_cast<std::size_t>(i)], i).second) {
      throw Error(Errc::InvalidConfig, "duplicate vocabulary token '" +
                                           v.tokens_[static_cast<std::size_t>(i)] + "'");
    }
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path, bool lowercase) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open vocabulary " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    words.push_back(line);
  }
  return from_words(std::move(words), lowercase);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write vocabulary " + path.string());
  for (std::size_t i = 2; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

namespace {

std::string lookup_key(std::string_view token, bool lowercase) {
  std::string key(token);
  if (lowercase) {
    std::transform(key.begin(), key.end(), key.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  }
  return key;
}

}  // namespace

bool Vocabulary::contains(std::string_view token) const {
  return ids_.find(lookup_key(token, lowercase_)) != ids_.end();
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(lookup_key(token, lowercase_));
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw Error(Errc::TokenOutOfRange, "token id " + std::to_string(id) + " not in vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view line) const {
  std::vector<int> ids;
  for (const auto& tok : tokenize(line, lowercase_)) ids.push_back(id(tok));
  return ids;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open corpus " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) lines.push_back(line);
  }
  return lines;
}

std::size_t Corpus::num_tokens() const {
  std::size_t total = 0;
  for (const auto& s : sentences) total += s.size();
  return total;
}

LineSplit split_lines(const std::vector<std::string>& lines, double train_frac, double dev_frac,
                      std::uint64_t seed) {
  if (!(train_frac > 0.0) || !(dev_frac >= 0.0) || train_frac + dev_frac > 1.0) {
    throw Error(Errc::InvalidConfig, "split fractions must satisfy 0 < train, 0 <= dev, sum <= 1");
  }
  if (lines.empty()) throw Error(Errc::EmptyCorpus, "corpus has no lines");
  std::vector<std::size_t> order(lines.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng{seed, 0x5eed5b11u};
  rng.shuffle(std::span<std::size_t>(order));

  const auto n = static_cast<double>(lines.size());
  const auto n_train = static_cast<std::size_t>(std::floor(train_frac * n));
  const auto n_dev = static_cast<std::size_t>(std::floor(dev_frac * n));
  LineSplit out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& line = lines[order[i]];
    if (i < n_train) {
      out.train.push_back(line);
    } else if (i < n_train + n_dev) {
      out.dev.push_back(line);
    } else {
      out.test.push_back(line);
    }
  }
  return out;
}

CorpusSplit encode_split(const LineSplit& lines, const Vocabulary& vocab) {
  auto encode_all = [&](const std::vector<std::string>& src) {
    Corpus c;
    for (const auto& line : src) {
      auto ids = vocab.encode(line);
      if (!ids.empty()) c.sentences.push_back(std::move(ids));
    }
    return c;
  };
  return CorpusSplit{encode_all(lines.train), encode_all(lines.dev), encode_all(lines.test)};
}

void fill_window(const std::vector<int>& sentence, std::size_t pos, int n, int* out) {
  for (int j = 0; j < n; ++j) {
    const auto back = static_cast<std::ptrdiff_t>(n - j);
    const auto idx = static_cast<std::ptrdiff_t>(pos) - back;
    out[j] = idx < 0 ? kBosId : sentence[static_cast<std::size_t>(idx)];
  }
}

BatchStream::BatchStream(const Corpus& corpus, int n, int batch_size, std::uint64_t seed,
                         int epoch, bool shuffle)
    : corpus_(&corpus), n_(n), batch_size_(batch_size) {
  if (n < 1) throw Error(Errc::InvalidConfig, "context length n must be at least 1");
  if (batch_size < 1) throw Error(Errc::InvalidConfig, "batch size must be at least 1");
  positions_.reserve(corpus.num_tokens());
  for (std::size_t s = 0; s < corpus.sentences.size(); ++s) {
    for (std::size_t t = 0; t < corpus.sentences[s].size(); ++t) {
      positions_.push_back({static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(t)});
    }
  }
  if (shuffle) {
    Rng rng{seed, static_cast<std::uint64_t>(epoch), 0xba7c4u};
    rng.shuffle(std::span<Position>(positions_));
  }
}

std::size_t BatchStream::num_batches() const {
  return (positions_.size() + static_cast<std::size_t>(batch_size_) - 1) /
         static_cast<std::size_t>(batch_size_);
}

void BatchStream::skip(std::size_t batches) {
  cursor_ = std::min(positions_.size(), cursor_ + batches * static_cast<std::size_t>(batch_size_));
}

bool BatchStream::next(Batch& batch) {
  if (cursor_ >= positions_.size()) return false;
  const std::size_t count =
      std::min(static_cast<std::size_t>(batch_size_), positions_.size() - cursor_);
  batch.windows.resize(static_cast<Eigen::Index>(count), n_);
  batch.targets.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Position p = positions_[cursor_ + i];
    const auto& sentence = corpus_->sentences[p.sentence];
    fill_window(sentence, p.offset, n_, batch.windows.row(static_cast<Eigen::Index>(i)).data());
    batch.targets[i] = sentence[p.offset];
  }
  cursor_ += count;
  return true;
}

std::vector<std::string> generate_zipf_corpus(const ZipfCorpusOptions& options) {
  if (options.vocab < 3) throw Error(Errc::InvalidConfig, "synthetic vocab must be at least 3");
  if (!(options.zipf_s > 0.0)) throw Error(Errc::InvalidConfig, "zipf exponent must be positive");
  if (options.min_len < 1 || options.max_len < options.min_len) {
    throw Error(Errc::InvalidConfig, "invalid sentence length range");
  }
  if (!(options.context_weight >= 0.0 && options.context_weight <= 1.0)) {
    throw Error(Errc::InvalidConfig, "context_weight must lie in [0, 1]");
  }
  const int types = options.vocab - 2;
  Rng rng{options.seed, 0x21bfu};

  std::vector<double> cdf(static_cast<std::size_t>(types));
  double total = 0.0;
  for (int r = 0; r < types; ++r) {
    total += std::pow(static_cast<double>(r + 1), -options.zipf_s);
    cdf[static_cast<std::size_t>(r)] = total;
  }
  for (auto& c : cdf) c /= total;
  auto draw_rank = [&]() {
    const double u = rng.uniform();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(), types - 1));
  };

  std::vector<std::vector<int>> successor(static_cast<std::size_t>(types));
  for (auto& perm : successor) {
    perm.resize(static_cast<std::size_t>(types));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<int>(perm));
  }

  std::vector<std::string> lines;
  std::size_t produced = 0;
  while (produced < options.tokens) {
    const auto span = static_cast<std::uint64_t>(options.max_len - options.min_len + 1);
    auto len = static_cast<std::size_t>(options.min_len) + rng.below(span);
    len = std::min(len, options.tokens - produced);
    std::string line;
    int prev = -1;
    for (std::size_t i = 0; i < len; ++i) {
      int word;
      if (prev >= 0 && rng.uniform() < options.context_weight) {
        word = successor[static_cast<std::size_t>(prev)][static_cast<std::size_t>(draw_rank())];
      } else {
        word = draw_rank();
      }
      if (i > 0) line += ' ';
      line += 'w';
      line += std::to_string(word);
      prev = word;
    }
    lines.push_back(std::move(line));
    produced += len;
  }
  return lines;
}

}  // namespace ksoftmax
