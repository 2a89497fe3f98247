#include "ksoftmax/rng.hpp"

#include <sstream>
#include <vector>

#include "ksoftmax/error.hpp"

namespace ksoftmax {

Rng::Rng(std::initializer_list<std::uint64_t> seeds) {
  // seed_seq::generate is fully specified by the standard, unlike the
  // distributions.
  std::vector<std::uint32_t> words;
  for (auto s : seeds) {
    words.push_back(static_cast<std::uint32_t>(s & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(s >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  engine_.seed(seq);
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_;
  return out.str();
}

void Rng::set_state(const std::string& text) {
  std::istringstream in(text);
  in >> engine_;
  if (!in) throw Error(Errc::Io, "malformed RNG state");
}

}  // namespace ksoftmax
