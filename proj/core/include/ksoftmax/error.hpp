#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ksoftmax {

enum class Errc {
  DimensionMismatch,
  HpbOutsideBall,
  NonFiniteScore,
  WrongKernelKind,
  InvalidSpec,
  TargetOutOfRange,
  TokenOutOfRange,
  EmptyCorpus,
  InvalidConfig,
  DivergenceDetected,
  Io,
};

std::string_view to_string(Errc code);

// Every library failure is reported through this type; `code()` lets callers
// (the CLI in particular) map failures to exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  Errc code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace ksoftmax
