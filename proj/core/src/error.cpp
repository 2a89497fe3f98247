#include "ksoftmax/error.hpp"

namespace ksoftmax {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::HpbOutsideBall: return "HpbOutsideBall";
    case Errc::NonFiniteScore: return "NonFiniteScore";
    case Errc::WrongKernelKind: return "WrongKernelKind";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::TargetOutOfRange: return "TargetOutOfRange";
    case Errc::TokenOutOfRange: return "TokenOutOfRange";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::DivergenceDetected: return "DivergenceDetected";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace ksoftmax
