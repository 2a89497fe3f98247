#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ksoftmax::cli {

/// Exit codes: 0 success, 1 validation error (or failed audit), 2 divergence.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ksoftmax::cli
