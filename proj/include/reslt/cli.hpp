#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "reslt/autodiff.hpp"

namespace reslt::cli {

enum ExitCode : int {
  kSuccess = 0,
  kFailure = 1,  // command ran but its check failed (gradcheck) or an unexpected error
  kUsage = 2,
  kMissingInput = 3,
  kDiverged = 4,
};

inline constexpr const char* kToolVersion = "0.1.0";

/// Entry point shared by the `reslt` binary and the tests. `args[0]` is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct GradCheckOptions {
  std::size_t input = 8;
  std::size_t hidden = 16;
  std::size_t feature = 12;
  std::size_t classes = 6;
  std::size_t groups = 3;
  std::size_t batch = 10;
  double alpha = 0.995;
  double epsilon = 1e-3;
  std::uint64_t seed = 1;
  std::string variant = "reslt";
};

/// Builds a tiny model and batch, then finite-difference checks the variant's
/// full training objective over every parameter.
GradCheckResult objective_grad_check(const GradCheckOptions& options);

}  // namespace reslt::cli
