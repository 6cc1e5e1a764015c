#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace arw {

struct GradCheckResult {
  std::string component;
  double worst_rel_error = 0.0;
  std::string worst_coordinate;
  bool pass = false;
};

std::vector<std::string> gradcheck_components();

// Finite-difference audit of every analytic gradient path. Random
// instances at N=5, M=2, E=8 over `seeds` base seeds; a component passes
// when every checked coordinate agrees within `tolerance` relative error.
std::vector<GradCheckResult> run_gradcheck(
    const std::vector<std::string>& components, std::uint64_t seed,
    int seeds = 3, double tolerance = 1e-4);

}  // namespace arw
