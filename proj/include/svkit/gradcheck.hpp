#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace svkit {

// Central finite differences of a scalar-valued function, perturbing the
// given buffer in place. Step per coordinate is base_step * max(1, |x_i|).
std::vector<double> finite_difference_gradient(
    const std::function<double()>& eval, std::span<double> x, double base_step);

// Infinity-norm relative disagreement between two gradient vectors.
double gradient_rel_error(std::span<const double> analytic,
                          std::span<const double> numeric);

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  double threshold = 1e-5;
  std::size_t instances = 0;

  bool pass() const { return max_rel_err <= threshold; }
};

// Finite-difference verification of every analytic gradient: layer weights,
// each pooling variant, the frame encoder, the embedding affine, AM-softmax,
// and the assembled training pipeline. Random tiny shapes, 64-bit.
std::vector<GradCheckCase> run_gradient_checks(std::uint64_t seed,
                                               std::size_t instances_per_op);

}  // namespace svkit
