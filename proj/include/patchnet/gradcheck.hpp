#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "patchnet/network.hpp"

namespace patchnet::gradcheck {

struct CheckResult {
  std::string name;
  double rel_err = 0.0;
  bool pass = false;
};

// ||a - b|| / max(||a||, ||b||, tiny)
double relative_error(const float* a, const float* b, std::size_t n);

// Central finite differences of a scalar loss with respect to a parameter
// buffer. The loss callable re-runs the forward pass; the measured step uses
// the actually representable perturbed values.
std::vector<double> central_difference(float* theta, std::size_t n, double eps,
                                       const std::function<double()>& loss);

// Finite-difference checks for every layer type on small random shapes.
std::vector<CheckResult> check_layers(std::uint64_t seed, double tol);

// Whole-network check over every parameter tensor and the input. Inputs are
// chosen so no ReLU or pooling decision sits within the step size of a kink,
// where finite differences are meaningless.
std::vector<CheckResult> check_model(const NetworkSpec& spec,
                                     std::uint64_t seed, double tol,
                                     const std::string& prefix);

// Layer suites plus both shrunken preset networks for a range of seeds.
std::vector<CheckResult> run_all(int num_seeds, double tol);

}  // namespace patchnet::gradcheck
