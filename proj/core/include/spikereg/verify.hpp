#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spikereg/tensor.hpp"

namespace spikereg {

struct SuiteResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool pass() const { return max_error < tolerance; }
};

// Finite-difference checks of every differentiable primitive against the
// tape, with random-weight probes; returns the worst relative error.
double primitive_op_max_fd_error(std::uint64_t seed, int trials_per_op);

struct SimilarityGradErrors {
  double cosine_fd = 0.0;      // analytic vs central differences
  double kl_fd = 0.0;          // tied-perturbation differences of the KL form
  double cosine_autodiff = 0.0;  // tape gradient vs analytic form
  double kl_autodiff = 0.0;      // summed tape gradients vs analytic form
};
SimilarityGradErrors similarity_grad_errors(std::uint64_t seed, int trials, std::size_t dim);

struct CtcOracleErrors {
  double loss_dev = 0.0;  // |forward-backward - enumeration|
  double grad_rel = 0.0;  // gradient vs central differences
  int instances = 0;
};
// Exhaustive T <= 4, K <= 2, L <= 2 family plus `random_instances` extra
// random posteriors.
CtcOracleErrors ctc_oracle_errors(std::uint64_t seed, int random_instances);

// Gradient of apply_dropout against finite differences (mask held fixed).
double dropout_grad_max_error(std::uint64_t seed, int trials);

// Tiny full model: gradient of the combined Siamese loss with respect to
// every parameter against central differences; returns the worst relative
// error.
double model_grad_max_error(std::uint64_t seed);

// Everything above with its tolerance, for the gradcheck command.
std::vector<SuiteResult> run_verification_suites(std::uint64_t seed);

}  // namespace spikereg
