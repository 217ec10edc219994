#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "reads/tensor.hpp"

namespace reads {

// Builds a scalar loss from the inputs; invoked under an active tape by the
// checker and without one for the finite-difference probes.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  // Probe only this many randomly chosen coordinates when > 0 (used for the
  // end-to-end model check where the full parameter set is too large).
  int sample_coords = 0;
  std::uint64_t sample_seed = 0;
  // Test hook: scales every analytic gradient before comparison so the
  // harness itself can be shown to catch a wrong gradient.
  double analytic_scale = 1.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  int coords_checked = 0;
};

// Central finite differences against tape gradients over all coordinates of
// all inputs (or a sampled subset). Relative error uses
// |a - n| / max(1, |a|, |n|).
GradCheckReport finite_diff_check(const ScalarFn& fn, std::vector<Tensor> inputs,
                                  const GradCheckOptions& opts = {});

struct SuiteEntry {
  std::string name;
  double max_rel_err = 0.0;
  int cases = 0;
  double tolerance = 0.0;
  bool pass = false;
};

// Finite-difference suite over every differentiable operation family:
// matmul, conv2d, pools, elementwise, softmax, LSTM cell, bilinear sampler
// (image and grid), CBAM, CTC loss, attention decoder, and the TPS path
// through a localization network. `cases` random instances per family.
std::vector<SuiteEntry> run_gradient_suite(std::uint64_t seed, int cases, double tolerance);

// Sampled-coordinate finite-difference check of the full model loss
// (rectifier -> encoder -> both decoder branches) for the given preset.
SuiteEntry run_model_gradcheck(const std::string& preset, std::uint64_t seed, int coords,
                               double tolerance);

}  // namespace reads
