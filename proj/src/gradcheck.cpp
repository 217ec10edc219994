#include "reads/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace reads {

GradCheckReport finite_diff_check(const ScalarFn& fn, std::vector<Tensor> inputs,
                                  const GradCheckOptions& opts) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }

  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = fn(inputs);
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  // Coordinate list: everything, or a random sample.
  std::vector<std::pair<int, std::int64_t>> coords;
  std::int64_t total = 0;
  for (const Tensor& t : inputs) total += t.numel();
  if (opts.sample_coords > 0 && opts.sample_coords < total) {
    Rng rng(opts.sample_seed);
    for (int i = 0; i < opts.sample_coords; ++i) {
      std::int64_t pick = rng.uniform_int(0, total - 1);
      int ti = 0;
      while (pick >= inputs[static_cast<size_t>(ti)].numel()) {
        pick -= inputs[static_cast<size_t>(ti)].numel();
        ++ti;
      }
      coords.emplace_back(ti, pick);
    }
  } else {
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
      for (std::int64_t j = 0; j < inputs[ti].numel(); ++j) coords.emplace_back(static_cast<int>(ti), j);
    }
  }

  GradCheckReport report;
  const double h = opts.step;
  for (auto [ti, j] : coords) {
    double* slot = inputs[static_cast<size_t>(ti)].data() + j;
    const double orig = *slot;
    *slot = orig + h;
    const double fp = fn(inputs).value();
    *slot = orig - h;
    const double fm = fn(inputs).value();
    *slot = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[static_cast<size_t>(ti)][static_cast<size_t>(j)] * opts.analytic_scale;
    const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    report.max_rel_err = std::max(report.max_rel_err, rel);
    ++report.coords_checked;
  }
  return report;
}

}  // namespace reads
