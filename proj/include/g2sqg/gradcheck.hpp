#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "g2sqg/params.hpp"
#include "g2sqg/random.hpp"
#include "g2sqg/tape.hpp"

namespace g2s {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Lower bound on the relative-error denominator, scaled by max(1, |loss|).
  /// Central differences carry round-off proportional to |loss| / step, so
  /// gradients far below the loss scale are compared absolutely instead.
  double denominator_floor = 1e-6;
  /// 0 checks every coordinate; otherwise a seeded sample per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t checked = 0;
  /// Coordinates whose +/- step crossed a non-differentiable point.
  std::size_t skipped = 0;
  std::string worst_name;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0;
  double worst_numeric = 0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }

  void merge(const GradCheckReport& other) {
    checked += other.checked;
    skipped += other.skipped;
    if (other.max_rel_error > max_rel_error) {
      max_rel_error = other.max_rel_error;
      worst_name = other.worst_name;
      worst_index = other.worst_index;
      worst_analytic = other.worst_analytic;
      worst_numeric = other.worst_numeric;
    }
  }
};

/// Compares tape gradients of a scalar loss against central differences.
///
/// `loss` is called as loss(Tape<double>&, const ParameterStore<double>&) and
/// must return a 1x1 Var; it has to be deterministic, so any randomness it
/// uses must be reseeded on every call.
template <typename LossFn>
GradCheckReport grad_check(LossFn&& loss, const ParameterStore<double>& params,
                           const GradCheckOptions& options = {}) {
  auto evaluate = [&](const ParameterStore<double>& p, std::uint64_t& signature) {
    Tape<double> tape;
    Var<double> out = loss(tape, p);
    const double v = out.value()(0, 0);
    if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
    signature = tape.kink_signature();
    return v;
  };

  Tape<double> base;
  Var<double> root = loss(base, params);
  if (!std::isfinite(root.value()(0, 0))) throw NumericError("grad_check: loss is not finite");
  base.backward(root);
  const GradientStore<double> analytic = base.parameter_gradients();
  const std::uint64_t base_signature = base.kink_signature();
  const double floor = options.denominator_floor * std::max(1.0, std::abs(root.value()(0, 0)));

  ParameterStore<double> work = params;
  Rng rng(options.seed);
  GradCheckReport report;
  for (const auto& [name, original] : params) {
    const Eigen::Index count = original.size();
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(count));
    std::iota(coords.begin(), coords.end(), Eigen::Index{0});
    if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
      for (std::size_t i = 0; i < options.max_coords_per_tensor; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next() % (coords.size() - i));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(options.max_coords_per_tensor);
    }
    double* data = work.at(name).data();
    for (Eigen::Index idx : coords) {
      const double keep = data[idx];
      std::uint64_t sig_plus = 0, sig_minus = 0;
      data[idx] = keep + options.step;
      const double f_plus = evaluate(work, sig_plus);
      data[idx] = keep - options.step;
      const double f_minus = evaluate(work, sig_minus);
      data[idx] = keep;
      if (sig_plus != base_signature || sig_minus != base_signature) {
        ++report.skipped;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2 * options.step);
      const double exact = analytic.contains(name) ? analytic.at(name).data()[idx] : 0.0;
      const double denom = std::max({std::abs(exact), std::abs(numeric), floor});
      const double rel = std::abs(exact - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = std::max(rel, report.max_rel_error);
        report.worst_name = name;
        report.worst_index = idx;
        report.worst_analytic = exact;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace g2s
