#pragma once

#include <functional>
#include <string>
#include <vector>

#include "weedsense/core/autograd.hpp"

namespace weedsense {

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Entries probed per tensor; 0 probes every entry.
  Index samples_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  Index checked = 0;
  double max_rel_error = 0;
  double max_abs_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error() const;
  bool passed(double tolerance) const { return max_rel_error() <= tolerance; }
};

/// Compares tape gradients of `loss_fn` against central finite differences
/// for every trainable parameter of `store`. `loss_fn` must read parameters
/// through param_var and be deterministic.
GradCheckReport check_gradients(ParameterStore<double>& store, const std::function<Var<double>()>& loss_fn,
                                const GradCheckOptions& options = {});

}  // namespace weedsense

namespace weedsense {

struct NamedGradCheck {
  std::string name;
  GradCheckReport report;
};

/// Finite-difference checks of every tensor-core primitive on small random
/// double-precision shapes.
std::vector<NamedGradCheck> primitive_gradient_checks(std::uint64_t seed = 7);

}  // namespace weedsense
