#include "weedsense/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "weedsense/core/random.hpp"

namespace weedsense {

double GradCheckReport::max_rel_error() const {
  double m = 0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

GradCheckReport check_gradients(ParameterStore<double>& store, const std::function<Var<double>()>& loss_fn,
                                const GradCheckOptions& options) {
  std::map<std::string, TensorD> analytic;
  {
    Tape<double> tape;
    Var<double> loss = loss_fn();
    analytic = gradients(tape, loss, store);
  }
  auto evaluate = [&loss_fn]() { return static_cast<double>(loss_fn().value()[0]); };

  GradCheckReport report;
  Rng rng(options.seed);
  for (Parameter<double>* p : store.trainable()) {
    GradCheckEntry entry;
    entry.name = p->name;
    const Index n = p->value.numel();
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    if (options.samples_per_tensor > 0 && options.samples_per_tensor < n) {
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(static_cast<std::size_t>(options.samples_per_tensor));
    }
    const TensorD& g = analytic.at(p->name);
    for (Index i : idx) {
      const double orig = p->value[i];
      p->value[i] = orig + options.step;
      const double up = evaluate();
      p->value[i] = orig - options.step;
      const double down = evaluate();
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = g[i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.floor});
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      ++entry.checked;
    }
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace weedsense
