#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "miro/diff/graph.hpp"
#include "miro/diff/param_store.hpp"

namespace miro {

// Scalar objective built from a store inside a caller-provided graph.
using Objective = std::function<Var<double>(Graph<double>&, ParamStore<double>&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Compares reverse-mode gradients with central differences for every
// parameter element. Relative error is |ad - fd| / max(1e-8, |ad| + |fd|).
// The objective must be deterministic in the store values.
inline GradCheckReport grad_check_report(const Objective& f, ParamStore<double>& store,
                                         double eps = 1e-5) {
  store.zero_grads();
  {
    Graph<double> g;
    g.backward(f(g, store), store);
  }
  GradCheckReport report;
  auto evaluate = [&]() {
    Graph<double> g(false);
    return f(g, store).value().item();
  };
  for (auto& entry : store.entries()) {
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double saved = entry.value[i];
      entry.value[i] = saved + eps;
      const double up = evaluate();
      entry.value[i] = saved - eps;
      const double down = evaluate();
      entry.value[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = entry.grad[i];
      const double err = std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = entry.name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

inline double grad_check(const Objective& f, ParamStore<double>& store, double eps = 1e-5) {
  return grad_check_report(f, store, eps).max_rel_error;
}

}  // namespace miro
