#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "svkit/rng.hpp"

namespace svkit::nn {

/// One buffer participating in a finite-difference check: live values the
/// loss closure reads, and the analytic gradient to verify.
struct GradSlot {
  std::string label;
  double* values = nullptr;
  const double* analytic = nullptr;
  size_t n = 0;
};

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst_slot;
  size_t probes = 0;
  bool passed(double tol) const { return max_rel_error < tol; }
};

/// Central finite differences (h = 1e-5 by default) against analytic
/// gradients. Probes every coordinate of small buffers and a seeded random
/// subset of large ones. Relative error is |a - n| / max(1, |a|, |n|).
inline GradCheckReport finite_diff_gradcheck(const std::string& name, std::vector<GradSlot> slots,
                                             const std::function<double()>& loss, double h = 1e-5,
                                             size_t max_probes_per_slot = 64,
                                             uint64_t seed = 0x9d5ec7) {
  GradCheckReport rep;
  rep.name = name;
  Rng rng(seed);
  for (auto& slot : slots) {
    std::vector<size_t> idx;
    if (slot.n <= max_probes_per_slot) {
      idx.resize(slot.n);
      for (size_t i = 0; i < slot.n; ++i) idx[i] = i;
    } else {
      for (size_t i = 0; i < max_probes_per_slot; ++i) idx.push_back(rng.uniform_index(slot.n));
    }
    for (size_t i : idx) {
      const double orig = slot.values[i];
      slot.values[i] = orig + h;
      const double up = loss();
      slot.values[i] = orig - h;
      const double down = loss();
      slot.values[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = slot.analytic[i];
      const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
      const double rel = std::fabs(analytic - numeric) / denom;
      ++rep.probes;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_slot = slot.label;
      }
    }
  }
  return rep;
}

}  // namespace svkit::nn
