#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

// Shared autocorrelation peak picker used by the voice activity detector and
// the pitch tracker.

namespace svkit::detail {

constexpr int kAcfLagMin = 48000 / 400;  // 400 Hz
constexpr int kAcfLagMax = 48000 / 60;   // 60 Hz

struct AcfPeak {
  double value = 0.0;
  double lag = 0.0;  // fractional after parabolic interpolation; 0 = no peak
};

// Max normalized autocorrelation of a mean-removed frame over the
// [60, 400] Hz lag range. Normalization uses the energies of the two
// overlapping chunks. The global maximum wins; a shorter lag replaces it only
// when its peak is a near-tie (a pure tone repeats at every period multiple,
// all with ACF ~1). When prev_lag is given, a strong peak near it is
// preferred, which suppresses octave jumps mid-track.
inline AcfPeak best_acf_peak(const double* x, int w, double prev_lag = 0.0) {
  double mean = 0.0;
  for (int i = 0; i < w; ++i) mean += x[i];
  mean /= w;

  std::vector<double> v(size_t(w), 0.0);
  std::vector<double> sq(size_t(w) + 1, 0.0);
  for (int i = 0; i < w; ++i) {
    v[i] = x[i] - mean;
    sq[i + 1] = sq[i] + v[i] * v[i];
  }
  if (sq[w] <= 0.0) return {};

  const int lag_hi = std::min(kAcfLagMax, w - 1);
  std::vector<double> r(size_t(lag_hi) + 1, 0.0);
  for (int lag = kAcfLagMin; lag <= lag_hi; ++lag) {
    double num = 0.0;
    const int m = w - lag;
    for (int i = 0; i < m; ++i) num += v[i] * v[i + lag];
    double e1 = sq[m];
    double e2 = sq[w] - sq[lag];
    double den = std::sqrt(e1 * e2);
    r[lag] = den > 0.0 ? num / den : 0.0;
  }

  struct Cand {
    int lag;
    double value;
  };
  std::vector<Cand> cands;
  double rmax = 0.0;
  for (int lag = kAcfLagMin + 1; lag < lag_hi; ++lag) {
    if (r[lag] >= r[lag - 1] && r[lag] > r[lag + 1]) {
      cands.push_back({lag, r[lag]});
      rmax = std::max(rmax, r[lag]);
    }
  }
  if (cands.empty() || rmax <= 0.0) return {};

  // Only near-ties of the maximum are eligible; a weaker sidelobe can never
  // displace a dominant peak. Among the ties, one near the previous frame's
  // lag wins (octave continuity), otherwise the shortest lag (a pure tone
  // peaks at every multiple of its period).
  const double bar = 0.97 * rmax;
  int chosen = -1;
  if (prev_lag > 0.0) {
    double best_dist = 0.15 * prev_lag;
    for (const auto& c : cands) {
      if (c.value >= bar && std::fabs(c.lag - prev_lag) <= best_dist) {
        best_dist = std::fabs(c.lag - prev_lag);
        chosen = c.lag;
      }
    }
  }
  if (chosen < 0) {
    for (const auto& c : cands) {
      if (c.value >= bar) {
        chosen = c.lag;
        break;
      }
    }
  }

  double y0 = r[chosen - 1], y1 = r[chosen], y2 = r[chosen + 1];
  double denom = y0 - 2.0 * y1 + y2;
  double delta = denom != 0.0 ? 0.5 * (y0 - y2) / denom : 0.0;
  delta = std::clamp(delta, -0.5, 0.5);
  return {y1, double(chosen) + delta};
}

}  // namespace svkit::detail
