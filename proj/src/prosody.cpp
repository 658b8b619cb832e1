#include "svkit/prosody.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "svkit/detail/acf.hpp"

namespace svkit {

const std::array<const char*, 18>& ProsodicVector::field_names() {
  static const std::array<const char*, 18> names = {
      "d1", "d2", "d3", "f1", "f2", "f3", "f4", "f5", "f6",
      "j1", "j2", "j3", "j4", "s1", "s2", "s3", "s4", "s5"};
  return names;
}

namespace {
constexpr int kPitchFrameLen = 1920;  // 40 ms
constexpr int kPitchHop = 480;        // 10 ms
constexpr double kPitchVoicingThreshold = 0.3;
}  // namespace

PitchTrack estimate_pitch(const AudioClip& clip, const std::vector<VoicedSegment>& segments) {
  if (clip.sample_rate != kSampleRate) throw ProsodyError("clip must be at 48 kHz");
  const int64_t n = int64_t(clip.samples.size());
  PitchTrack track;
  if (n < kPitchFrameLen) return track;
  const int n_frames = int((n - kPitchFrameLen) / kPitchHop) + 1;
  track.f0.assign(size_t(n_frames), 0.0);
  track.voiced.assign(size_t(n_frames), 0);

  auto in_segment = [&](int64_t center) {
    for (const auto& s : segments)
      if (center >= s.start && center < s.end) return true;
    return false;
  };

  double prev_lag = 0.0;
  for (int f = 0; f < n_frames; ++f) {
    const int64_t start = int64_t(f) * kPitchHop;
    const int64_t center = start + kPitchFrameLen / 2;
    if (!in_segment(center)) {
      prev_lag = 0.0;
      continue;
    }
    auto peak = detail::best_acf_peak(clip.samples.data() + start, kPitchFrameLen, prev_lag);
    if (peak.lag > 0.0 && peak.value > kPitchVoicingThreshold) {
      double f0 = std::clamp(double(kSampleRate) / peak.lag, 60.0, 400.0);
      track.f0[f] = f0;
      track.voiced[f] = 1;
      prev_lag = peak.lag;
    } else {
      prev_lag = 0.0;
    }
  }
  return track;
}

std::vector<CycleSequence> extract_cycles(const AudioClip& clip, const PitchTrack& track) {
  const int64_t n = int64_t(clip.samples.size());
  const int n_frames = int(track.f0.size());
  std::vector<CycleSequence> out;

  int f = 0;
  while (f < n_frames) {
    if (!track.voiced[f]) {
      ++f;
      continue;
    }
    int run_end = f;
    while (run_end < n_frames && track.voiced[run_end]) ++run_end;

    // sample span of the voiced run
    const int64_t span_lo = int64_t(f) * kPitchHop;
    const int64_t span_hi = std::min(n, int64_t(run_end - 1) * kPitchHop + kPitchFrameLen);

    auto local_period = [&](int64_t pos) {
      int idx = std::clamp(int((pos - kPitchFrameLen / 2) / kPitchHop), f, run_end - 1);
      // walk to the nearest voiced frame inside the run
      int lo = idx, hi = idx;
      while (lo >= f || hi < run_end) {
        if (lo >= f && track.voiced[lo]) return double(kSampleRate) / track.f0[lo];
        if (hi < run_end && track.voiced[hi]) return double(kSampleRate) / track.f0[hi];
        --lo;
        ++hi;
      }
      return 0.0;
    };

    CycleSequence seq;
    double period0 = local_period(span_lo);
    if (period0 > 0.0) {
      // first peak: maximum over one predicted period
      int64_t w_lo = span_lo;
      int64_t w_hi = std::min(span_hi, span_lo + int64_t(std::lround(period0)));
      int64_t peak = w_lo;
      for (int64_t i = w_lo; i < w_hi; ++i)
        if (clip.samples[size_t(i)] > clip.samples[size_t(peak)]) peak = i;

      std::vector<int64_t> marks{peak};
      while (true) {
        double period = local_period(marks.back());
        if (period <= 0.0) break;
        int64_t lo = marks.back() + int64_t(std::lround(0.75 * period));
        int64_t hi = marks.back() + int64_t(std::lround(1.40 * period));
        if (hi > span_hi) break;
        int64_t next = lo;
        for (int64_t i = lo; i < hi; ++i)
          if (clip.samples[size_t(i)] > clip.samples[size_t(next)]) next = i;
        marks.push_back(next);
      }

      for (size_t i = 0; i + 1 < marks.size(); ++i) {
        seq.periods.push_back(double(marks[i + 1] - marks[i]) / kSampleRate);
        double amp = 0.0;
        for (int64_t k = marks[i]; k < marks[i + 1]; ++k)
          amp = std::max(amp, std::fabs(clip.samples[size_t(k)]));
        seq.amplitudes.push_back(amp);
      }
    }
    if (int(seq.periods.size()) >= 3) out.push_back(std::move(seq));
    f = run_end;
  }
  return out;
}

DurationFeatures duration_features(const std::vector<VoicedSegment>& segments, int64_t /*clip_len*/) {
  DurationFeatures d;
  if (segments.empty()) return d;

  const int64_t word_gap = kSampleRate * 300 / 1000;  // 300 ms

  struct Word {
    size_t first, last;  // segment indices, inclusive
  };
  std::vector<Word> words;
  words.push_back({0, 0});
  for (size_t i = 1; i < segments.size(); ++i) {
    int64_t gap = segments[i].start - segments[i - 1].end;
    if (gap >= word_gap)
      words.push_back({i, i});
    else
      words.back().last = i;
  }

  double frames_sum = 0.0;
  double gap_sum = 0.0;
  int n_gaps = 0;
  for (const auto& w : words) {
    int64_t span = segments[w.last].end - segments[w.first].start;
    frames_sum += double(span) / kFrameHop;  // 10 ms frames
    for (size_t i = w.first + 1; i <= w.last; ++i) {
      gap_sum += double(segments[i].start - segments[i - 1].end) / kSampleRate;
      ++n_gaps;
    }
  }
  double voiced_sum = 0.0;
  for (const auto& s : segments) voiced_sum += double(s.length()) / kSampleRate;

  d.frames_per_word = frames_sum / double(words.size());
  d.voiced_len_s = voiced_sum / double(segments.size());
  d.unvoiced_len_s = n_gaps > 0 ? gap_sum / n_gaps : 0.0;
  return d;
}

F0Features f0_features(const PitchTrack& track) {
  std::vector<double> t, f;
  for (size_t i = 0; i < track.f0.size(); ++i) {
    if (track.voiced[i]) {
      t.push_back(track.frame_time(int(i)));
      f.push_back(track.f0[i]);
    }
  }
  if (f.empty()) throw ProsodyError("no voiced frames");

  F0Features out;
  out.max = *std::max_element(f.begin(), f.end());
  out.min = *std::min_element(f.begin(), f.end());
  out.range = out.max - out.min;
  double mean_f = 0.0;
  for (double v : f) mean_f += v;
  mean_f /= double(f.size());
  out.mean = mean_f;

  double dt = t.back() - t.front();
  out.pseudo_slope = dt > 0.0 ? (f.back() - f.front()) / dt : 0.0;

  double mean_t = 0.0;
  for (double v : t) mean_t += v;
  mean_t /= double(t.size());
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < t.size(); ++i) {
    num += (t[i] - mean_t) * (f[i] - mean_f);
    den += (t[i] - mean_t) * (t[i] - mean_t);
  }
  out.slope = den > 0.0 ? num / den : 0.0;
  return out;
}

namespace {

// K-point local-mean perturbation quotient in percent; 0 when too short.
double perturbation_quotient(const std::vector<double>& x, int k, double mean) {
  const int n = int(x.size());
  const int half = k / 2;
  if (n < k || mean <= 0.0) return 0.0;
  double acc = 0.0;
  int count = 0;
  for (int i = half; i < n - half; ++i) {
    double local = 0.0;
    for (int j = i - half; j <= i + half; ++j) local += x[j];
    local /= k;
    acc += std::fabs(x[i] - local);
    ++count;
  }
  return count > 0 ? 100.0 * (acc / count) / mean : 0.0;
}

double seq_duration(const CycleSequence& c) {
  double d = 0.0;
  for (double p : c.periods) d += p;
  return d;
}

// Duration-weighted mean of per-segment values over segments with at least
// min_cycles periods; (0, false) when none qualifies.
template <typename F>
std::pair<double, bool> weighted_over_segments(const std::vector<CycleSequence>& cycles,
                                               size_t min_cycles, F per_segment) {
  double acc = 0.0, wsum = 0.0;
  for (const auto& c : cycles) {
    if (c.periods.size() < min_cycles) continue;
    double w = seq_duration(c);
    acc += w * per_segment(c);
    wsum += w;
  }
  if (wsum <= 0.0) return {0.0, false};
  return {acc / wsum, true};
}

}  // namespace

JitterFeatures jitter_features(const std::vector<CycleSequence>& cycles) {
  auto mean_of = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return m / double(v.size());
  };

  auto [j1, ok1] = weighted_over_segments(cycles, 2, [&](const CycleSequence& c) {
    double acc = 0.0;
    for (size_t i = 0; i + 1 < c.periods.size(); ++i)
      acc += std::fabs(c.periods[i] - c.periods[i + 1]);
    return acc / double(c.periods.size() - 1);
  });
  if (!ok1) throw ProsodyError("insufficient cycles for jitter");

  auto [j2, ok2] = weighted_over_segments(cycles, 2, [&](const CycleSequence& c) {
    double acc = 0.0;
    for (size_t i = 0; i + 1 < c.periods.size(); ++i)
      acc += std::fabs(c.periods[i] - c.periods[i + 1]);
    return 100.0 * (acc / double(c.periods.size() - 1)) / mean_of(c.periods);
  });
  (void)ok2;

  auto [j3, ok3] = weighted_over_segments(cycles, 3, [&](const CycleSequence& c) {
    return perturbation_quotient(c.periods, 3, mean_of(c.periods));
  });
  (void)ok3;

  auto [j4, ok4] = weighted_over_segments(cycles, 5, [&](const CycleSequence& c) {
    return perturbation_quotient(c.periods, 5, mean_of(c.periods));
  });
  (void)ok4;

  return {j1, j2, j3, j4};
}

ShimmerFeatures shimmer_features(const std::vector<CycleSequence>& cycles) {
  auto mean_of = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return m / double(v.size());
  };

  auto [s1, ok1] = weighted_over_segments(cycles, 2, [&](const CycleSequence& c) {
    double acc = 0.0;
    int count = 0;
    for (size_t i = 0; i + 1 < c.amplitudes.size(); ++i) {
      if (c.amplitudes[i] > 0.0 && c.amplitudes[i + 1] > 0.0) {
        acc += std::fabs(20.0 * std::log10(c.amplitudes[i + 1] / c.amplitudes[i]));
        ++count;
      }
    }
    return count > 0 ? acc / count : 0.0;
  });
  if (!ok1) throw ProsodyError("insufficient cycles for shimmer");

  auto [s2, ok2] = weighted_over_segments(cycles, 2, [&](const CycleSequence& c) {
    double acc = 0.0;
    for (size_t i = 0; i + 1 < c.amplitudes.size(); ++i)
      acc += std::fabs(c.amplitudes[i] - c.amplitudes[i + 1]);
    double mean = mean_of(c.amplitudes);
    return mean > 0.0 ? 100.0 * (acc / double(c.amplitudes.size() - 1)) / mean : 0.0;
  });
  (void)ok2;

  auto apq = [&](size_t k) {
    return weighted_over_segments(cycles, k, [&](const CycleSequence& c) {
      return perturbation_quotient(c.amplitudes, int(k), mean_of(c.amplitudes));
    }).first;
  };

  return {s1, s2, apq(3), apq(5), apq(11)};
}

ProsodicVector prosodic_vector(const AudioClip& clip) {
  auto segments = detect_voiced_segments(clip);
  if (segments.empty()) throw ProsodyError("no voiced content");
  PitchTrack track = estimate_pitch(clip, segments);

  bool any_voiced = false;
  for (char v : track.voiced) any_voiced |= (v != 0);
  if (!any_voiced) throw ProsodyError("no voiced content");

  auto cycles = extract_cycles(clip, track);
  if (cycles.empty()) throw ProsodyError("no voiced content");

  DurationFeatures d = duration_features(segments, int64_t(clip.samples.size()));
  F0Features f = f0_features(track);
  JitterFeatures j = jitter_features(cycles);
  ShimmerFeatures s = shimmer_features(cycles);

  ProsodicVector p;
  p[0] = d.frames_per_word;
  p[1] = d.voiced_len_s;
  p[2] = d.unvoiced_len_s;
  p[3] = f.mean;
  p[4] = f.max;
  p[5] = f.min;
  p[6] = f.range;
  p[7] = f.pseudo_slope;
  p[8] = f.slope;
  p[9] = j.absolute_s;
  p[10] = j.relative;
  p[11] = j.rap;
  p[12] = j.ppq5;
  p[13] = s.db;
  p[14] = s.relative;
  p[15] = s.apq3;
  p[16] = s.apq5;
  p[17] = s.apq11;
  return p;
}

void write_prosody_csv(const std::string& path,
                       const std::vector<std::pair<std::string, ProsodicVector>>& rows) {
  std::ofstream out(path);
  if (!out) throw ProsodyError("cannot write '" + path + "'");
  out << "utterance_id";
  for (const char* name : ProsodicVector::field_names()) out << "," << name;
  out << "\n";
  char buf[64];
  for (const auto& [id, v] : rows) {
    out << id;
    for (size_t i = 0; i < 18; ++i) {
      std::snprintf(buf, sizeof buf, "%.10g", v[i]);
      out << "," << buf;
    }
    out << "\n";
  }
}

std::vector<std::pair<std::string, ProsodicVector>> read_prosody_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ProsodyError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ProsodyError("empty prosody cache '" + path + "'");
  std::vector<std::pair<std::string, ProsodicVector>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    if (!std::getline(ss, field, ',')) continue;
    ProsodicVector v;
    for (size_t i = 0; i < 18; ++i) {
      std::string cell;
      if (!std::getline(ss, cell, ','))
        throw ProsodyError("short row in prosody cache '" + path + "'");
      v[i] = std::stod(cell);
    }
    rows.emplace_back(field, v);
  }
  return rows;
}

}  // namespace svkit
