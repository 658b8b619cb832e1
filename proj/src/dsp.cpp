#include "svkit/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "svkit/detail/acf.hpp"
#include "svkit/rng.hpp"

namespace svkit {

void fft_pow2(std::vector<std::complex<double>>& x, bool inverse) {
  const size_t n = x.size();
  if (n == 0 || (n & (n - 1)) != 0) throw DspError("fft size must be a power of two");

  // bit reversal
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }

  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * M_PI / double(len) * (inverse ? 1.0 : -1.0);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = x[i + k];
        std::complex<double> v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    for (auto& v : x) v /= double(n);
  }
}

std::vector<double> power_spectrum(const double* frame, int frame_len, int n_fft) {
  std::vector<std::complex<double>> buf(size_t(n_fft), std::complex<double>(0.0, 0.0));
  for (int i = 0; i < frame_len; ++i) buf[i] = frame[i];
  fft_pow2(buf);
  std::vector<double> out(size_t(n_fft / 2 + 1), 0.0);
  for (int k = 0; k <= n_fft / 2; ++k) out[k] = std::norm(buf[k]);
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// ---- voice activity detection ----
//
// A frame is voiced when its energy is within 40 dB of the utterance's
// 95th-percentile frame energy AND its normalized autocorrelation has a peak
// above 0.3 somewhere in the 60-400 Hz lag range. Morphology afterwards:
// gaps under 30 ms are bridged, segments under 50 ms dropped.

namespace {

constexpr int kVadFrameLen = 1920;  // 40 ms
constexpr int kVadHop = 480;        // 10 ms
constexpr double kVoicingThreshold = 0.3;

}  // namespace

std::vector<VoicedSegment> detect_voiced_segments(const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate) throw DspError("clip must be at 48 kHz");
  const int64_t n = int64_t(clip.samples.size());
  if (n < kVadFrameLen) return {};
  const int n_frames = int((n - kVadFrameLen) / kVadHop) + 1;

  std::vector<double> energy_db(size_t(n_frames), 0.0);
  std::vector<char> periodic(size_t(n_frames), 0);

#pragma omp parallel for schedule(static)
  for (int f = 0; f < n_frames; ++f) {
    const double* x = clip.samples.data() + int64_t(f) * kVadHop;
    double e = 0.0;
    for (int i = 0; i < kVadFrameLen; ++i) e += x[i] * x[i];
    energy_db[f] = 10.0 * std::log10(e / kVadFrameLen + 1e-30);
    periodic[f] = detail::best_acf_peak(x, kVadFrameLen).value > kVoicingThreshold ? 1 : 0;
  }

  std::vector<double> sorted = energy_db;
  std::sort(sorted.begin(), sorted.end());
  const double p95 = sorted[size_t(0.95 * double(n_frames - 1))];
  const double gate = p95 - 40.0;

  // Each voiced frame claims one hop centered on the frame center.
  std::vector<VoicedSegment> raw;
  for (int f = 0; f < n_frames; ++f) {
    if (energy_db[f] >= gate && periodic[f]) {
      int64_t center = int64_t(f) * kVadHop + kVadFrameLen / 2;
      int64_t lo = std::max<int64_t>(0, center - kVadHop / 2);
      int64_t hi = std::min(n, center + kVadHop / 2);
      if (!raw.empty() && lo <= raw.back().end)
        raw.back().end = hi;
      else
        raw.push_back({lo, hi});
    }
  }

  // merge gaps < 30 ms
  const int64_t max_gap = kSampleRate * 30 / 1000;
  std::vector<VoicedSegment> merged;
  for (const auto& s : raw) {
    if (!merged.empty() && s.start - merged.back().end < max_gap)
      merged.back().end = s.end;
    else
      merged.push_back(s);
  }

  // drop segments < 50 ms
  const int64_t min_len = kSampleRate * 50 / 1000;
  std::vector<VoicedSegment> out;
  for (const auto& s : merged)
    if (s.length() >= min_len) out.push_back(s);
  return out;
}

Frames frame_signal(const AudioClip& clip, const std::vector<VoicedSegment>& segments) {
  if (clip.sample_rate != kSampleRate) throw DspError("clip must be at 48 kHz");
  Frames frames;
  frames.len = kFrameLen;

  int total = 0;
  for (const auto& s : segments) {
    if (s.start < 0 || s.end > int64_t(clip.samples.size()) || s.start >= s.end)
      throw DspError("voiced segment out of range");
    if (s.length() >= kFrameLen) total += int((s.length() - kFrameLen) / kFrameHop) + 1;
  }
  frames.n = total;
  frames.data.resize(size_t(total) * kFrameLen);

  int fi = 0;
  for (const auto& s : segments) {
    if (s.length() < kFrameLen) continue;
    int count = int((s.length() - kFrameLen) / kFrameHop) + 1;
    for (int k = 0; k < count; ++k, ++fi) {
      const double* src = clip.samples.data() + s.start + int64_t(k) * kFrameHop;
      std::copy(src, src + kFrameLen, frames.frame(fi));
    }
  }
  return frames;
}

std::vector<double> hamming(int n) {
  if (n < 2) throw DspError("hamming window needs n >= 2");
  std::vector<double> w(size_t(n), 0.0);
  for (int k = 0; k < n; ++k) w[k] = 0.54 - 0.46 * std::cos(2.0 * M_PI * k / double(n - 1));
  return w;
}

void apply_window(Frames& frames, const std::vector<double>& window) {
  if (int(window.size()) != frames.len) throw DspError("window length mismatch");
#pragma omp parallel for schedule(static)
  for (int f = 0; f < frames.n; ++f) {
    double* x = frames.frame(f);
    for (int i = 0; i < frames.len; ++i) x[i] *= window[i];
  }
}

MelFilterbank build_mel_filterbank(int sample_rate, int n_fft, int n_bands) {
  if (n_fft < 2 || (n_fft & (n_fft - 1)) != 0) throw DspError("n_fft must be a power of two");
  if (n_bands < 1) throw DspError("need at least one mel band");

  MelFilterbank fb;
  fb.sample_rate = sample_rate;
  fb.n_fft = n_fft;
  fb.n_bands = n_bands;
  const int n_bins = fb.n_bins();
  fb.weights.assign(size_t(n_bands) * n_bins, 0.0);
  fb.bin_lo.resize(size_t(n_bands));
  fb.bin_hi.resize(size_t(n_bands));

  const double mel_max = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(size_t(n_bands) + 2);
  for (int i = 0; i < n_bands + 2; ++i) edges[i] = mel_to_hz(mel_max * i / double(n_bands + 1));

  const double hz_per_bin = double(sample_rate) / n_fft;
  for (int b = 0; b < n_bands; ++b) {
    const double lo = edges[b], center = edges[b + 1], hi = edges[b + 2];
    int first = -1, last = -1;
    double peak = 0.0;
    for (int k = 0; k < n_bins; ++k) {
      double f = k * hz_per_bin;
      double w = 0.0;
      if (f > lo && f < center)
        w = (f - lo) / (center - lo);
      else if (f >= center && f < hi)
        w = (hi - f) / (hi - center);
      if (w > 0.0) {
        fb.weights[size_t(b) * n_bins + k] = w;
        if (first < 0) first = k;
        last = k;
        peak = std::max(peak, w);
      }
    }
    if (first < 0 || peak <= 0.0) throw DspError("mel filter " + std::to_string(b) + " is empty");
    for (int k = first; k <= last; ++k) fb.weights[size_t(b) * n_bins + k] /= peak;
    fb.bin_lo[b] = first;
    fb.bin_hi[b] = last + 1;
  }
  return fb;
}

std::vector<double> compute_mfsc(const Frames& frames, const MelFilterbank& fb) {
  const int T = frames.n;
  std::vector<double> out(size_t(fb.n_bands) * T);
#pragma omp parallel for schedule(static)
  for (int t = 0; t < T; ++t) {
    std::vector<double> ps = power_spectrum(frames.frame(t), frames.len, fb.n_fft);
    for (int b = 0; b < fb.n_bands; ++b) {
      double e = 0.0;
      const double* w = fb.weights.data() + size_t(b) * fb.n_bins();
      for (int k = fb.bin_lo[b]; k < fb.bin_hi[b]; ++k) e += w[k] * ps[k];
      out[size_t(b) * T + t] = std::log(e + kLogFloor);
    }
  }
  return out;
}

MfscStack compute_deltas(const std::vector<double>& static_mfsc, int n_bands, int n_frames) {
  if (n_frames < 5) throw DspError("delta computation needs at least 5 frames");
  if (int(static_mfsc.size()) != n_bands * n_frames) throw DspError("static matrix size mismatch");

  const int T = n_frames;
  // regression window N = 2: delta_t = sum_n n (c_{t+n} - c_{t-n}) / (2 sum n^2)
  const double denom = 2.0 * (1.0 + 4.0);
  auto delta_of = [&](const std::vector<double>& src, std::vector<double>& dst) {
    for (int b = 0; b < n_bands; ++b) {
      const double* row = src.data() + size_t(b) * T;
      double* out = dst.data() + size_t(b) * T;
      for (int t = 0; t < T; ++t) {
        double acc = 0.0;
        for (int n = 1; n <= 2; ++n) {
          int hi = std::min(T - 1, t + n);
          int lo = std::max(0, t - n);
          acc += n * (row[hi] - row[lo]);
        }
        out[t] = acc / denom;
      }
    }
  };

  std::vector<double> d1(static_mfsc.size()), d2(static_mfsc.size());
  delta_of(static_mfsc, d1);
  delta_of(d1, d2);

  MfscStack stack;
  stack.n_bands = n_bands;
  stack.n_frames = T;
  stack.n_channels = 3;
  stack.values.resize(size_t(n_bands) * T * 3);
  for (int b = 0; b < n_bands; ++b)
    for (int t = 0; t < T; ++t) {
      stack.at(b, t, 0) = float(static_mfsc[size_t(b) * T + t]);
      stack.at(b, t, 1) = float(d1[size_t(b) * T + t]);
      stack.at(b, t, 2) = float(d2[size_t(b) * T + t]);
    }
  return stack;
}

MfscStack cmvn(const MfscStack& stack) {
  if (stack.n_frames < 2) throw DspError("cmvn needs at least 2 frames");
  MfscStack out = stack;
  const int T = stack.n_frames;
  for (int b = 0; b < stack.n_bands; ++b)
    for (int c = 0; c < stack.n_channels; ++c) {
      double mean = 0.0;
      for (int t = 0; t < T; ++t) mean += stack.at(b, t, c);
      mean /= T;
      double var = 0.0;
      for (int t = 0; t < T; ++t) {
        double d = stack.at(b, t, c) - mean;
        var += d * d;
      }
      var /= T;
      double inv = 1.0 / (std::sqrt(var) + 1e-8);
      for (int t = 0; t < T; ++t) out.at(b, t, c) = float((stack.at(b, t, c) - mean) * inv);
    }
  return out;
}

std::vector<ShortUtterance> slice_short_utterances(const MfscStack& stack, SliceMode mode,
                                                   int count, uint64_t seed,
                                                   const std::string& utterance_id) {
  const int T = stack.n_frames;
  if (T < kShortFrames) throw DspError("utterance too short");

  std::vector<int> starts;
  if (mode == SliceMode::grid) {
    for (int s = 0; s + kShortFrames <= T; s += kShortStride) starts.push_back(s);
  } else {
    Rng rng(seed);
    for (int i = 0; i < count; ++i) starts.push_back(int(rng.uniform_index(uint64_t(T - kShortFrames + 1))));
  }

  std::vector<ShortUtterance> out;
  out.reserve(starts.size());
  for (int s : starts) {
    ShortUtterance su;
    su.source_utterance_id = utterance_id;
    su.start_frame = s;
    su.values.resize(size_t(stack.n_bands) * kShortFrames * stack.n_channels);
    for (int b = 0; b < stack.n_bands; ++b) {
      const float* src = &stack.values[(size_t(b) * T + s) * stack.n_channels];
      float* dst = &su.values[size_t(b) * kShortFrames * stack.n_channels];
      std::copy(src, src + size_t(kShortFrames) * stack.n_channels, dst);
    }
    out.push_back(std::move(su));
  }
  return out;
}

MfscStack mfsc_pipeline(const AudioClip& clip) {
  auto segments = detect_voiced_segments(clip);
  Frames frames = frame_signal(clip, segments);
  if (frames.n < 5) throw DspError("too few voiced frames");
  static const std::vector<double> window = hamming(kFrameLen);
  apply_window(frames, window);
  static const MelFilterbank fb = build_mel_filterbank(kSampleRate, kFftSize, kMelBands);
  std::vector<double> static_mfsc = compute_mfsc(frames, fb);
  return cmvn(compute_deltas(static_mfsc, kMelBands, frames.n));
}

void write_mfsc_cache(const std::string& path, const MfscStack& stack) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DspError("cannot write '" + path + "'");
  const uint16_t version = 1;
  const uint16_t n_bands = uint16_t(stack.n_bands);
  const uint32_t n_frames = uint32_t(stack.n_frames);
  const uint16_t n_channels = uint16_t(stack.n_channels);
  out.write("MFSC", 4);
  out.write(reinterpret_cast<const char*>(&version), 2);
  out.write(reinterpret_cast<const char*>(&n_bands), 2);
  out.write(reinterpret_cast<const char*>(&n_frames), 4);
  out.write(reinterpret_cast<const char*>(&n_channels), 2);
  out.write(reinterpret_cast<const char*>(stack.values.data()),
            std::streamsize(stack.values.size() * sizeof(float)));
  if (!out) throw DspError("write failed for '" + path + "'");
}

MfscStack read_mfsc_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DspError("cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MFSC", 4) != 0) throw DspError("'" + path + "' is not an MFSC cache");
  uint16_t version = 0, n_bands = 0, n_channels = 0;
  uint32_t n_frames = 0;
  in.read(reinterpret_cast<char*>(&version), 2);
  in.read(reinterpret_cast<char*>(&n_bands), 2);
  in.read(reinterpret_cast<char*>(&n_frames), 4);
  in.read(reinterpret_cast<char*>(&n_channels), 2);
  if (!in || version != 1) throw DspError("unsupported MFSC cache version in '" + path + "'");
  MfscStack stack;
  stack.n_bands = n_bands;
  stack.n_frames = int(n_frames);
  stack.n_channels = n_channels;
  stack.values.resize(size_t(n_bands) * n_frames * n_channels);
  in.read(reinterpret_cast<char*>(stack.values.data()),
          std::streamsize(stack.values.size() * sizeof(float)));
  if (!in) throw DspError("truncated MFSC cache '" + path + "'");
  return stack;
}

}  // namespace svkit
