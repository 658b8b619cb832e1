#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "svkit/audio.hpp"

namespace svkit {

struct DspError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// All sample-domain constants below assume 48 kHz input.
constexpr int kSampleRate = 48000;
constexpr int kFrameLen = 1200;   // 25 ms
constexpr int kFrameHop = 480;    // 10 ms, 60% overlap
constexpr int kFftSize = 2048;
constexpr int kMelBands = 40;
constexpr int kShortFrames = 300;     // 3 s of 10 ms hops
constexpr int kShortStride = 100;     // 1 s, i.e. 2 s overlap between windows
constexpr double kLogFloor = 1e-10;

/// Half-open sample range [start, end) judged voiced.
struct VoicedSegment {
  int64_t start = 0;
  int64_t end = 0;
  int64_t length() const { return end - start; }
};

struct Frames {
  int n = 0;
  int len = 0;
  std::vector<double> data;  // row-major, n x len
  double* frame(int i) { return data.data() + size_t(i) * len; }
  const double* frame(int i) const { return data.data() + size_t(i) * len; }
};

struct MelFilterbank {
  int sample_rate = 0;
  int n_fft = 0;
  int n_bands = 0;
  std::vector<int> bin_lo, bin_hi;     // contiguous support [lo, hi) per band
  std::vector<double> weights;         // row-major, n_bands x (n_fft/2 + 1)
  int n_bins() const { return n_fft / 2 + 1; }
  double weight(int band, int bin) const { return weights[size_t(band) * n_bins() + bin]; }
};

/// band x frame x channel feature array, channels = (static, delta, delta-delta).
/// Value order matches the cache file: band-major, frame, channel innermost.
struct MfscStack {
  int n_bands = 0;
  int n_frames = 0;
  int n_channels = 0;
  std::vector<float> values;
  float& at(int b, int t, int c) {
    return values[(size_t(b) * n_frames + t) * n_channels + c];
  }
  float at(int b, int t, int c) const {
    return values[(size_t(b) * n_frames + t) * n_channels + c];
  }
};

struct ShortUtterance {
  std::vector<float> values;  // 40 x 300 x 3, same layout as MfscStack
  std::string source_utterance_id;
  int start_frame = 0;
};

// ---- spectral utilities ----

// In-place radix-2 FFT; n must be a power of two.
void fft_pow2(std::vector<std::complex<double>>& x, bool inverse = false);

// |FFT|^2 of a zero-padded real frame; returns n_fft/2 + 1 bins.
std::vector<double> power_spectrum(const double* frame, int frame_len, int n_fft);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// ---- the feature pipeline ----

std::vector<VoicedSegment> detect_voiced_segments(const AudioClip& clip);

// 25 ms / 10 ms framing restricted to voiced segments; frames never straddle
// a segment boundary, partial tails are dropped.
Frames frame_signal(const AudioClip& clip, const std::vector<VoicedSegment>& segments);

// w[k] = 0.54 - 0.46 cos(2 pi k / (n-1))
std::vector<double> hamming(int n);

void apply_window(Frames& frames, const std::vector<double>& window);

// 40 triangular filters, centers equally spaced in mel between 0 and
// Nyquist, each peak-normalized to 1.
MelFilterbank build_mel_filterbank(int sample_rate, int n_fft, int n_bands = kMelBands);

// Log mel energies of pre-windowed frames: flat n_bands x n_frames matrix
// (band-major). Each value is log(filter energy + 1e-10).
std::vector<double> compute_mfsc(const Frames& frames, const MelFilterbank& fb);

// Appends delta and delta-delta channels (regression window of +-2 frames,
// edges replicated). Requires at least 5 frames.
MfscStack compute_deltas(const std::vector<double>& static_mfsc, int n_bands, int n_frames);

// Per-(band, channel) mean/variance normalization over frames; divisor is
// std + 1e-8. Requires at least 2 frames.
MfscStack cmvn(const MfscStack& stack);

enum class SliceMode { grid, random };

// Grid mode: 300-frame windows at stride 100. Random mode: `count` windows
// with uniform start frames, deterministic per seed.
std::vector<ShortUtterance> slice_short_utterances(const MfscStack& stack, SliceMode mode,
                                                   int count, uint64_t seed,
                                                   const std::string& utterance_id = "");

// Convenience: VAD -> framing -> Hamming -> MFSC -> deltas -> CMVN.
// Throws DspError when the clip has too little voiced content to frame.
MfscStack mfsc_pipeline(const AudioClip& clip);

// ---- feature cache ----
// Header: magic "MFSC", u16 version, u16 n_bands, u32 n_frames, u16 n_channels,
// then little-endian f32 values in band-major, frame, channel order.
void write_mfsc_cache(const std::string& path, const MfscStack& stack);
MfscStack read_mfsc_cache(const std::string& path);

}  // namespace svkit
