#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "svkit/audio.hpp"
#include "svkit/dsp.hpp"

namespace svkit {

struct ProsodyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Per-frame F0 at a 10 ms hop. f0 > 0 iff voiced; voiced values lie in
/// [60, 400] Hz.
struct PitchTrack {
  std::vector<double> f0;
  std::vector<char> voiced;
  static constexpr double hop_s = 0.010;
  static constexpr double frame_len_s = 0.040;
  double frame_time(int i) const { return i * hop_s + frame_len_s / 2.0; }
};

/// Consecutive glottal cycle periods and peak amplitudes for one voiced
/// segment; the two lists have equal length.
struct CycleSequence {
  std::vector<double> periods;     // seconds
  std::vector<double> amplitudes;  // peak |sample| per cycle
};

/// The 18 features in their frozen order: 3 duration, 6 F0, 4 jitter,
/// 5 shimmer. The MLP input layout depends on this order.
struct ProsodicVector {
  std::array<double, 18> v{};
  double& operator[](size_t i) { return v[i]; }
  double operator[](size_t i) const { return v[i]; }
  static const std::array<const char*, 18>& field_names();
};

struct DurationFeatures {
  double frames_per_word = 0.0;    // d1, mean 10 ms-frame count per pseudo-word
  double voiced_len_s = 0.0;       // d2
  double unvoiced_len_s = 0.0;     // d3
};

struct F0Features {
  double mean = 0.0, max = 0.0, min = 0.0, range = 0.0;
  double pseudo_slope = 0.0;  // endpoint slope, Hz/s
  double slope = 0.0;         // least-squares slope, Hz/s
};

struct JitterFeatures {
  double absolute_s = 0.0;  // j1
  double relative = 0.0;    // j2, %
  double rap = 0.0;         // j3, %
  double ppq5 = 0.0;        // j4, %
};

struct ShimmerFeatures {
  double db = 0.0;       // s1
  double relative = 0.0; // s2, %
  double apq3 = 0.0;     // s3, %
  double apq5 = 0.0;     // s4, %
  double apq11 = 0.0;    // s5, %
};

// Autocorrelation pitch tracker over 40 ms frames at a 10 ms hop, restricted
// to the given voiced segments; search range 60-400 Hz with an octave-jump
// continuity constraint.
PitchTrack estimate_pitch(const AudioClip& clip, const std::vector<VoicedSegment>& segments);

// Cycle marks at successive waveform peaks near the predicted period.
// Voiced runs yielding fewer than 3 periods are skipped.
std::vector<CycleSequence> extract_cycles(const AudioClip& clip, const PitchTrack& track);

// Pseudo-words are runs of voiced segments separated by unvoiced gaps shorter
// than 300 ms; a gap of 300 ms or more is a word boundary.
DurationFeatures duration_features(const std::vector<VoicedSegment>& segments, int64_t clip_len);

F0Features f0_features(const PitchTrack& track);  // throws when nothing is voiced

// Jitter over cycle periods. Every index is a duration-weighted mean over the
// segments long enough to define it (2 periods for j1/j2, 3 for rap, 5 for
// ppq5); an index no segment qualifies for is 0. Throws when no segment has
// even 2 periods.
JitterFeatures jitter_features(const std::vector<CycleSequence>& cycles);

// Shimmer over cycle amplitudes; qualification rule as for jitter with
// 3/5/11-cycle windows for apq3/apq5/apq11.
ShimmerFeatures shimmer_features(const std::vector<CycleSequence>& cycles);

// Full 18-dimensional vector for a 48 kHz utterance. Throws ProsodyError
// ("no voiced content") for clips without usable voiced segments.
ProsodicVector prosodic_vector(const AudioClip& clip);

// Prosodic cache: CSV with header utterance_id,d1,...,s5 (19 columns),
// values printed with >= 9 significant digits.
void write_prosody_csv(const std::string& path,
                       const std::vector<std::pair<std::string, ProsodicVector>>& rows);
std::vector<std::pair<std::string, ProsodicVector>> read_prosody_csv(const std::string& path);

}  // namespace svkit
