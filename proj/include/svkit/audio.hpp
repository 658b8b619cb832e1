#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace svkit {

struct AudioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Mono sample buffer. Samples are dimensionless amplitudes, nominally in
/// [-1, 1]; integer WAV data is scaled by 1/32768 on load.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;

  double duration_s() const {
    return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0;
  }
};

enum class Device { microphone, dvr, phone, other };

const char* device_name(Device d);
Device device_from_name(const std::string& name);  // throws AudioError on unknown

struct ManifestEntry {
  std::string utterance_id;
  std::string speaker_id;
  Device device = Device::other;
  std::string session;
  std::string path;
};

// RIFF/PCM WAV, 16-bit LE int or 32-bit LE float, any channel count
// (channels are averaged to mono) and any sample rate.
AudioClip load_wav(const std::string& path);
void save_wav_int16(const std::string& path, const AudioClip& clip);

// Windowed-sinc resampler to 48 kHz. A clip already at 48 kHz is returned
// unchanged, bit for bit.
AudioClip resample_48k(const AudioClip& clip);

// JSON-lines manifest: one object per line with string keys utterance_id,
// speaker_id, device, session, path. Duplicate utterance ids are an error.
std::vector<ManifestEntry> load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// Speaker-disjoint split. test_fraction in (0,1) applies to the speaker set;
// at least one speaker lands on each side.
void split_speakers(const std::vector<ManifestEntry>& entries, double test_fraction,
                    uint64_t seed, std::vector<ManifestEntry>& train,
                    std::vector<ManifestEntry>& test);

}  // namespace svkit
