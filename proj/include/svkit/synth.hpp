#pragma once

#include <cstdint>
#include <vector>

#include "svkit/audio.hpp"

namespace svkit {

/// Synthetic multi-speaker, multi-device corpus for desk-scale experiments.
/// Speakers differ in base F0 (a ladder over 80-300 Hz with enforced
/// separation) and in spectral envelope (three resonances); each utterance
/// carries its own amplitude and F0 micro-perturbations. Every (speaker,
/// utterance) pair is rendered once and then passed through one filter per
/// requested device, mimicking simultaneous recording on several channels.
struct SynthSpec {
  int n_speakers = 2;
  int utterances_per_speaker = 1;
  std::vector<Device> devices{Device::microphone};
  uint64_t seed = 0;
  double min_duration_s = 6.0;
};

// Target base F0 of one synthetic speaker (useful as a test oracle).
double synth_speaker_f0(const SynthSpec& spec, int speaker);

// Deterministic clip for (speaker, utterance, device); 48 kHz mono.
AudioClip synth_utterance(const SynthSpec& spec, int speaker, int utterance, Device device);

ManifestEntry synth_manifest_entry(const SynthSpec& spec, int speaker, int utterance,
                                   Device device, const std::string& wav_dir = "");

// Materializes the whole corpus. clips[i] corresponds to manifest[i].
void generate_synthetic_corpus(const SynthSpec& spec, std::vector<AudioClip>& clips,
                               std::vector<ManifestEntry>& manifest);

}  // namespace svkit
