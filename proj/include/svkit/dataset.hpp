#pragma once

#include <functional>
#include <string>
#include <vector>

#include "svkit/audio.hpp"
#include "svkit/dsp.hpp"
#include "svkit/model.hpp"
#include "svkit/prosody.hpp"

namespace svkit {

/// Extracted features of one utterance: CMVN'd MFSC stack, grid window
/// starts, prosodic vector and the speaker label within the owning DataSet.
struct UtteranceFeatures {
  std::string utterance_id;
  std::string speaker_id;
  Device device = Device::other;
  MfscStack stack;
  std::vector<int> window_starts;
  ProsodicVector prosody;
  int label = -1;
};

struct SkipRecord {
  std::string utterance_id;
  std::string reason;
};

struct DataSet {
  std::vector<UtteranceFeatures> utterances;
  std::vector<std::string> speakers;  // label order (sorted speaker ids)
  std::vector<SkipRecord> skipped;

  int n_speakers() const { return int(speakers.size()); }
  size_t n_windows() const {
    size_t n = 0;
    for (const auto& u : utterances) n += u.window_starts.size();
    return n;
  }
};

using ClipProvider = std::function<AudioClip(const ManifestEntry&)>;

// Clips are resampled to 48 kHz, run through the MFSC pipeline and the
// prosody extractor. Utterances whose extraction fails land in `skipped`
// rather than aborting the batch. Deterministic; extraction is parallel
// across utterances.
DataSet build_dataset(const std::vector<ManifestEntry>& manifest, const ClipProvider& provider);

// Same, loading clips from entry.path (optionally relative to base_dir).
DataSet build_dataset_from_files(const std::vector<ManifestEntry>& manifest,
                                 const std::string& base_dir = "");

// Rebuild from a feature cache directory written by the `features` command:
// <utterance_id>.mfsc files plus prosody.csv. Entries without both cache
// pieces are skipped.
DataSet build_dataset_from_cache(const std::vector<ManifestEntry>& manifest,
                                 const std::string& cache_dir);

// Assemble a {N, 40, 300, 3} batch from (utterance index, window start) pairs.
Tensor<Scalar> assemble_windows(const DataSet& data,
                                const std::vector<std::pair<int, int>>& picks);

// Assemble a {N, 18} batch of standardized prosodic vectors.
Tensor<Scalar> assemble_prosody(const DataSet& data, const std::vector<int>& utt_indices,
                                const Verifier& verifier);

}  // namespace svkit
