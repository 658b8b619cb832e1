#include "svkit/dataset.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace svkit {

DataSet build_dataset(const std::vector<ManifestEntry>& manifest, const ClipProvider& provider) {
  struct Slot {
    UtteranceFeatures feat;
    std::string error;
    bool ok = false;
  };
  std::vector<Slot> slots(manifest.size());

#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < manifest.size(); ++i) {
    const ManifestEntry& e = manifest[i];
    Slot& slot = slots[i];
    try {
      AudioClip clip = resample_48k(provider(e));
      UtteranceFeatures f;
      f.utterance_id = e.utterance_id;
      f.speaker_id = e.speaker_id;
      f.device = e.device;
      f.stack = mfsc_pipeline(clip);
      if (f.stack.n_frames >= kShortFrames)
        for (int s = 0; s + kShortFrames <= f.stack.n_frames; s += kShortStride)
          f.window_starts.push_back(s);
      f.prosody = prosodic_vector(clip);
      slot.feat = std::move(f);
      slot.ok = true;
    } catch (const std::exception& ex) {
      slot.error = ex.what();
    }
  }

  DataSet data;
  std::set<std::string> speaker_set;
  for (size_t i = 0; i < manifest.size(); ++i) {
    if (slots[i].ok) {
      speaker_set.insert(slots[i].feat.speaker_id);
      data.utterances.push_back(std::move(slots[i].feat));
    } else {
      data.skipped.push_back({manifest[i].utterance_id, slots[i].error});
    }
  }
  data.speakers.assign(speaker_set.begin(), speaker_set.end());
  std::map<std::string, int> label_of;
  for (size_t i = 0; i < data.speakers.size(); ++i) label_of[data.speakers[i]] = int(i);
  for (auto& u : data.utterances) u.label = label_of[u.speaker_id];
  return data;
}

DataSet build_dataset_from_files(const std::vector<ManifestEntry>& manifest,
                                 const std::string& base_dir) {
  return build_dataset(manifest, [&base_dir](const ManifestEntry& e) {
    const std::string path =
        (base_dir.empty() || e.path.rfind('/', 0) == 0) ? e.path : base_dir + "/" + e.path;
    return load_wav(path);
  });
}

DataSet build_dataset_from_cache(const std::vector<ManifestEntry>& manifest,
                                 const std::string& cache_dir) {
  std::map<std::string, ProsodicVector> prosody;
  for (auto& [id, v] : read_prosody_csv(cache_dir + "/prosody.csv")) prosody[id] = v;

  DataSet data;
  std::set<std::string> speaker_set;
  for (const auto& e : manifest) {
    auto it = prosody.find(e.utterance_id);
    if (it == prosody.end()) {
      data.skipped.push_back({e.utterance_id, "no prosody cache row"});
      continue;
    }
    UtteranceFeatures f;
    f.utterance_id = e.utterance_id;
    f.speaker_id = e.speaker_id;
    f.device = e.device;
    try {
      f.stack = read_mfsc_cache(cache_dir + "/" + e.utterance_id + ".mfsc");
    } catch (const std::exception& ex) {
      data.skipped.push_back({e.utterance_id, ex.what()});
      continue;
    }
    if (f.stack.n_frames >= kShortFrames)
      for (int s = 0; s + kShortFrames <= f.stack.n_frames; s += kShortStride)
        f.window_starts.push_back(s);
    f.prosody = it->second;
    speaker_set.insert(f.speaker_id);
    data.utterances.push_back(std::move(f));
  }
  data.speakers.assign(speaker_set.begin(), speaker_set.end());
  std::map<std::string, int> label_of;
  for (size_t i = 0; i < data.speakers.size(); ++i) label_of[data.speakers[i]] = int(i);
  for (auto& u : data.utterances) u.label = label_of[u.speaker_id];
  return data;
}

Tensor<Scalar> assemble_windows(const DataSet& data,
                                const std::vector<std::pair<int, int>>& picks) {
  const int N = int(picks.size());
  Tensor<Scalar> batch({N, kMelBands, kShortFrames, 3});
  const size_t per_sample = size_t(kMelBands) * kShortFrames * 3;
  for (int n = 0; n < N; ++n) {
    const auto& [ui, start] = picks[size_t(n)];
    const MfscStack& stack = data.utterances[size_t(ui)].stack;
    for (int b = 0; b < kMelBands; ++b) {
      const float* src = &stack.values[(size_t(b) * stack.n_frames + start) * 3];
      std::copy(src, src + size_t(kShortFrames) * 3,
                batch.values.begin() + ptrdiff_t(n) * per_sample +
                    ptrdiff_t(b) * kShortFrames * 3);
    }
  }
  return batch;
}

Tensor<Scalar> assemble_prosody(const DataSet& data, const std::vector<int>& utt_indices,
                                const Verifier& verifier) {
  const int N = int(utt_indices.size());
  const int D = verifier.cfg().prosodic_dim;
  Tensor<Scalar> batch({N, D});
  for (int n = 0; n < N; ++n) {
    auto v = verifier.standardize_prosody(data.utterances[size_t(utt_indices[size_t(n)])].prosody);
    std::copy(v.begin(), v.end(), batch.values.begin() + ptrdiff_t(n) * D);
  }
  return batch;
}

}  // namespace svkit
