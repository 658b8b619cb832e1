#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "svkit/dataset.hpp"
#include "svkit/model.hpp"

namespace svkit {

struct ScoreProtocol {
  int n_subpairs = 500;
  uint64_t seed = 0;
  bool symmetrize = false;
  double trim_sigma = 2.0;
  int max_pairs = 0;  // 0 = score every cross-utterance pair
};

struct PairScore {
  std::string utt_a, utt_b;
  double distance = 0.0;
  int label = -1;  // 0 genuine, 1 impostor, -1 unknown
};

struct RocCurve {
  std::vector<double> thresholds;  // ascending, with -inf/+inf sentinels
  std::vector<double> far;         // fraction of impostor distances < t
  std::vector<double> frr;         // fraction of genuine distances >= t
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

/// Mean of the values within [mu - k sigma, mu + k sigma] (population sigma);
/// falls back to mu when sigma is 0.
double trimmed_mean(const std::vector<double>& values, double k_sigma = 2.0);

/// Eval-mode embeddings of every grid window of one utterance (one row per
/// window). fc7 gives the CNN-only baseline embedding, fc8 the fused one.
enum class EmbeddingKind { fc8, fc7 };

struct UtteranceEmbeddings {
  int n_windows = 0;
  int dim = 0;
  std::vector<Scalar> values;  // row-major n_windows x dim
  const Scalar* row(int i) const { return values.data() + ptrdiff_t(i) * dim; }
};

std::vector<UtteranceEmbeddings> compute_embeddings(Verifier& verifier, const DataSet& data,
                                                    EmbeddingKind kind, int side = 0,
                                                    int batch = 32);

/// One direction of the 500-sub-pair protocol on cached embeddings.
double score_from_embeddings(const UtteranceEmbeddings& ea, const UtteranceEmbeddings& eb,
                             int n_subpairs, uint64_t seed, double trim_sigma = 2.0);

/// Full protocol for two utterances (embeddings computed on the fly); the
/// symmetrized mode averages both orders and is exactly symmetric.
PairScore score_pair(const UtteranceFeatures& a, const UtteranceFeatures& b, Verifier& verifier,
                     const ScoreProtocol& protocol);

RocCurve compute_roc(const std::vector<double>& genuine, const std::vector<double>& impostor);
EerResult compute_eer(const RocCurve& curve);
double compute_auc(const RocCurve& curve);

struct SubReport {
  double eer = 0.0, auc = 0.0;
  int n_genuine = 0, n_impostor = 0;
};

struct EvalReport {
  double eer = 0.0, auc = 0.0, eer_threshold = 0.0;
  int n_genuine = 0, n_impostor = 0;
  ScoreProtocol protocol;
  std::vector<PairScore> scores;
  RocCurve roc;
  std::map<std::string, SubReport> per_device_pair;
  uint64_t config_hash = 0;
};

/// Scores all (or a seeded sample of) cross-utterance pairs of the set,
/// labels them by speaker id and reports EER/AUC plus per-device-pair
/// sub-reports. `device_filter` keeps only pairs whose unordered device set
/// matches.
EvalReport evaluate(const DataSet& test, Verifier& verifier, const ScoreProtocol& protocol,
                    std::optional<std::pair<Device, Device>> device_filter = std::nullopt,
                    EmbeddingKind kind = EmbeddingKind::fc8);

std::string report_to_json(const EvalReport& report, const std::string& config_echo = "");
void write_roc_csv(const std::string& path, const RocCurve& curve,
                   const std::string& config_echo = "");

}  // namespace svkit
