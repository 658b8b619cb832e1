#include "svkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

namespace svkit {

double trimmed_mean(const std::vector<double>& values, double k_sigma) {
  if (values.empty()) throw NnError("trimmed_mean: empty input");
  double mu = 0.0;
  for (double v : values) mu += v;
  mu /= double(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mu) * (v - mu);
  var /= double(values.size());
  const double sigma = std::sqrt(var);
  if (sigma <= 0.0) return mu;
  const double lo = mu - k_sigma * sigma, hi = mu + k_sigma * sigma;
  double acc = 0.0;
  int n = 0;
  for (double v : values)
    if (v >= lo && v <= hi) {
      acc += v;
      ++n;
    }
  return n > 0 ? acc / n : mu;
}

std::vector<UtteranceEmbeddings> compute_embeddings(Verifier& verifier, const DataSet& data,
                                                    EmbeddingKind kind, int side, int batch) {
  std::vector<UtteranceEmbeddings> out(data.utterances.size());
  const int dim = kind == EmbeddingKind::fc8 ? verifier.cfg().fc8 : verifier.cfg().fc7;

  // flatten all windows, embed in batches, scatter back
  std::vector<std::pair<int, int>> picks;
  for (size_t i = 0; i < data.utterances.size(); ++i) {
    out[i].n_windows = int(data.utterances[i].window_starts.size());
    out[i].dim = dim;
    out[i].values.resize(size_t(out[i].n_windows) * dim);
    for (int s : data.utterances[i].window_starts) picks.emplace_back(int(i), s);
  }

  Rng norng(0);
  std::vector<Scalar> flat(picks.size() * size_t(dim));
  for (size_t base = 0; base < picks.size(); base += size_t(batch)) {
    const size_t hi = std::min(picks.size(), base + size_t(batch));
    std::vector<std::pair<int, int>> chunk(picks.begin() + ptrdiff_t(base),
                                           picks.begin() + ptrdiff_t(hi));
    std::vector<int> utt_idx;
    for (auto& [ui, s] : chunk) utt_idx.push_back(ui);
    Tensor<Scalar> x = assemble_windows(data, chunk);
    Tensor<Scalar> z;
    if (kind == EmbeddingKind::fc8) {
      Tensor<Scalar> p = assemble_prosody(data, utt_idx, verifier);
      z = verifier.tower(side).embed_forward(x, p, /*train=*/false, norng, /*record=*/false);
    } else {
      z = verifier.tower(side).cnn_forward(x, /*train=*/false, norng, /*record=*/false);
    }
    std::copy(z.values.begin(), z.values.end(), flat.begin() + ptrdiff_t(base) * dim);
  }

  std::vector<int> cursor(data.utterances.size(), 0);
  for (size_t k = 0; k < picks.size(); ++k) {
    const int ui = picks[k].first;
    std::copy(flat.begin() + ptrdiff_t(k) * dim, flat.begin() + ptrdiff_t(k + 1) * dim,
              out[size_t(ui)].values.begin() + ptrdiff_t(cursor[size_t(ui)]) * dim);
    ++cursor[size_t(ui)];
  }
  return out;
}

double score_from_embeddings(const UtteranceEmbeddings& ea, const UtteranceEmbeddings& eb,
                             int n_subpairs, uint64_t seed, double trim_sigma) {
  if (ea.n_windows < 1 || eb.n_windows < 1)
    throw NnError("score_pair: utterance too short (no 3 s window)");
  if (ea.dim != eb.dim) throw NnError("score_pair: embedding dim mismatch");
  Rng rng(seed);
  std::vector<double> dists(size_t(n_subpairs), 0.0);
  for (int k = 0; k < n_subpairs; ++k) {
    const int i = int(rng.uniform_index(uint64_t(ea.n_windows)));
    const int j = int(rng.uniform_index(uint64_t(eb.n_windows)));
    const Scalar* a = ea.row(i);
    const Scalar* b = eb.row(j);
    double d2 = 0.0;
    for (int c = 0; c < ea.dim; ++c) {
      const double d = double(a[c]) - double(b[c]);
      d2 += d * d;
    }
    dists[size_t(k)] = std::sqrt(d2);
  }
  return trimmed_mean(dists, trim_sigma);
}

namespace {

uint64_t pair_seed(const ScoreProtocol& protocol, const std::string& a, const std::string& b) {
  // symmetric in (a, b) so the symmetrized mode is exactly order-invariant
  const uint64_t ha = Rng::mix(fnv1a_hash(a));
  const uint64_t hb = Rng::mix(fnv1a_hash(b));
  return Rng::mix(protocol.seed ^ (ha ^ hb));
}

UtteranceEmbeddings embed_single(Verifier& verifier, const UtteranceFeatures& u, int side) {
  DataSet tmp;
  tmp.utterances.push_back(u);
  tmp.speakers.push_back(u.speaker_id);
  auto e = compute_embeddings(verifier, tmp, EmbeddingKind::fc8, side);
  return e[0];
}

}  // namespace

PairScore score_pair(const UtteranceFeatures& a, const UtteranceFeatures& b, Verifier& verifier,
                     const ScoreProtocol& protocol) {
  UtteranceEmbeddings ea = embed_single(verifier, a, 0);
  UtteranceEmbeddings eb =
      embed_single(verifier, b, verifier.cfg().weight_sharing ? 0 : 1);
  const uint64_t seed = pair_seed(protocol, a.utterance_id, b.utterance_id);
  PairScore score;
  score.utt_a = a.utterance_id;
  score.utt_b = b.utterance_id;
  if (protocol.symmetrize) {
    const double dab =
        score_from_embeddings(ea, eb, protocol.n_subpairs, seed, protocol.trim_sigma);
    const double dba =
        score_from_embeddings(eb, ea, protocol.n_subpairs, seed, protocol.trim_sigma);
    score.distance = 0.5 * (dab + dba);
  } else {
    score.distance = score_from_embeddings(ea, eb, protocol.n_subpairs, seed, protocol.trim_sigma);
  }
  score.label = a.speaker_id == b.speaker_id ? 0 : 1;
  return score;
}

RocCurve compute_roc(const std::vector<double>& genuine, const std::vector<double>& impostor) {
  if (genuine.empty() || impostor.empty())
    throw NnError("compute_roc: need both genuine and impostor scores");
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<double> thresholds;
  thresholds.push_back(-inf);
  {
    std::set<double> uniq(genuine.begin(), genuine.end());
    uniq.insert(impostor.begin(), impostor.end());
    thresholds.insert(thresholds.end(), uniq.begin(), uniq.end());
  }
  thresholds.push_back(inf);

  std::vector<double> gen_sorted = genuine, imp_sorted = impostor;
  std::sort(gen_sorted.begin(), gen_sorted.end());
  std::sort(imp_sorted.begin(), imp_sorted.end());

  RocCurve curve;
  curve.thresholds = thresholds;
  for (double t : thresholds) {
    const auto below =
        std::lower_bound(imp_sorted.begin(), imp_sorted.end(), t) - imp_sorted.begin();
    const auto at_or_above =
        gen_sorted.end() - std::lower_bound(gen_sorted.begin(), gen_sorted.end(), t);
    curve.far.push_back(double(below) / double(imp_sorted.size()));
    curve.frr.push_back(double(at_or_above) / double(gen_sorted.size()));
  }
  return curve;
}

EerResult compute_eer(const RocCurve& curve) {
  const size_t n = curve.thresholds.size();
  if (n == 0) throw NnError("compute_eer: empty curve");
  for (size_t k = 0; k < n; ++k) {
    const double d = curve.far[k] - curve.frr[k];
    if (d == 0.0) return {curve.far[k], curve.thresholds[k]};
    if (d > 0.0) {
      if (k == 0) return {curve.far[0], curve.thresholds[0]};
      const double d0 = curve.far[k - 1] - curve.frr[k - 1];
      const double x = d0 / (d0 - d);  // crossing fraction between k-1 and k
      const double far_x = curve.far[k - 1] + x * (curve.far[k] - curve.far[k - 1]);
      const double frr_x = curve.frr[k - 1] + x * (curve.frr[k] - curve.frr[k - 1]);
      double t0 = curve.thresholds[k - 1], t1 = curve.thresholds[k];
      double thr;
      if (std::isinf(t0) && std::isinf(t1))
        thr = 0.0;
      else if (std::isinf(t0))
        thr = t1;
      else if (std::isinf(t1))
        thr = t0;
      else
        thr = t0 + x * (t1 - t0);
      return {0.5 * (far_x + frr_x), thr};
    }
  }
  return {curve.far.back(), curve.thresholds.back()};
}

double compute_auc(const RocCurve& curve) {
  // TPR (= 1 - FRR) against FPR (= FAR), trapezoidal
  double auc = 0.0;
  for (size_t k = 1; k < curve.thresholds.size(); ++k) {
    const double dx = curve.far[k] - curve.far[k - 1];
    const double y0 = 1.0 - curve.frr[k - 1];
    const double y1 = 1.0 - curve.frr[k];
    auc += dx * 0.5 * (y0 + y1);
  }
  return auc;
}

namespace {

std::string device_pair_key(Device a, Device b) {
  std::string da = device_name(a), db = device_name(b);
  if (db < da) std::swap(da, db);
  return da + "," + db;
}

SubReport sub_report(const std::vector<double>& gen, const std::vector<double>& imp) {
  SubReport r;
  r.n_genuine = int(gen.size());
  r.n_impostor = int(imp.size());
  if (!gen.empty() && !imp.empty()) {
    RocCurve curve = compute_roc(gen, imp);
    r.eer = compute_eer(curve).eer;
    r.auc = compute_auc(curve);
  }
  return r;
}

}  // namespace

EvalReport evaluate(const DataSet& test, Verifier& verifier, const ScoreProtocol& protocol,
                    std::optional<std::pair<Device, Device>> device_filter, EmbeddingKind kind) {
  EvalReport report;
  report.protocol = protocol;
  report.config_hash = verifier.cfg().hash();

  const bool shared = verifier.cfg().weight_sharing;
  auto emb_a = compute_embeddings(verifier, test, kind, 0);
  auto emb_b = shared ? emb_a : compute_embeddings(verifier, test, kind, 1);

  struct PairIdx {
    int a, b;
  };
  std::vector<PairIdx> pairs;
  for (size_t i = 0; i < test.utterances.size(); ++i) {
    for (size_t j = i + 1; j < test.utterances.size(); ++j) {
      if (test.utterances[i].window_starts.empty() || test.utterances[j].window_starts.empty())
        continue;
      if (device_filter) {
        const std::string want = device_pair_key(device_filter->first, device_filter->second);
        if (device_pair_key(test.utterances[i].device, test.utterances[j].device) != want)
          continue;
      }
      pairs.push_back({int(i), int(j)});
    }
  }
  if (protocol.max_pairs > 0 && int(pairs.size()) > protocol.max_pairs) {
    Rng rng = Rng(protocol.seed).fork(0x70616972ULL);
    rng.shuffle(pairs);
    pairs.resize(size_t(protocol.max_pairs));
    std::sort(pairs.begin(), pairs.end(),
              [](const PairIdx& x, const PairIdx& y) { return x.a != y.a ? x.a < y.a : x.b < y.b; });
  }
  if (pairs.empty()) throw NnError("evaluate: no pairs match the selection");

  report.scores.resize(pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (size_t k = 0; k < pairs.size(); ++k) {
    const auto& ua = test.utterances[size_t(pairs[k].a)];
    const auto& ub = test.utterances[size_t(pairs[k].b)];
    const uint64_t seed = pair_seed(protocol, ua.utterance_id, ub.utterance_id);
    PairScore s;
    s.utt_a = ua.utterance_id;
    s.utt_b = ub.utterance_id;
    const auto& ea = emb_a[size_t(pairs[k].a)];
    const auto& eb = emb_b[size_t(pairs[k].b)];
    if (protocol.symmetrize) {
      const auto& ea2 = emb_a[size_t(pairs[k].b)];
      const auto& eb2 = emb_b[size_t(pairs[k].a)];
      const double dab =
          score_from_embeddings(ea, eb, protocol.n_subpairs, seed, protocol.trim_sigma);
      const double dba =
          score_from_embeddings(ea2, eb2, protocol.n_subpairs, seed, protocol.trim_sigma);
      s.distance = 0.5 * (dab + dba);
    } else {
      s.distance = score_from_embeddings(ea, eb, protocol.n_subpairs, seed, protocol.trim_sigma);
    }
    s.label = ua.speaker_id == ub.speaker_id ? 0 : 1;
    report.scores[k] = std::move(s);
  }

  std::vector<double> gen, imp;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_device;
  for (size_t k = 0; k < pairs.size(); ++k) {
    const auto& s = report.scores[k];
    const auto& ua = test.utterances[size_t(pairs[k].a)];
    const auto& ub = test.utterances[size_t(pairs[k].b)];
    auto& bucket = by_device[device_pair_key(ua.device, ub.device)];
    if (s.label == 0) {
      gen.push_back(s.distance);
      bucket.first.push_back(s.distance);
    } else {
      imp.push_back(s.distance);
      bucket.second.push_back(s.distance);
    }
  }
  if (gen.empty() || imp.empty())
    throw NnError("evaluate: selection has no genuine or no impostor pairs");

  report.n_genuine = int(gen.size());
  report.n_impostor = int(imp.size());
  report.roc = compute_roc(gen, imp);
  const EerResult eer = compute_eer(report.roc);
  report.eer = eer.eer;
  report.eer_threshold = eer.threshold;
  report.auc = compute_auc(report.roc);
  for (const auto& [key, bucket] : by_device)
    report.per_device_pair[key] = sub_report(bucket.first, bucket.second);
  return report;
}

std::string report_to_json(const EvalReport& report, const std::string& config_echo) {
  nlohmann::ordered_json j;
  j["eer"] = report.eer;
  j["auc"] = report.auc;
  j["eer_threshold"] = report.eer_threshold;
  j["n_genuine"] = report.n_genuine;
  j["n_impostor"] = report.n_impostor;
  j["protocol"] = {{"n_subpairs", report.protocol.n_subpairs},
                   {"seed", report.protocol.seed},
                   {"symmetrize", report.protocol.symmetrize},
                   {"trim_rule", "mean of values within " +
                                     std::to_string(report.protocol.trim_sigma) +
                                     " standard deviations"},
                   {"sampling", "with replacement"},
                   {"max_pairs", report.protocol.max_pairs}};
  j["config_hash"] = std::to_string(report.config_hash);
  if (!report.per_device_pair.empty()) {
    nlohmann::ordered_json sub;
    for (const auto& [key, r] : report.per_device_pair)
      sub[key] = {{"eer", r.eer},
                  {"auc", r.auc},
                  {"n_genuine", r.n_genuine},
                  {"n_impostor", r.n_impostor}};
    j["per_device_pair"] = sub;
  }
  if (!config_echo.empty()) j["config"] = config_echo;
  return j.dump(2);
}

void write_roc_csv(const std::string& path, const RocCurve& curve,
                   const std::string& config_echo) {
  std::ofstream out(path);
  if (!out) throw NnError("cannot write ROC csv '" + path + "'");
  if (!config_echo.empty()) {
    std::istringstream is(config_echo);
    std::string line;
    while (std::getline(is, line)) out << "# " << line << "\n";
  }
  out << "threshold,far,frr\n";
  char buf[128];
  for (size_t k = 0; k < curve.thresholds.size(); ++k) {
    const double t = curve.thresholds[k];
    if (std::isinf(t))
      out << (t < 0 ? "-inf" : "inf");
    else {
      std::snprintf(buf, sizeof buf, "%.10g", t);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.10g,%.10g\n", curve.far[k], curve.frr[k]);
    out << buf;
  }
}

}  // namespace svkit
