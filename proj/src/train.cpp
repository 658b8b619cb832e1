#include "svkit/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace svkit {

void TrainConfig::validate() const {
  if (batch_size < 1 || lr_initial <= 0.0 || lr_decay_factor <= 0.0 || lr_decay_epochs < 1)
    throw NnError("train config: invalid optimizer settings");
  if (dropout < 0.0 || dropout >= 1.0) throw NnError("train config: dropout must be in [0,1)");
  if (margin <= 0.0) throw NnError("train config: margin must be positive");
  if (cnn_epochs < 1 || mlp_epochs < 1 || fusion_epochs < 1 || joint_epochs < 1 ||
      siamese_epochs < 1)
    throw NnError("train config: epochs must be positive");
}

double lr_schedule(int epoch, double lr_initial, double factor, int decay_epochs) {
  if (epoch < 0) throw NnError("lr_schedule: epoch must be >= 0");
  return lr_initial * std::pow(factor, double(epoch / decay_epochs));
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  return lr_schedule(epoch, cfg.lr_initial, cfg.lr_decay_factor, cfg.lr_decay_epochs);
}

VerifierConfig verifier_config_for(const TrainConfig& cfg, int n_classes, bool weight_sharing) {
  VerifierConfig v;
  v.margin = cfg.margin;
  v.dropout_rate = cfg.dropout;
  v.bn_decay = cfg.bn_decay;
  v.n_classes = n_classes;
  v.weight_sharing = weight_sharing;
  return v;
}

namespace {

constexpr uint64_t kStageTagCnn = 0x7374616765636eULL;
constexpr uint64_t kStageTagMlp = 0x73746167656d6cULL;
constexpr uint64_t kStageTagFusion = 0x7374616765667aULL;
constexpr uint64_t kStageTagJoint = 0x73746167656a74ULL;
constexpr uint64_t kStageTagSiamese = 0x7374616765736dULL;

std::string join_speakers(const DataSet& data) {
  std::string s;
  for (size_t i = 0; i < data.speakers.size(); ++i) {
    if (i) s += ";";
    s += data.speakers[i];
  }
  return s;
}

void check_finite(double loss, const std::string& stage, int epoch, int step) {
  if (!std::isfinite(loss))
    throw NnError(stage + " diverged: non-finite loss at epoch " + std::to_string(epoch) +
                  " step " + std::to_string(step));
}

void require_stage(const Checkpoint& ckpt, const std::string& expected) {
  const std::string got = ckpt.meta_or("stage", "?");
  if (got != expected)
    throw NnError("checkpoint stage mismatch: expected a '" + expected + "' checkpoint, got '" +
                  got + "'");
}

void require_dataset_match(const Checkpoint& ckpt, const DataSet& data) {
  const std::string sp = ckpt.meta_or("speakers", "");
  if (!sp.empty() && sp != join_speakers(data))
    throw NnError("checkpoint was trained on a different speaker set");
}

void stamp_metadata(Checkpoint& ckpt, const std::string& stage, const DataSet& data,
                    const TrainConfig& cfg, int epochs, double final_lr) {
  ckpt.metadata["stage"] = stage;
  ckpt.metadata["epoch"] = std::to_string(epochs);
  ckpt.metadata["seed"] = std::to_string(cfg.seed);
  {
    std::ostringstream os;
    os.precision(17);
    os << final_lr;
    ckpt.metadata["final_lr"] = os.str();
  }
  ckpt.metadata["n_classes"] = std::to_string(data.n_speakers());
  ckpt.metadata["speakers"] = join_speakers(data);
  ckpt.metadata["margin"] = std::to_string(cfg.margin);
}

uint64_t bytes_hash(const std::vector<float>& v) {
  std::string s(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
  return fnv1a_hash(s);
}

// snapshot of every currently-frozen parameter, for the freeze contract
std::map<std::string, uint64_t> frozen_snapshot(const Verifier& verifier) {
  std::map<std::string, uint64_t> snap;
  for (const auto& p : verifier.store())
    if (!p->trainable) snap[p->name] = bytes_hash(p->tensor.values);
  return snap;
}

void verify_frozen_unchanged(const Verifier& verifier, const std::map<std::string, uint64_t>& snap,
                             const std::string& stage,
                             const std::vector<std::string>& allowed_to_change = {}) {
  for (const auto& p : verifier.store()) {
    auto it = snap.find(p->name);
    if (it == snap.end()) continue;
    if (std::find(allowed_to_change.begin(), allowed_to_change.end(), p->name) !=
        allowed_to_change.end())
      continue;
    if (bytes_hash(p->tensor.values) != it->second)
      throw NnError(stage + ": frozen parameter '" + p->name + "' changed");
  }
}

// all windows of the set as (utterance, start) pairs in manifest order
std::vector<std::pair<int, int>> all_windows(const DataSet& data) {
  std::vector<std::pair<int, int>> w;
  for (size_t i = 0; i < data.utterances.size(); ++i)
    for (int s : data.utterances[size_t(i)].window_starts) w.emplace_back(int(i), s);
  return w;
}

int capped_batches(size_t n_samples, int batch_size, int cap) {
  int n = int(n_samples) / batch_size;
  if (cap > 0) n = std::min(n, cap);
  return n;
}

}  // namespace

std::vector<PairSample> sample_balanced_pairs(const DataSet& data, int n_pairs, uint64_t seed,
                                              std::optional<std::pair<Device, Device>> routing) {
  Rng rng(seed);

  auto side_utts = [&](bool side_b) {
    std::vector<int> utts;
    for (size_t i = 0; i < data.utterances.size(); ++i) {
      if (data.utterances[i].window_starts.empty()) continue;
      if (routing) {
        Device want = side_b ? routing->second : routing->first;
        if (data.utterances[i].device != want) continue;
      }
      utts.push_back(int(i));
    }
    return utts;
  };
  const std::vector<int> side_a = side_utts(false);
  const std::vector<int> side_b = side_utts(true);
  if (side_a.empty() || side_b.empty())
    throw NnError("pair sampling: no usable utterances on one side");

  std::map<int, std::vector<int>> by_speaker_a, by_speaker_b;
  for (int i : side_a) by_speaker_a[data.utterances[size_t(i)].label].push_back(i);
  for (int i : side_b) by_speaker_b[data.utterances[size_t(i)].label].push_back(i);

  // speakers that can yield a genuine pair that is not a window paired with itself
  std::vector<int> genuine_speakers;
  for (const auto& [label, utts_a] : by_speaker_a) {
    auto it = by_speaker_b.find(label);
    if (it == by_speaker_b.end()) continue;
    bool ok = false;
    for (int a : utts_a) {
      for (int b : it->second) {
        if (a != b || data.utterances[size_t(a)].window_starts.size() >= 2) ok = true;
      }
    }
    if (ok) genuine_speakers.push_back(label);
  }
  std::vector<int> speakers_a, speakers_b;
  for (const auto& [label, _] : by_speaker_a) speakers_a.push_back(label);
  for (const auto& [label, _] : by_speaker_b) speakers_b.push_back(label);

  bool impostor_possible = false;
  for (int sa : speakers_a)
    for (int sb : speakers_b)
      if (sa != sb) impostor_possible = true;
  if (genuine_speakers.empty() || !impostor_possible)
    throw NnError("pair sampling: cannot balance genuine and impostor pairs");

  auto pick_window = [&](int utt) {
    const auto& w = data.utterances[size_t(utt)].window_starts;
    return w[rng.uniform_index(w.size())];
  };

  std::vector<PairSample> pairs;
  const int n = n_pairs - n_pairs % 2;
  pairs.reserve(size_t(n));
  for (int k = 0; k < n; ++k) {
    PairSample p;
    p.label = k % 2;
    if (p.label == 0) {
      const int s = genuine_speakers[rng.uniform_index(genuine_speakers.size())];
      const auto& ua = by_speaker_a[s];
      const auto& ub = by_speaker_b[s];
      for (int attempt = 0; attempt < 256; ++attempt) {
        p.utt_a = ua[rng.uniform_index(ua.size())];
        p.utt_b = ub[rng.uniform_index(ub.size())];
        p.win_a = pick_window(p.utt_a);
        p.win_b = pick_window(p.utt_b);
        if (p.utt_a != p.utt_b || p.win_a != p.win_b) break;
      }
      if (p.utt_a == p.utt_b && p.win_a == p.win_b)
        throw NnError("pair sampling: could not draw a valid genuine pair");
    } else {
      for (int attempt = 0; attempt < 256; ++attempt) {
        const int sa = speakers_a[rng.uniform_index(speakers_a.size())];
        const int sb = speakers_b[rng.uniform_index(speakers_b.size())];
        if (sa == sb) continue;
        const auto& ua = by_speaker_a[sa];
        const auto& ub = by_speaker_b[sb];
        p.utt_a = ua[rng.uniform_index(ua.size())];
        p.utt_b = ub[rng.uniform_index(ub.size())];
        p.win_a = pick_window(p.utt_a);
        p.win_b = pick_window(p.utt_b);
        break;
      }
    }
    pairs.push_back(p);
  }
  return pairs;
}

// ---- classifier stages ----

namespace {

double batch_accuracy(const Tensor<Scalar>& logits, const std::vector<int>& labels) {
  const int N = logits.dim(0), K = logits.dim(1);
  int hits = 0;
  for (int n = 0; n < N; ++n) {
    const Scalar* row = logits.values.data() + ptrdiff_t(n) * K;
    int arg = 0;
    for (int k = 1; k < K; ++k)
      if (row[k] > row[arg]) arg = k;
    hits += (arg == labels[size_t(n)]) ? 1 : 0;
  }
  return double(hits) / N;
}

}  // namespace

StageOutput pretrain_cnn_classifier(const DataSet& train, const TrainConfig& cfg) {
  cfg.validate();
  if (train.n_speakers() < 2) throw NnError("cnn stage: need at least 2 speakers");
  Verifier verifier(verifier_config_for(cfg, train.n_speakers(), true), cfg.seed);
  Tower& tower = verifier.tower();

  verifier.freeze_all();
  verifier.set_trainable(tower.cnn_param_names(), true);
  verifier.set_trainable(tower.head_param_names(ClassifierStage::cnn_only), true);

  nn::SgdMomentum<Scalar> opt(cfg.momentum, cfg.weight_decay);
  Rng rng = Rng(cfg.seed).fork(kStageTagCnn);
  auto windows = all_windows(train);
  if (windows.empty()) throw NnError("cnn stage: no training windows");

  StageOutput out;
  double lr = cfg.lr_initial;
  for (int epoch = 0; epoch < cfg.cnn_epochs; ++epoch) {
    lr = lr_schedule(epoch, cfg);
    Rng erng = rng.fork(uint64_t(epoch));
    erng.shuffle(windows);
    const int batch = std::max(2, std::min<int>(cfg.batch_size, int(windows.size())));
    const int n_batches = capped_batches(windows.size(), batch, cfg.batches_per_epoch);
    if (n_batches == 0) throw NnError("cnn stage: not enough windows for one batch");
    for (int bi = 0; bi < n_batches; ++bi) {
      std::vector<std::pair<int, int>> picks(windows.begin() + ptrdiff_t(bi) * batch,
                                             windows.begin() + ptrdiff_t(bi + 1) * batch);
      std::vector<int> labels;
      for (auto& [ui, s] : picks) labels.push_back(train.utterances[size_t(ui)].label);

      Tensor<Scalar> x = assemble_windows(train, picks);
      verifier.store().zero_grads();
      Tensor<Scalar> f7 = tower.cnn_forward(x, /*train=*/true, erng, /*record=*/true);
      Tensor<Scalar> logits = tower.head_forward(ClassifierStage::cnn_only, f7, true);
      Tensor<Scalar> dlogits;
      const double loss = nn::softmax_cross_entropy(logits, labels, &dlogits);
      check_finite(loss, "cnn stage", epoch, bi);
      Tensor<Scalar> dfeat = tower.head_backward(ClassifierStage::cnn_only, dlogits);
      tower.cnn_backward(dfeat);
      opt.step(verifier.store(), lr);
      out.log.push_back({epoch, bi, lr, loss, batch_accuracy(logits, labels)});
    }
  }

  out.final_lr = lr;
  out.checkpoint = verifier.export_checkpoint(/*include_heads=*/true);
  stamp_metadata(out.checkpoint, "cnn", train, cfg, cfg.cnn_epochs, lr);
  return out;
}

StageOutput pretrain_mlp(const DataSet& train, const TrainConfig& cfg) {
  cfg.validate();
  if (train.n_speakers() < 2) throw NnError("mlp stage: need at least 2 speakers");
  Verifier verifier(verifier_config_for(cfg, train.n_speakers(), true), cfg.seed);
  Tower& tower = verifier.tower();

  // standardization statistics from the training set, persisted in the checkpoint
  std::array<double, 18> mean{}, stddev{};
  for (const auto& u : train.utterances)
    for (int i = 0; i < 18; ++i) mean[size_t(i)] += u.prosody[size_t(i)];
  for (auto& m : mean) m /= double(train.utterances.size());
  for (const auto& u : train.utterances)
    for (int i = 0; i < 18; ++i) {
      const double d = u.prosody[size_t(i)] - mean[size_t(i)];
      stddev[size_t(i)] += d * d;
    }
  for (auto& s : stddev) s = std::sqrt(s / double(train.utterances.size()));
  verifier.set_prosody_norm(mean, stddev);

  verifier.freeze_all();
  verifier.set_trainable(tower.mlp_param_names(), true);
  verifier.set_trainable(tower.head_param_names(ClassifierStage::mlp_only), true);

  nn::SgdMomentum<Scalar> opt(cfg.momentum, cfg.weight_decay);
  Rng rng = Rng(cfg.seed).fork(kStageTagMlp);
  std::vector<int> utts(train.utterances.size());
  std::iota(utts.begin(), utts.end(), 0);

  StageOutput out;
  double lr = cfg.lr_initial;
  for (int epoch = 0; epoch < cfg.mlp_epochs; ++epoch) {
    lr = lr_schedule(epoch, cfg);
    Rng erng = rng.fork(uint64_t(epoch));
    erng.shuffle(utts);
    const int batch = std::max(2, std::min<int>(cfg.batch_size, int(utts.size())));
    const int n_batches = capped_batches(utts.size(), batch, cfg.batches_per_epoch);
    if (n_batches == 0) throw NnError("mlp stage: not enough utterances for one batch");
    for (int bi = 0; bi < n_batches; ++bi) {
      std::vector<int> idx(utts.begin() + ptrdiff_t(bi) * batch,
                           utts.begin() + ptrdiff_t(bi + 1) * batch);
      std::vector<int> labels;
      for (int ui : idx) labels.push_back(train.utterances[size_t(ui)].label);

      Tensor<Scalar> p = assemble_prosody(train, idx, verifier);
      verifier.store().zero_grads();
      Tensor<Scalar> feats = tower.mlp_forward(p, /*train=*/true, erng, /*record=*/true);
      Tensor<Scalar> logits = tower.head_forward(ClassifierStage::mlp_only, feats, true);
      Tensor<Scalar> dlogits;
      const double loss = nn::softmax_cross_entropy(logits, labels, &dlogits);
      check_finite(loss, "mlp stage", epoch, bi);
      Tensor<Scalar> dfeat = tower.head_backward(ClassifierStage::mlp_only, dlogits);
      tower.mlp_backward(dfeat);
      opt.step(verifier.store(), lr);
      out.log.push_back({epoch, bi, lr, loss, batch_accuracy(logits, labels)});
    }
  }

  out.final_lr = lr;
  out.checkpoint = verifier.export_checkpoint(/*include_heads=*/true);
  stamp_metadata(out.checkpoint, "mlp", train, cfg, cfg.mlp_epochs, lr);
  return out;
}

StageOutput train_fusion_greedy(const Checkpoint& cnn_ckpt, const Checkpoint& mlp_ckpt,
                                const DataSet& train, const TrainConfig& cfg) {
  cfg.validate();
  require_stage(cnn_ckpt, "cnn");
  require_stage(mlp_ckpt, "mlp");
  require_dataset_match(cnn_ckpt, train);
  require_dataset_match(mlp_ckpt, train);

  Verifier verifier(verifier_config_for(cfg, train.n_speakers(), true), cfg.seed);
  Tower& tower = verifier.tower();
  verifier.import_checkpoint(cnn_ckpt);
  // overlay the MLP side (and the standardization stats) from the MLP stage
  {
    std::vector<std::string> mlp_names = tower.mlp_param_names();
    for (const auto& n : tower.head_param_names(ClassifierStage::mlp_only)) mlp_names.push_back(n);
    mlp_names.push_back("prosody_norm.mean");
    mlp_names.push_back("prosody_norm.std");
    for (const auto& name : mlp_names) {
      const Checkpoint::Record* r = mlp_ckpt.find(name);
      if (!r) throw NnError("mlp checkpoint is missing parameter '" + name + "'");
      verifier.store().find(name)->tensor.values = r->values;
    }
  }

  // "smallest final learning rate among two networks"
  const double lr0 = std::stod(cnn_ckpt.meta_or("final_lr", "0"));
  const double lr1 = std::stod(mlp_ckpt.meta_or("final_lr", "0"));
  if (lr0 <= 0.0 || lr1 <= 0.0) throw NnError("fusion stage: missing final_lr metadata");
  const double stage_lr_init = std::min(lr0, lr1);

  verifier.freeze_all();
  verifier.set_trainable(tower.fc8_param_names(), true);
  verifier.set_trainable(tower.head_param_names(ClassifierStage::joint), true);
  const auto snapshot = frozen_snapshot(verifier);

  // Towers are frozen and run in eval mode, so FC7 / MLP outputs per window
  // are constants; compute them once instead of re-running the CNN per step.
  auto windows = all_windows(train);
  if (windows.empty()) throw NnError("fusion stage: no training windows");
  Rng norng(0);
  const int D7 = verifier.cfg().fc7, DM = verifier.cfg().mlp_out;
  std::vector<Scalar> fc7_feats(windows.size() * size_t(D7));
  {
    const int chunk = 32;
    for (size_t base = 0; base < windows.size(); base += chunk) {
      const size_t hi = std::min(windows.size(), base + chunk);
      std::vector<std::pair<int, int>> picks(windows.begin() + ptrdiff_t(base),
                                             windows.begin() + ptrdiff_t(hi));
      Tensor<Scalar> x = assemble_windows(train, picks);
      Tensor<Scalar> f7 = tower.cnn_forward(x, /*train=*/false, norng, /*record=*/false);
      std::copy(f7.values.begin(), f7.values.end(), fc7_feats.begin() + ptrdiff_t(base) * D7);
    }
  }
  std::vector<Scalar> mlp_feats(train.utterances.size() * size_t(DM));
  {
    std::vector<int> idx(train.utterances.size());
    std::iota(idx.begin(), idx.end(), 0);
    Tensor<Scalar> p = assemble_prosody(train, idx, verifier);
    Tensor<Scalar> m = tower.mlp_forward(p, /*train=*/false, norng, /*record=*/false);
    mlp_feats = m.values;
  }

  nn::SgdMomentum<Scalar> opt(cfg.momentum, cfg.weight_decay);
  Rng rng = Rng(cfg.seed).fork(kStageTagFusion);
  std::vector<int> order(windows.size());
  std::iota(order.begin(), order.end(), 0);

  StageOutput out;
  double lr = stage_lr_init;
  for (int epoch = 0; epoch < cfg.fusion_epochs; ++epoch) {
    lr = lr_schedule(epoch, stage_lr_init, cfg.lr_decay_factor, cfg.lr_decay_epochs);
    Rng erng = rng.fork(uint64_t(epoch));
    erng.shuffle(order);
    const int batch = std::max(2, std::min<int>(cfg.batch_size, int(order.size())));
    const int n_batches = capped_batches(order.size(), batch, cfg.batches_per_epoch);
    if (n_batches == 0) throw NnError("fusion stage: not enough windows for one batch");
    for (int bi = 0; bi < n_batches; ++bi) {
      Tensor<Scalar> f7({batch, D7}), fm({batch, DM});
      std::vector<int> labels;
      for (int n = 0; n < batch; ++n) {
        const int wi = order[size_t(bi) * batch + size_t(n)];
        const int ui = windows[size_t(wi)].first;
        std::copy(fc7_feats.begin() + ptrdiff_t(wi) * D7,
                  fc7_feats.begin() + ptrdiff_t(wi + 1) * D7,
                  f7.values.begin() + ptrdiff_t(n) * D7);
        std::copy(mlp_feats.begin() + ptrdiff_t(ui) * DM,
                  mlp_feats.begin() + ptrdiff_t(ui + 1) * DM,
                  fm.values.begin() + ptrdiff_t(n) * DM);
        labels.push_back(train.utterances[size_t(ui)].label);
      }
      verifier.store().zero_grads();
      Tensor<Scalar> z = tower.fc8_forward(f7, fm, /*record=*/true);
      Tensor<Scalar> logits = tower.head_forward(ClassifierStage::joint, z, true);
      Tensor<Scalar> dlogits;
      const double loss = nn::softmax_cross_entropy(logits, labels, &dlogits);
      check_finite(loss, "fusion stage", epoch, bi);
      Tensor<Scalar> dz = tower.head_backward(ClassifierStage::joint, dlogits);
      tower.fc8_backward(dz);
      opt.step(verifier.store(), lr);
      out.log.push_back({epoch, bi, lr, loss, batch_accuracy(logits, labels)});
    }
  }

  verify_frozen_unchanged(verifier, snapshot, "fusion stage");
  out.final_lr = lr;
  out.checkpoint = verifier.export_checkpoint(/*include_heads=*/true);
  stamp_metadata(out.checkpoint, "fusion", train, cfg, cfg.fusion_epochs, lr);
  out.checkpoint.metadata["fusion_lr_init"] = std::to_string(stage_lr_init);
  return out;
}

StageOutput finetune_joint_classifier(const Checkpoint& fusion_ckpt, const DataSet& train,
                                      const TrainConfig& cfg) {
  cfg.validate();
  require_stage(fusion_ckpt, "fusion");
  require_dataset_match(fusion_ckpt, train);

  Verifier verifier(verifier_config_for(cfg, train.n_speakers(), true), cfg.seed);
  Tower& tower = verifier.tower();
  verifier.import_checkpoint(fusion_ckpt);

  verifier.freeze_all();
  verifier.set_trainable(tower.cnn_param_names(), true);
  verifier.set_trainable(tower.mlp_param_names(), true);
  verifier.set_trainable(tower.fc8_param_names(), true);
  verifier.set_trainable(tower.head_param_names(ClassifierStage::joint), true);

  nn::SgdMomentum<Scalar> opt(cfg.momentum, cfg.weight_decay);
  Rng rng = Rng(cfg.seed).fork(kStageTagJoint);
  auto windows = all_windows(train);

  StageOutput out;
  double lr = cfg.lr_initial;
  for (int epoch = 0; epoch < cfg.joint_epochs; ++epoch) {
    lr = lr_schedule(epoch, cfg);
    Rng erng = rng.fork(uint64_t(epoch));
    erng.shuffle(windows);
    const int batch = std::max(2, std::min<int>(cfg.batch_size, int(windows.size())));
    const int n_batches = capped_batches(windows.size(), batch, cfg.batches_per_epoch);
    if (n_batches == 0) throw NnError("joint stage: not enough windows for one batch");
    for (int bi = 0; bi < n_batches; ++bi) {
      std::vector<std::pair<int, int>> picks(windows.begin() + ptrdiff_t(bi) * batch,
                                             windows.begin() + ptrdiff_t(bi + 1) * batch);
      std::vector<int> labels, utt_idx;
      for (auto& [ui, s] : picks) {
        labels.push_back(train.utterances[size_t(ui)].label);
        utt_idx.push_back(ui);
      }
      Tensor<Scalar> x = assemble_windows(train, picks);
      Tensor<Scalar> p = assemble_prosody(train, utt_idx, verifier);
      verifier.store().zero_grads();
      Tensor<Scalar> z = tower.embed_forward(x, p, /*train=*/true, erng, /*record=*/true);
      Tensor<Scalar> logits = tower.head_forward(ClassifierStage::joint, z, true);
      Tensor<Scalar> dlogits;
      const double loss = nn::softmax_cross_entropy(logits, labels, &dlogits);
      check_finite(loss, "joint stage", epoch, bi);
      Tensor<Scalar> dz = tower.head_backward(ClassifierStage::joint, dlogits);
      tower.embed_backward(dz);
      opt.step(verifier.store(), lr);
      out.log.push_back({epoch, bi, lr, loss, batch_accuracy(logits, labels)});
    }
  }

  out.final_lr = lr;
  out.checkpoint = verifier.export_checkpoint(/*include_heads=*/true);
  stamp_metadata(out.checkpoint, "joint", train, cfg, cfg.joint_epochs, lr);
  return out;
}

// ---- Siamese stages ----

namespace {

struct SiameseEpochStats {
  double genuine_sum = 0.0, impostor_sum = 0.0;
  int genuine_n = 0, impostor_n = 0;
  void add(double d, int label) {
    if (label == 0) {
      genuine_sum += d;
      ++genuine_n;
    } else {
      impostor_sum += d;
      ++impostor_n;
    }
  }
  double genuine_mean() const { return genuine_n ? genuine_sum / genuine_n : 0.0; }
  double impostor_mean() const { return impostor_n ? impostor_sum / impostor_n : 0.0; }
  double separation() const { return impostor_mean() - genuine_mean(); }
};

void pair_distances(const Tensor<Scalar>& za, const Tensor<Scalar>& zb, std::vector<double>& d) {
  const int N = za.dim(0), D = za.dim(1);
  d.assign(size_t(N), 0.0);
  for (int n = 0; n < N; ++n) {
    double acc = 0.0;
    for (int k = 0; k < D; ++k) {
      const double diff =
          double(za.values[ptrdiff_t(n) * D + k]) - double(zb.values[ptrdiff_t(n) * D + k]);
      acc += diff * diff;
    }
    d[size_t(n)] = std::sqrt(acc);
  }
}

StageOutput run_siamese(Verifier& verifier, const DataSet& train, const TrainConfig& cfg,
                        std::optional<std::pair<Device, Device>> routing,
                        const std::string& stage_name) {
  Tower& tower_a = verifier.tower(0);
  Tower& tower_b = verifier.tower(1);
  const bool shared = verifier.cfg().weight_sharing;

  verifier.freeze_all();
  for (Tower* t : {&tower_a, &tower_b}) {
    verifier.set_trainable(t->cnn_param_names(), true);
    verifier.set_trainable(t->mlp_param_names(), true);
    verifier.set_trainable(t->fc8_param_names(), true);
    if (shared) break;
  }

  nn::SgdMomentum<Scalar> opt(cfg.momentum, cfg.weight_decay);
  Rng rng = Rng(cfg.seed).fork(kStageTagSiamese);

  StageOutput out;
  double lr = cfg.lr_initial;
  SiameseEpochStats last_epoch_stats;
  for (int epoch = 0; epoch < cfg.siamese_epochs; ++epoch) {
    lr = lr_schedule(epoch, cfg);
    Rng erng = rng.fork(uint64_t(epoch));
    auto pairs = sample_balanced_pairs(train, cfg.pairs_per_epoch, erng.next_u64(), routing);
    const int batch = std::max(1, std::min<int>(cfg.batch_size, int(pairs.size())));
    const int n_batches = int(pairs.size()) / batch;
    if (n_batches == 0) throw NnError(stage_name + ": not enough pairs for one batch");
    SiameseEpochStats stats;
    for (int bi = 0; bi < n_batches; ++bi) {
      std::vector<std::pair<int, int>> picks_a, picks_b;
      std::vector<int> utts_a, utts_b, labels;
      for (int n = 0; n < batch; ++n) {
        const PairSample& p = pairs[size_t(bi) * batch + size_t(n)];
        picks_a.emplace_back(p.utt_a, p.win_a);
        picks_b.emplace_back(p.utt_b, p.win_b);
        utts_a.push_back(p.utt_a);
        utts_b.push_back(p.utt_b);
        labels.push_back(p.label);
      }
      verifier.store().zero_grads();

      Tensor<Scalar> za, zb;
      if (shared) {
        // one concatenated forward so layer caches survive for backward
        std::vector<std::pair<int, int>> picks = picks_a;
        picks.insert(picks.end(), picks_b.begin(), picks_b.end());
        std::vector<int> utts = utts_a;
        utts.insert(utts.end(), utts_b.begin(), utts_b.end());
        Tensor<Scalar> x = assemble_windows(train, picks);
        Tensor<Scalar> p = assemble_prosody(train, utts, verifier);
        Tensor<Scalar> z = tower_a.embed_forward(x, p, /*train=*/true, erng, /*record=*/true);
        const int D = z.dim(1);
        za = Tensor<Scalar>({batch, D});
        zb = Tensor<Scalar>({batch, D});
        std::copy(z.values.begin(), z.values.begin() + ptrdiff_t(batch) * D, za.values.begin());
        std::copy(z.values.begin() + ptrdiff_t(batch) * D, z.values.end(), zb.values.begin());
      } else {
        Tensor<Scalar> xa = assemble_windows(train, picks_a);
        Tensor<Scalar> pa = assemble_prosody(train, utts_a, verifier);
        Tensor<Scalar> xb = assemble_windows(train, picks_b);
        Tensor<Scalar> pb = assemble_prosody(train, utts_b, verifier);
        za = tower_a.embed_forward(xa, pa, /*train=*/true, erng, /*record=*/true);
        zb = tower_b.embed_forward(xb, pb, /*train=*/true, erng, /*record=*/true);
      }

      Tensor<Scalar> dza, dzb;
      const double loss = nn::contrastive_loss_batch(za, zb, labels, cfg.margin, &dza, &dzb);
      check_finite(loss, stage_name, epoch, bi);

      std::vector<double> dists;
      pair_distances(za, zb, dists);
      for (int n = 0; n < batch; ++n) stats.add(dists[size_t(n)], labels[size_t(n)]);

      if (shared) {
        const int D = za.dim(1);
        Tensor<Scalar> dz({2 * batch, D});
        std::copy(dza.values.begin(), dza.values.end(), dz.values.begin());
        std::copy(dzb.values.begin(), dzb.values.end(),
                  dz.values.begin() + ptrdiff_t(batch) * D);
        tower_a.embed_backward(dz);
      } else {
        tower_a.embed_backward(dza);
        tower_b.embed_backward(dzb);
      }
      opt.step(verifier.store(), lr);
      out.log.push_back({epoch, bi, lr, loss, stats.separation()});
    }
    last_epoch_stats = stats;
  }

  out.final_lr = lr;
  out.checkpoint = verifier.export_checkpoint(/*include_heads=*/false);
  stamp_metadata(out.checkpoint, stage_name, train, cfg, cfg.siamese_epochs, lr);
  {
    std::ostringstream os;
    os.precision(17);
    os << 0.5 * (last_epoch_stats.genuine_mean() + last_epoch_stats.impostor_mean());
    out.checkpoint.metadata["decision_threshold"] = os.str();
  }
  return out;
}

}  // namespace

StageOutput train_siamese(const Checkpoint& classifier_ckpt, const DataSet& train,
                          const TrainConfig& cfg) {
  cfg.validate();
  require_stage(classifier_ckpt, "joint");
  require_dataset_match(classifier_ckpt, train);

  Verifier verifier(verifier_config_for(cfg, train.n_speakers(), true), cfg.seed);
  verifier.import_checkpoint(classifier_ckpt);
  StageOutput out = run_siamese(verifier, train, cfg, std::nullopt, "siamese");
  return out;
}

StageOutput train_siamese_channel_dependent(const Checkpoint& shared_ckpt, const DataSet& train,
                                            const TrainConfig& cfg) {
  cfg.validate();
  require_stage(shared_ckpt, "siamese");

  // heads are gone from a siamese checkpoint, so build without them
  Verifier verifier(verifier_config_for(cfg, 0, false), cfg.seed);
  verifier.import_shared_into_both(shared_ckpt);
  StageOutput out = run_siamese(verifier, train, cfg,
                                std::make_pair(cfg.device_a, cfg.device_b), "siamese_channel");
  out.checkpoint.metadata["device_a"] = device_name(cfg.device_a);
  out.checkpoint.metadata["device_b"] = device_name(cfg.device_b);
  return out;
}

void write_training_log(const std::string& path, const std::vector<LogRow>& rows,
                        const std::string& config_echo) {
  std::ofstream out(path);
  if (!out) throw NnError("cannot write training log '" + path + "'");
  if (!config_echo.empty()) {
    std::istringstream is(config_echo);
    std::string line;
    while (std::getline(is, line)) out << "# " << line << "\n";
  }
  out << "epoch,step,lr,loss,metric\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.10g,%.10g,%.10g\n", r.epoch, r.step, r.lr, r.loss,
                  r.metric);
    out << buf;
  }
}

}  // namespace svkit
