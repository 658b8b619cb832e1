#include "svkit/model.hpp"

#include <cmath>
#include <sstream>

namespace svkit {

void VerifierConfig::validate() const {
  if (n_mel <= 0 || n_frames <= 0 || prosodic_dim <= 0 || mlp_out <= 0 || fc6 <= 0 || fc7 <= 0 ||
      fc8 <= 0 || mlp_hidden[0] <= 0 || mlp_hidden[1] <= 0)
    throw NnError("verifier config: dimensions must be positive");
  if (n_mel % 4 != 0) throw NnError("verifier config: n_mel must be divisible by 4");
  if (margin <= 0.0) throw NnError("verifier config: margin must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw NnError("verifier config: dropout must be in [0,1)");
}

std::string VerifierConfig::canonical_text() const {
  std::ostringstream os;
  os << "arch=mfsc-cnn+mlp+fc8\n";
  os << "sample_rate=" << kSampleRate << "\nframe_len=" << kFrameLen << "\nframe_hop=" << kFrameHop
     << "\nn_fft=" << kFftSize << "\n";
  os << "n_mel=" << n_mel << "\nn_frames=" << n_frames << "\nprosodic_dim=" << prosodic_dim
     << "\n";
  os << "conv_channels=64,128,256,256,512\n";
  os << "mlp=" << mlp_hidden[0] << "," << mlp_hidden[1] << "," << mlp_out << "\n";
  os << "fc6=" << fc6 << "\nfc7=" << fc7 << "\nfc8=" << fc8 << "\n";
  return os.str();
}

uint64_t VerifierConfig::hash() const { return fnv1a_hash(canonical_text()); }

// ---- Tower ----

Tower::Tower(const VerifierConfig& cfg, ParamStore<Scalar>& store, const std::string& prefix,
             Rng& rng)
    : cfg_(cfg),
      prefix_(prefix),
      fc6_dropout_(cfg.dropout_rate),
      mlp_dropout1_(cfg.dropout_rate),
      mlp_dropout2_(cfg.dropout_rate) {
  cfg.validate();
  if (cfg.fc8 <= 0 || cfg.fc7 + cfg.mlp_out <= 0) throw NnError("bad fusion dims");

  const auto& ch = VerifierConfig::conv_channels;
  int c_in = 3;
  for (int i = 0; i < 5; ++i) {
    // conv3 and conv5 follow a hetero pool, which tripled the depth
    if (i == 2 || i == 4) c_in *= 3;
    convs_.emplace_back(store, prefix + "conv" + std::to_string(i + 1), c_in, ch[size_t(i)], rng);
    bns_.emplace_back(store, prefix + "bn" + std::to_string(i + 1), ch[size_t(i)], cfg.bn_decay);
    c_in = ch[size_t(i)];
  }
  relus_.resize(6);   // 5 conv relus + 1 for fc6 handled separately
  tpools_.resize(4);  // after conv1..conv4
  hpools_.resize(2);  // after tpool2 and tpool4

  fc6_ = std::make_unique<nn::Linear<Scalar>>(store, prefix + "fc6", cfg.fc6_in(), cfg.fc6, rng);
  fc7_ = std::make_unique<nn::Linear<Scalar>>(store, prefix + "fc7", cfg.fc6, cfg.fc7, rng);

  mlp1_ = std::make_unique<nn::Linear<Scalar>>(store, prefix + "mlp1", cfg.prosodic_dim,
                                               cfg.mlp_hidden[0], rng);
  mlp2_ = std::make_unique<nn::Linear<Scalar>>(store, prefix + "mlp2", cfg.mlp_hidden[0],
                                               cfg.mlp_hidden[1], rng);
  mlp3_ = std::make_unique<nn::Linear<Scalar>>(store, prefix + "mlp3", cfg.mlp_hidden[1],
                                               cfg.mlp_out, rng);

  fc8_lin_ = std::make_unique<nn::Linear<Scalar>>(store, prefix + "fc8", cfg.fc7 + cfg.mlp_out,
                                                  cfg.fc8, rng);

  if (cfg.n_classes > 0) {
    head_cnn_ = std::make_unique<nn::Linear<Scalar>>(store, prefix + "head_cnn", cfg.fc7,
                                                     cfg.n_classes, rng);
    head_mlp_ = std::make_unique<nn::Linear<Scalar>>(store, prefix + "head_mlp", cfg.mlp_out,
                                                     cfg.n_classes, rng);
    head_joint_ = std::make_unique<nn::Linear<Scalar>>(store, prefix + "head_joint", cfg.fc8,
                                                       cfg.n_classes, rng);
  }
}

Tensor<Scalar> Tower::cnn_forward(const Tensor<Scalar>& x, bool train, Rng& rng, bool record,
                                  std::vector<std::vector<int>>* trace) {
  auto note = [&](const Tensor<Scalar>& t) {
    if (trace) trace->push_back(t.shape);
  };
  Tensor<Scalar> h = convs_[0].forward(x, record);
  note(h);
  h = bns_[0].forward(h, train, record);
  h = relus_[0].forward(h, record);
  h = tpools_[0].forward(h, record);
  note(h);

  h = convs_[1].forward(h, record);
  note(h);
  h = bns_[1].forward(h, train, record);
  h = relus_[1].forward(h, record);
  h = tpools_[1].forward(h, record);
  note(h);
  h = hpools_[0].forward(h, record);
  note(h);

  h = convs_[2].forward(h, record);
  note(h);
  h = bns_[2].forward(h, train, record);
  h = relus_[2].forward(h, record);
  h = tpools_[2].forward(h, record);
  note(h);

  h = convs_[3].forward(h, record);
  note(h);
  h = bns_[3].forward(h, train, record);
  h = relus_[3].forward(h, record);
  h = tpools_[3].forward(h, record);
  note(h);
  h = hpools_[1].forward(h, record);
  note(h);

  h = convs_[4].forward(h, record);
  note(h);
  h = bns_[4].forward(h, train, record);
  h = relus_[4].forward(h, record);

  h = avgpool_.forward(h, record);
  note(h);

  pre_flatten_shape_ = h.shape;
  Tensor<Scalar> flat = nn::flatten(h);
  Tensor<Scalar> f6 = fc6_->forward(flat, record);
  note(f6);
  f6 = fc6_relu_.forward(f6, record);
  f6 = fc6_dropout_.forward(f6, train, rng, record);
  Tensor<Scalar> f7 = fc7_->forward(f6, record);
  note(f7);
  return f7;
}

void Tower::cnn_backward(const Tensor<Scalar>& dfc7) {
  Tensor<Scalar> d = fc7_->backward(dfc7);
  d = fc6_dropout_.backward(d);
  d = fc6_relu_.backward(d);
  d = fc6_->backward(d);
  d = nn::unflatten(d, pre_flatten_shape_);
  d = avgpool_.backward(d);

  d = relus_[4].backward(d);
  d = bns_[4].backward(d);
  d = convs_[4].backward(d);

  d = hpools_[1].backward(d);
  d = tpools_[3].backward(d);
  d = relus_[3].backward(d);
  d = bns_[3].backward(d);
  d = convs_[3].backward(d);

  d = tpools_[2].backward(d);
  d = relus_[2].backward(d);
  d = bns_[2].backward(d);
  d = convs_[2].backward(d);

  d = hpools_[0].backward(d);
  d = tpools_[1].backward(d);
  d = relus_[1].backward(d);
  d = bns_[1].backward(d);
  d = convs_[1].backward(d);

  d = tpools_[0].backward(d);
  d = relus_[0].backward(d);
  d = bns_[0].backward(d);
  convs_[0].backward(d);  // input gradient discarded
}

Tensor<Scalar> Tower::mlp_forward(const Tensor<Scalar>& p, bool train, Rng& rng, bool record) {
  Tensor<Scalar> h = mlp1_->forward(p, record);
  h = mlp_relu1_.forward(h, record);
  h = mlp_dropout1_.forward(h, train, rng, record);
  h = mlp2_->forward(h, record);
  h = mlp_relu2_.forward(h, record);
  h = mlp_dropout2_.forward(h, train, rng, record);
  return mlp3_->forward(h, record);
}

void Tower::mlp_backward(const Tensor<Scalar>& dout) {
  Tensor<Scalar> d = mlp3_->backward(dout);
  d = mlp_dropout2_.backward(d);
  d = mlp_relu2_.backward(d);
  d = mlp2_->backward(d);
  d = mlp_dropout1_.backward(d);
  d = mlp_relu1_.backward(d);
  mlp1_->backward(d);
}

Tensor<Scalar> Tower::fc8_forward(const Tensor<Scalar>& cnn_out, const Tensor<Scalar>& mlp_out,
                                  bool record) {
  const int N = cnn_out.dim(0);
  if (mlp_out.dim(0) != N) throw NnError("fc8: batch mismatch");
  const int dc = cnn_out.dim(1), dm = mlp_out.dim(1);
  Tensor<Scalar> cat({N, dc + dm});
  for (int n = 0; n < N; ++n) {
    std::copy(cnn_out.values.begin() + ptrdiff_t(n) * dc,
              cnn_out.values.begin() + ptrdiff_t(n + 1) * dc,
              cat.values.begin() + ptrdiff_t(n) * (dc + dm));
    std::copy(mlp_out.values.begin() + ptrdiff_t(n) * dm,
              mlp_out.values.begin() + ptrdiff_t(n + 1) * dm,
              cat.values.begin() + ptrdiff_t(n) * (dc + dm) + dc);
  }
  return fc8_lin_->forward(cat, record);
}

std::pair<Tensor<Scalar>, Tensor<Scalar>> Tower::fc8_backward(const Tensor<Scalar>& dz) {
  Tensor<Scalar> dcat = fc8_lin_->backward(dz);
  const int N = dcat.dim(0);
  const int dc = cfg_.fc7, dm = cfg_.mlp_out;
  Tensor<Scalar> dcnn({N, dc}), dmlp({N, dm});
  for (int n = 0; n < N; ++n) {
    std::copy(dcat.values.begin() + ptrdiff_t(n) * (dc + dm),
              dcat.values.begin() + ptrdiff_t(n) * (dc + dm) + dc,
              dcnn.values.begin() + ptrdiff_t(n) * dc);
    std::copy(dcat.values.begin() + ptrdiff_t(n) * (dc + dm) + dc,
              dcat.values.begin() + ptrdiff_t(n + 1) * (dc + dm),
              dmlp.values.begin() + ptrdiff_t(n) * dm);
  }
  return {std::move(dcnn), std::move(dmlp)};
}

namespace {
nn::Linear<Scalar>* head_for(ClassifierStage stage, nn::Linear<Scalar>* c, nn::Linear<Scalar>* m,
                             nn::Linear<Scalar>* j) {
  switch (stage) {
    case ClassifierStage::cnn_only: return c;
    case ClassifierStage::mlp_only: return m;
    case ClassifierStage::joint: return j;
  }
  return nullptr;
}
}  // namespace

Tensor<Scalar> Tower::head_forward(ClassifierStage stage, const Tensor<Scalar>& feats,
                                   bool record) {
  auto* head = head_for(stage, head_cnn_.get(), head_mlp_.get(), head_joint_.get());
  if (!head) throw NnError("classifier head not built (n_classes == 0)");
  return head->forward(feats, record);
}

Tensor<Scalar> Tower::head_backward(ClassifierStage stage, const Tensor<Scalar>& dlogits) {
  auto* head = head_for(stage, head_cnn_.get(), head_mlp_.get(), head_joint_.get());
  if (!head) throw NnError("classifier head not built (n_classes == 0)");
  return head->backward(dlogits);
}

Tensor<Scalar> Tower::embed_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& p, bool train,
                                    Rng& rng, bool record) {
  Tensor<Scalar> c = cnn_forward(x, train, rng, record);
  Tensor<Scalar> m = mlp_forward(p, train, rng, record);
  return fc8_forward(c, m, record);
}

void Tower::embed_backward(const Tensor<Scalar>& dz) {
  auto [dcnn, dmlp] = fc8_backward(dz);
  cnn_backward(dcnn);
  mlp_backward(dmlp);
}

std::vector<std::string> Tower::cnn_param_names() const {
  std::vector<std::string> names;
  for (int i = 1; i <= 5; ++i) {
    names.push_back(prefix_ + "conv" + std::to_string(i) + ".weight");
    names.push_back(prefix_ + "conv" + std::to_string(i) + ".bias");
    names.push_back(prefix_ + "bn" + std::to_string(i) + ".gamma");
    names.push_back(prefix_ + "bn" + std::to_string(i) + ".beta");
  }
  for (const char* fc : {"fc6", "fc7"}) {
    names.push_back(prefix_ + fc + ".weight");
    names.push_back(prefix_ + fc + ".bias");
  }
  return names;
}

std::vector<std::string> Tower::mlp_param_names() const {
  std::vector<std::string> names;
  for (const char* l : {"mlp1", "mlp2", "mlp3"}) {
    names.push_back(prefix_ + l + ".weight");
    names.push_back(prefix_ + l + ".bias");
  }
  return names;
}

std::vector<std::string> Tower::fc8_param_names() const {
  return {prefix_ + "fc8.weight", prefix_ + "fc8.bias"};
}

std::vector<std::string> Tower::head_param_names(ClassifierStage stage) const {
  const char* head = stage == ClassifierStage::cnn_only   ? "head_cnn"
                     : stage == ClassifierStage::mlp_only ? "head_mlp"
                                                          : "head_joint";
  return {prefix_ + head + ".weight", prefix_ + head + ".bias"};
}

// ---- Verifier ----

Verifier::Verifier(const VerifierConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(Rng::mix(seed) ^ 0x76657266ULL);
  if (cfg_.weight_sharing) {
    towers_.push_back(std::make_unique<Tower>(cfg_, store_, "", rng));
  } else {
    towers_.push_back(std::make_unique<Tower>(cfg_, store_, "t0.", rng));
    towers_.push_back(std::make_unique<Tower>(cfg_, store_, "t1.", rng));
  }
  prosody_mean_ = store_.create("prosody_norm.mean", {cfg.prosodic_dim}, /*trainable=*/false);
  prosody_std_ = store_.create("prosody_norm.std", {cfg.prosodic_dim}, /*trainable=*/false);
  std::fill(prosody_std_->tensor.values.begin(), prosody_std_->tensor.values.end(), Scalar(1));
}

std::vector<Scalar> Verifier::standardize_prosody(const ProsodicVector& pv) const {
  const auto* mean = store_.find("prosody_norm.mean");
  const auto* std_ = store_.find("prosody_norm.std");
  std::vector<Scalar> out(size_t(cfg_.prosodic_dim), Scalar(0));
  for (int i = 0; i < cfg_.prosodic_dim; ++i)
    out[size_t(i)] = Scalar((Scalar(pv[size_t(i)]) - mean->tensor.values[size_t(i)]) /
                            std_->tensor.values[size_t(i)]);
  return out;
}

void Verifier::set_prosody_norm(const std::array<double, 18>& mean,
                                const std::array<double, 18>& stddev) {
  for (int i = 0; i < cfg_.prosodic_dim; ++i) {
    prosody_mean_->tensor.values[size_t(i)] = Scalar(mean[size_t(i)]);
    prosody_std_->tensor.values[size_t(i)] = Scalar(std::max(stddev[size_t(i)], 1e-8));
  }
}

Tensor<Scalar> Verifier::embed_eval(const Tensor<Scalar>& x, const Tensor<Scalar>& p, int side) {
  Rng unused(0);
  return tower(side).embed_forward(x, p, /*train=*/false, unused, /*record=*/false);
}

Checkpoint Verifier::export_checkpoint(bool include_heads) const {
  Checkpoint ckpt = Checkpoint::from_store(store_);
  if (!include_heads) {
    std::erase_if(ckpt.records, [](const Checkpoint::Record& r) {
      return r.name.find("head_") != std::string::npos;
    });
  }
  ckpt.metadata["config_hash"] = std::to_string(cfg_.hash());
  ckpt.metadata["weight_sharing"] = cfg_.weight_sharing ? "true" : "false";
  return ckpt;
}

void Verifier::import_checkpoint(const Checkpoint& ckpt, bool allow_missing_heads) {
  const std::string stored = ckpt.meta_or("config_hash", "");
  if (!stored.empty() && stored != std::to_string(cfg_.hash()))
    throw NnError("checkpoint config hash mismatch (got " + stored + ", expected " +
                  std::to_string(cfg_.hash()) + ")");
  for (size_t i = 0; i < store_.size(); ++i) {
    Parameter<Scalar>* p = store_.at(i);
    const Checkpoint::Record* r = ckpt.find(p->name);
    if (!r) {
      if (allow_missing_heads && p->name.find("head_") != std::string::npos) continue;
      throw NnError("checkpoint is missing parameter '" + p->name + "'");
    }
    if (r->shape != p->tensor.shape)
      throw NnError("checkpoint shape mismatch for '" + p->name + "'");
    p->tensor.values = r->values;
  }
}

void Verifier::import_shared_into_both(const Checkpoint& ckpt) {
  if (cfg_.weight_sharing) throw NnError("import_shared_into_both needs weight_sharing = false");
  const std::string stored = ckpt.meta_or("config_hash", "");
  if (!stored.empty() && stored != std::to_string(cfg_.hash()))
    throw NnError("checkpoint config hash mismatch");
  for (size_t i = 0; i < store_.size(); ++i) {
    Parameter<Scalar>* p = store_.at(i);
    std::string base = p->name;
    if (base.rfind("t0.", 0) == 0 || base.rfind("t1.", 0) == 0) base = base.substr(3);
    const Checkpoint::Record* r = ckpt.find(base);
    if (!r) {
      if (base.find("head_") != std::string::npos) continue;
      throw NnError("shared checkpoint is missing parameter '" + base + "'");
    }
    if (r->shape != p->tensor.shape)
      throw NnError("shared checkpoint shape mismatch for '" + base + "'");
    p->tensor.values = r->values;
  }
}

void Verifier::set_trainable(const std::vector<std::string>& names, bool trainable) {
  for (const auto& name : names) {
    Parameter<Scalar>* p = store_.find(name);
    if (!p) throw NnError("unknown parameter '" + name + "'");
    p->trainable = trainable;
  }
}

void Verifier::freeze_all() {
  for (auto& p : store_) p->trainable = false;
}

double pair_distance(const std::vector<Scalar>& a, const std::vector<Scalar>& b) {
  if (a.size() != b.size()) throw NnError("pair_distance: length mismatch");
  double d2 = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    d2 += d * d;
  }
  return std::sqrt(d2);
}

Tensor<Scalar> window_to_tensor(const MfscStack& stack, int start_frame, int n_frames) {
  Tensor<Scalar> t({1, stack.n_bands, n_frames, stack.n_channels});
  for (int b = 0; b < stack.n_bands; ++b) {
    const float* src = &stack.values[(size_t(b) * stack.n_frames + start_frame) * stack.n_channels];
    std::copy(src, src + size_t(n_frames) * stack.n_channels,
              t.values.begin() + ptrdiff_t(b) * n_frames * stack.n_channels);
  }
  return t;
}

}  // namespace svkit
