#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "svkit/checkpoint.hpp"
#include "svkit/dsp.hpp"
#include "svkit/layers.hpp"
#include "svkit/prosody.hpp"
#include "svkit/tensor.hpp"

namespace svkit {

using Scalar = float;

enum class ClassifierStage { cnn_only, mlp_only, joint };

struct VerifierConfig {
  int n_mel = 40;
  int n_frames = 300;
  int prosodic_dim = 18;
  std::array<int, 2> mlp_hidden{64, 64};
  int mlp_out = 32;
  int fc6 = 1024;
  int fc7 = 128;
  int fc8 = 128;
  double margin = 10.0;
  bool weight_sharing = true;
  int n_classes = 0;  // classifier stages only; 0 = no heads
  double dropout_rate = 0.5;
  double bn_decay = 0.99;

  static constexpr std::array<int, 5> conv_channels{64, 128, 256, 256, 512};

  void validate() const;
  int freq_after_pools() const { return n_mel / 4; }  // two hetero pools halve F
  int fc6_in() const { return freq_after_pools() * conv_channels[4]; }

  // Architecture and feature-extraction constants that a checkpoint must
  // agree on with the code evaluating it.
  std::string canonical_text() const;
  uint64_t hash() const;
};

/// One sub-network: the MFSC CNN up to FC7, the prosody MLP, the FC8 fusion
/// layer and the optional classifier heads. Forward methods cache state for
/// backward only when `record` is set; eval-mode calls are safe from many
/// threads only via separate Tower instances (the caches are per-instance).
class Tower {
 public:
  Tower(const VerifierConfig& cfg, ParamStore<Scalar>& store, const std::string& prefix, Rng& rng);

  // {N, n_mel, T, 3} -> {N, fc7}; appends every intermediate shape to trace
  // when given (14 entries for the standard stack).
  Tensor<Scalar> cnn_forward(const Tensor<Scalar>& x, bool train, Rng& rng, bool record,
                             std::vector<std::vector<int>>* trace = nullptr);
  void cnn_backward(const Tensor<Scalar>& dfc7);

  // {N, prosodic_dim} -> {N, mlp_out}
  Tensor<Scalar> mlp_forward(const Tensor<Scalar>& p, bool train, Rng& rng, bool record);
  void mlp_backward(const Tensor<Scalar>& dout);

  // concat(FC7, MLP) -> FC8 embedding {N, fc8}; no activation afterwards
  Tensor<Scalar> fc8_forward(const Tensor<Scalar>& cnn_out, const Tensor<Scalar>& mlp_out,
                             bool record);
  std::pair<Tensor<Scalar>, Tensor<Scalar>> fc8_backward(const Tensor<Scalar>& dz);

  Tensor<Scalar> head_forward(ClassifierStage stage, const Tensor<Scalar>& feats, bool record);
  Tensor<Scalar> head_backward(ClassifierStage stage, const Tensor<Scalar>& dlogits);

  // full embedding path
  Tensor<Scalar> embed_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& p, bool train,
                               Rng& rng, bool record);
  void embed_backward(const Tensor<Scalar>& dz);

  // parameter groups, by name, for stage-wise freezing
  std::vector<std::string> cnn_param_names() const;
  std::vector<std::string> mlp_param_names() const;
  std::vector<std::string> fc8_param_names() const;
  std::vector<std::string> head_param_names(ClassifierStage stage) const;

  const std::string& prefix() const { return prefix_; }

 private:
  VerifierConfig cfg_;
  std::string prefix_;
  // CNN path
  std::vector<nn::Conv2d<Scalar>> convs_;
  std::vector<nn::BatchNorm<Scalar>> bns_;
  std::vector<nn::Relu<Scalar>> relus_;
  std::vector<nn::MaxPoolTime<Scalar>> tpools_;
  std::vector<nn::HeteroFreqPool<Scalar>> hpools_;
  nn::GlobalAvgPoolTime<Scalar> avgpool_;
  std::unique_ptr<nn::Linear<Scalar>> fc6_, fc7_;
  nn::Relu<Scalar> fc6_relu_;
  nn::Dropout<Scalar> fc6_dropout_;
  std::vector<int> pre_flatten_shape_;
  // MLP path
  std::unique_ptr<nn::Linear<Scalar>> mlp1_, mlp2_, mlp3_;
  nn::Relu<Scalar> mlp_relu1_, mlp_relu2_;
  nn::Dropout<Scalar> mlp_dropout1_, mlp_dropout2_;
  // fusion + heads
  std::unique_ptr<nn::Linear<Scalar>> fc8_lin_;
  std::unique_ptr<nn::Linear<Scalar>> head_cnn_, head_mlp_, head_joint_;
};

/// Owns the parameter store and one tower (weight sharing) or two (the
/// channel-dependent variant). The prosodic standardization statistics are
/// stored as non-trainable parameters so they travel with checkpoints.
class Verifier {
 public:
  Verifier(const VerifierConfig& cfg, uint64_t seed);

  const VerifierConfig& cfg() const { return cfg_; }
  ParamStore<Scalar>& store() { return store_; }
  const ParamStore<Scalar>& store() const { return store_; }

  int n_towers() const { return int(towers_.size()); }
  Tower& tower(int side = 0) { return *towers_[cfg_.weight_sharing ? 0 : size_t(side)]; }

  std::vector<Scalar> standardize_prosody(const ProsodicVector& pv) const;
  void set_prosody_norm(const std::array<double, 18>& mean, const std::array<double, 18>& stddev);

  // eval-mode embedding of a prepared batch (no dropout, running BN stats)
  Tensor<Scalar> embed_eval(const Tensor<Scalar>& x, const Tensor<Scalar>& p, int side = 0);

  // Heads are dropped from verification exports.
  Checkpoint export_checkpoint(bool include_heads) const;
  void import_checkpoint(const Checkpoint& ckpt, bool allow_missing_heads = false);
  // channel-dependent init: copy an unprefixed (shared) checkpoint into both towers
  void import_shared_into_both(const Checkpoint& ckpt);

  void set_trainable(const std::vector<std::string>& names, bool trainable);
  void freeze_all();

 private:
  VerifierConfig cfg_;
  ParamStore<Scalar> store_;
  std::vector<std::unique_ptr<Tower>> towers_;
  Parameter<Scalar>* prosody_mean_;
  Parameter<Scalar>* prosody_std_;
};

double pair_distance(const std::vector<Scalar>& a, const std::vector<Scalar>& b);

// {N, 40, 300, 3} batch assembly from feature windows
Tensor<Scalar> window_to_tensor(const MfscStack& stack, int start_frame, int n_frames);

}  // namespace svkit
