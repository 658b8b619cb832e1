#pragma once

#include <optional>
#include <string>
#include <vector>

#include "svkit/checkpoint.hpp"
#include "svkit/dataset.hpp"
#include "svkit/model.hpp"

namespace svkit {

struct TrainConfig {
  int batch_size = 32;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double lr_initial = 0.1;
  double lr_decay_factor = 0.1;
  int lr_decay_epochs = 2;
  double bn_decay = 0.99;
  double dropout = 0.5;
  double margin = 10.0;

  int cnn_epochs = 10;
  int mlp_epochs = 10;
  int fusion_epochs = 5;
  int joint_epochs = 5;
  int siamese_epochs = 20;

  int batches_per_epoch = 0;  // cap per classifier epoch; 0 = full pass
  int pairs_per_epoch = 512;
  uint64_t seed = 0;

  // channel-dependent routing for the non-weight-sharing variant
  Device device_a = Device::microphone;
  Device device_b = Device::microphone;

  void validate() const;
};

struct LogRow {
  int epoch = 0;
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double metric = 0.0;  // accuracy for classifier stages, distance separation for Siamese
};

struct StageOutput {
  Checkpoint checkpoint;
  std::vector<LogRow> log;
  double final_lr = 0.0;
};

/// Staircase schedule: lr_initial * factor^floor(epoch / decay_epochs).
double lr_schedule(int epoch, const TrainConfig& cfg);
double lr_schedule(int epoch, double lr_initial, double factor, int decay_epochs);

struct PairSample {
  int utt_a = 0, win_a = 0;
  int utt_b = 0, win_b = 0;
  int label = 0;  // 0 genuine, 1 impostor
};

/// Exactly balanced genuine/impostor pair stream (n_pairs rounded down to
/// even). Pairs are picked at the utterance level, then one window per side;
/// a window is never paired with itself. With `routing`, side A draws only
/// from the first device and side B from the second (the channel-dependent
/// setup).
std::vector<PairSample> sample_balanced_pairs(
    const DataSet& data, int n_pairs, uint64_t seed,
    std::optional<std::pair<Device, Device>> routing = std::nullopt);

// The five stages of the staged optimization. Each is a pure function of
// (inputs, config, seed): rerunning yields a byte-identical checkpoint.
StageOutput pretrain_cnn_classifier(const DataSet& train, const TrainConfig& cfg);
StageOutput pretrain_mlp(const DataSet& train, const TrainConfig& cfg);
StageOutput train_fusion_greedy(const Checkpoint& cnn_ckpt, const Checkpoint& mlp_ckpt,
                                const DataSet& train, const TrainConfig& cfg);
StageOutput finetune_joint_classifier(const Checkpoint& fusion_ckpt, const DataSet& train,
                                      const TrainConfig& cfg);
StageOutput train_siamese(const Checkpoint& classifier_ckpt, const DataSet& train,
                          const TrainConfig& cfg);
// weight_sharing = false; towers initialized from the shared checkpoint and
// fed per-device pairs.
StageOutput train_siamese_channel_dependent(const Checkpoint& shared_ckpt, const DataSet& train,
                                            const TrainConfig& cfg);

// `epoch,step,lr,loss,metric` rows, preceded by `# key = value` comment lines
// when a config echo is supplied.
void write_training_log(const std::string& path, const std::vector<LogRow>& rows,
                        const std::string& config_echo = "");

VerifierConfig verifier_config_for(const TrainConfig& cfg, int n_classes, bool weight_sharing);

}  // namespace svkit
