#include "svkit/cli.hpp"

#include <omp.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "svkit/config.hpp"
#include "svkit/dataset.hpp"
#include "svkit/eval.hpp"
#include "svkit/gradcheck_suite.hpp"
#include "svkit/synth.hpp"
#include "svkit/train.hpp"

namespace svkit::cli {

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> sets;
  int64_t seed = -1;  // -1 = keep config value
  int jobs = 0;

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_file.empty()) cfg.load_file(config_file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError("--set expects key=value, got '" + s + "'");
      auto trim = [](std::string v) {
        const auto a = v.find_first_not_of(" \t");
        const auto b = v.find_last_not_of(" \t");
        return a == std::string::npos ? std::string() : v.substr(a, b - a + 1);
      };
      cfg.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    if (seed >= 0) cfg.seed = uint64_t(seed);
    if (jobs > 0) cfg.jobs = jobs;
    cfg.resolve();
    if (cfg.jobs > 0) omp_set_num_threads(cfg.jobs);
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_file, "key = value config file");
  cmd->add_option("--set", opts.sets, "override a config key (key=value, repeatable)");
  cmd->add_option("--seed", opts.seed, "override the global seed");
  cmd->add_option("--jobs", opts.jobs, "worker threads for parallel sections");
}

std::string escape_newlines(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '\n')
      out += "\\n";
    else
      out += c;
  }
  return out;
}

std::vector<Device> parse_device_list(const std::string& csv) {
  std::vector<Device> devices;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) devices.push_back(device_from_name(item));
  if (devices.empty()) throw ConfigError("empty device list");
  return devices;
}

UtteranceFeatures features_of_clip(const AudioClip& raw, const std::string& id) {
  AudioClip clip = resample_48k(raw);
  UtteranceFeatures f;
  f.utterance_id = id;
  f.speaker_id = id;
  f.stack = mfsc_pipeline(clip);
  if (f.stack.n_frames < kShortFrames) throw DspError("utterance too short");
  for (int s = 0; s + kShortFrames <= f.stack.n_frames; s += kShortStride)
    f.window_starts.push_back(s);
  f.prosody = prosodic_vector(clip);
  return f;
}

// ---- synth ----

int cmd_synth(const CommonOpts& common, const std::string& out_dir, int n_speakers,
              int n_utterances, const std::string& devices_csv, double min_duration) {
  RunConfig cfg = common.resolve();
  SynthSpec spec;
  spec.n_speakers = n_speakers;
  spec.utterances_per_speaker = n_utterances;
  spec.devices = parse_device_list(devices_csv);
  spec.seed = cfg.seed;
  spec.min_duration_s = min_duration;

  fs::create_directories(out_dir);
  std::vector<ManifestEntry> manifest;
  for (int s = 0; s < spec.n_speakers; ++s)
    for (int u = 0; u < spec.utterances_per_speaker; ++u)
      for (Device d : spec.devices) manifest.push_back(synth_manifest_entry(spec, s, u, d));

#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < manifest.size(); ++i) {
    const ManifestEntry& e = manifest[i];
    // indices are recoverable from the id layout
    const int s = std::stoi(e.speaker_id.substr(3));
    const int u = std::stoi(e.session.substr(4));
    AudioClip clip = synth_utterance(spec, s, u, e.device);
    save_wav_int16(out_dir + "/" + e.path, clip);
  }
  save_manifest(out_dir + "/manifest.jsonl", manifest);
  std::cout << "wrote " << manifest.size() << " clips and manifest.jsonl to " << out_dir << "\n";
  return 0;
}

// ---- features ----

int cmd_features(const CommonOpts& common, const std::string& manifest_path,
                 const std::string& out_dir) {
  RunConfig cfg = common.resolve();
  auto manifest = load_manifest(manifest_path);
  const std::string base_dir = fs::path(manifest_path).parent_path().string();
  fs::create_directories(out_dir);

  DataSet data = build_dataset_from_files(manifest, base_dir);

  std::vector<std::pair<std::string, ProsodicVector>> rows;
  for (const auto& u : data.utterances) {
    write_mfsc_cache(out_dir + "/" + u.utterance_id + ".mfsc", u.stack);
    rows.emplace_back(u.utterance_id, u.prosody);
  }
  write_prosody_csv(out_dir + "/prosody.csv", rows);

  {
    std::ofstream echo(out_dir + "/config.txt");
    echo << cfg.canonical_text();
  }
  if (!data.skipped.empty()) {
    std::ofstream skip(out_dir + "/skip_report.txt");
    for (const auto& s : data.skipped) skip << s.utterance_id << "\t" << s.reason << "\n";
    std::cerr << data.skipped.size() << " utterance(s) skipped; see " << out_dir
              << "/skip_report.txt\n";
  }
  std::cout << "cached features for " << data.utterances.size() << " utterance(s) in " << out_dir
            << "\n";
  return data.skipped.empty() ? 0 : 2;
}

// ---- train ----

DataSet dataset_for(const RunConfig&, const std::string& manifest_path,
                    const std::string& features_dir) {
  auto manifest = load_manifest(manifest_path);
  if (!features_dir.empty()) return build_dataset_from_cache(manifest, features_dir);
  const std::string base_dir = fs::path(manifest_path).parent_path().string();
  return build_dataset_from_files(manifest, base_dir);
}

int cmd_train(const CommonOpts& common, const std::string& manifest_path,
              const std::string& stage, const std::string& out_dir,
              const std::string& features_dir) {
  RunConfig cfg = common.resolve();
  fs::create_directories(out_dir);

  static const std::vector<std::string> kOrder = {"cnn", "mlp", "fusion", "joint", "siamese"};
  std::vector<std::string> stages;
  if (stage == "all")
    stages = kOrder;
  else if (std::find(kOrder.begin(), kOrder.end(), stage) != kOrder.end())
    stages = {stage};
  else
    throw ConfigError("unknown stage '" + stage + "' (cnn, mlp, fusion, joint, siamese, all)");

  auto ckpt_path = [&](const std::string& s) { return out_dir + "/" + s + ".ckpt"; };
  auto require_ckpt = [&](const std::string& s) {
    if (!fs::exists(ckpt_path(s)))
      throw ConfigError("stage order violation: missing prerequisite checkpoint '" +
                        ckpt_path(s) + "' (run --stage " + s + " first)");
    return Checkpoint::load(ckpt_path(s));
  };

  DataSet data = dataset_for(cfg, manifest_path, features_dir);
  if (data.utterances.empty()) throw DspError("no usable utterances in the training manifest");

  const std::string echo = cfg.canonical_text();
  for (const std::string& s : stages) {
    StageOutput out;
    if (s == "cnn") {
      out = pretrain_cnn_classifier(data, cfg.train);
    } else if (s == "mlp") {
      out = pretrain_mlp(data, cfg.train);
    } else if (s == "fusion") {
      out = train_fusion_greedy(require_ckpt("cnn"), require_ckpt("mlp"), data, cfg.train);
    } else if (s == "joint") {
      out = finetune_joint_classifier(require_ckpt("fusion"), data, cfg.train);
    } else {  // siamese
      out = train_siamese(require_ckpt("joint"), data, cfg.train);
    }
    out.checkpoint.metadata["run_config"] = escape_newlines(echo);
    out.checkpoint.save(ckpt_path(s));
    write_training_log(out_dir + "/" + s + "_log.csv", out.log, echo);
    double last_loss = out.log.empty() ? 0.0 : out.log.back().loss;
    std::cout << "stage " << s << ": " << out.log.size() << " steps, final loss " << last_loss
              << ", checkpoint " << ckpt_path(s) << "\n";
  }
  return 0;
}

// ---- verify ----

Verifier verifier_from_checkpoint(const RunConfig& cfg, const Checkpoint& ckpt) {
  VerifierConfig vcfg = cfg.model;
  vcfg.n_classes = 0;
  vcfg.weight_sharing = ckpt.meta_or("weight_sharing", "true") == "true";
  vcfg.dropout_rate = cfg.train.dropout;
  vcfg.bn_decay = cfg.train.bn_decay;
  Verifier verifier(vcfg, cfg.seed);
  verifier.import_checkpoint(ckpt, /*allow_missing_heads=*/true);
  return verifier;
}

int cmd_verify(const CommonOpts& common, const std::string& wav_a, const std::string& wav_b,
               const std::string& ckpt_path, double threshold_flag, bool symmetrize) {
  RunConfig cfg = common.resolve();
  Checkpoint ckpt = Checkpoint::load(ckpt_path);
  Verifier verifier = verifier_from_checkpoint(cfg, ckpt);

  double threshold = threshold_flag;
  if (!(threshold > 0.0)) {
    const std::string stored = ckpt.meta_or("decision_threshold", "");
    if (stored.empty())
      throw ConfigError("no --threshold given and the checkpoint stores none");
    threshold = std::stod(stored);
  }

  UtteranceFeatures fa = features_of_clip(load_wav(wav_a), "a");
  UtteranceFeatures fb = features_of_clip(load_wav(wav_b), "b");
  fb.speaker_id = "b";  // labels are irrelevant here

  ScoreProtocol protocol = cfg.protocol;
  protocol.symmetrize = symmetrize || protocol.symmetrize;
  PairScore score = score_pair(fa, fb, verifier, protocol);

  const bool accept = score.distance < threshold;
  std::cout << "distance = " << score.distance << "\n";
  std::cout << "threshold = " << threshold << "\n";
  std::cout << "decision = " << (accept ? "accept" : "reject") << "\n";
  return 0;
}

// ---- evaluate ----

int cmd_evaluate(const CommonOpts& common, const std::string& manifest_path,
                 const std::string& ckpt_path, const std::string& report_path,
                 const std::string& roc_path, const std::string& device_pair,
                 const std::string& features_dir, bool symmetrize, int max_pairs,
                 const std::string& embedding) {
  RunConfig cfg = common.resolve();
  Checkpoint ckpt = Checkpoint::load(ckpt_path);
  Verifier verifier = verifier_from_checkpoint(cfg, ckpt);

  DataSet data = dataset_for(cfg, manifest_path, features_dir);
  if (data.utterances.empty()) throw DspError("no usable utterances in the test manifest");

  ScoreProtocol protocol = cfg.protocol;
  protocol.symmetrize = symmetrize || protocol.symmetrize;
  if (max_pairs > 0) protocol.max_pairs = max_pairs;

  std::optional<std::pair<Device, Device>> filter;
  if (!device_pair.empty()) {
    auto devices = parse_device_list(device_pair);
    if (devices.size() != 2) throw ConfigError("--device-pair expects two device names");
    filter = std::make_pair(devices[0], devices[1]);
  }
  EmbeddingKind kind = EmbeddingKind::fc8;
  if (embedding == "fc7")
    kind = EmbeddingKind::fc7;
  else if (embedding != "fc8")
    throw ConfigError("--embedding expects fc7 or fc8");

  EvalReport report = evaluate(data, verifier, protocol, filter, kind);
  const std::string json = report_to_json(report, cfg.canonical_text());
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw ConfigError("cannot write report '" + report_path + "'");
    out << json << "\n";
  } else {
    std::cout << json << "\n";
  }
  if (!roc_path.empty()) write_roc_csv(roc_path, report.roc, cfg.canonical_text());
  std::cout << "eer = " << report.eer << "\nauc = " << report.auc << "\n";
  return 0;
}

// ---- gradcheck ----

int cmd_gradcheck(const CommonOpts& common, double tolerance, int n_seeds) {
  common.resolve();
  auto reports = nn::run_gradcheck_suite(tolerance, n_seeds, std::cout);
  if (!nn::suite_passed(reports, tolerance)) {
    std::cerr << "gradcheck failed at tolerance " << tolerance << "\n";
    return 3;
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"prosodic-enhanced Siamese speaker verification toolkit"};
  app.require_subcommand(1);

  CommonOpts synth_common, feat_common, train_common, verify_common, eval_common, grad_common;

  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-speaker corpus");
  std::string synth_out = "corpus";
  int synth_speakers = 4, synth_utts = 2;
  std::string synth_devices = "microphone";
  double synth_duration = 6.0;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--speakers", synth_speakers, "number of speakers (>= 2)");
  synth->add_option("--utterances", synth_utts, "utterances per speaker");
  synth->add_option("--devices", synth_devices, "comma-separated device list");
  synth->add_option("--duration", synth_duration, "minimum utterance duration, seconds (>= 6)");
  add_common(synth, synth_common);

  auto* features = app.add_subcommand("features", "extract MFSC and prosodic feature caches");
  std::string feat_manifest, feat_out;
  features->add_option("--manifest", feat_manifest, "JSON-lines manifest")->required();
  features->add_option("--out", feat_out, "cache output directory")->required();
  add_common(features, feat_common);

  auto* train = app.add_subcommand("train", "run the staged training procedure");
  std::string train_manifest, train_stage = "all", train_out = ".", train_features;
  train->add_option("--manifest", train_manifest, "training manifest")->required();
  train->add_option("--stage", train_stage, "cnn | mlp | fusion | joint | siamese | all");
  train->add_option("--out", train_out, "checkpoint/log output directory")->required();
  train->add_option("--features", train_features, "feature cache directory (optional)");
  add_common(train, train_common);

  auto* verify = app.add_subcommand("verify", "score two audio files against a checkpoint");
  std::string verify_a, verify_b, verify_ckpt;
  double verify_threshold = 0.0;
  bool verify_symmetrize = false;
  verify->add_option("audio_a", verify_a, "first WAV file")->required();
  verify->add_option("audio_b", verify_b, "second WAV file")->required();
  verify->add_option("--ckpt", verify_ckpt, "trained checkpoint")->required();
  verify->add_option("--threshold", verify_threshold,
                     "accept/reject threshold (default: stored in checkpoint)");
  verify->add_flag("--symmetrize", verify_symmetrize, "average both scoring orders");
  add_common(verify, verify_common);

  auto* evaluate = app.add_subcommand("evaluate", "EER/AUC evaluation over a test manifest");
  std::string eval_manifest, eval_ckpt, eval_report, eval_roc, eval_device_pair, eval_features;
  std::string eval_embedding = "fc8";
  bool eval_symmetrize = false;
  int eval_max_pairs = 0;
  evaluate->add_option("--manifest", eval_manifest, "test manifest")->required();
  evaluate->add_option("--ckpt", eval_ckpt, "trained checkpoint")->required();
  evaluate->add_option("--report", eval_report, "report JSON path (default: stdout)");
  evaluate->add_option("--roc", eval_roc, "ROC CSV path");
  evaluate->add_option("--device-pair", eval_device_pair,
                       "restrict to one unordered device pair, e.g. microphone,phone");
  evaluate->add_option("--features", eval_features, "feature cache directory (optional)");
  evaluate->add_flag("--symmetrize", eval_symmetrize, "average both scoring orders");
  evaluate->add_option("--max-pairs", eval_max_pairs, "seeded subsample of pairs (0 = all)");
  evaluate->add_option("--embedding", eval_embedding, "fc8 (fused) or fc7 (CNN only)");
  add_common(evaluate, eval_common);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of all operators");
  double grad_tol = 1e-4;
  int grad_seeds = 10;
  gradcheck->add_option("--tolerance", grad_tol, "max relative error");
  gradcheck->add_option("--seeds", grad_seeds, "random instances per operator");
  add_common(gradcheck, grad_common);

  std::vector<const char*> argv;
  argv.push_back("svkit");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed())
      return cmd_synth(synth_common, synth_out, synth_speakers, synth_utts, synth_devices,
                       synth_duration);
    if (features->parsed()) return cmd_features(feat_common, feat_manifest, feat_out);
    if (train->parsed())
      return cmd_train(train_common, train_manifest, train_stage, train_out, train_features);
    if (verify->parsed())
      return cmd_verify(verify_common, verify_a, verify_b, verify_ckpt, verify_threshold,
                        verify_symmetrize);
    if (evaluate->parsed())
      return cmd_evaluate(eval_common, eval_manifest, eval_ckpt, eval_report, eval_roc,
                          eval_device_pair, eval_features, eval_symmetrize, eval_max_pairs,
                          eval_embedding);
    if (gradcheck->parsed()) return cmd_gradcheck(grad_common, grad_tol, grad_seeds);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const AudioError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DspError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ProsodyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NnError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return std::string(e.what()).find("diverged") != std::string::npos ? 3 : 2;
  }
  return 1;
}

}  // namespace svkit::cli
