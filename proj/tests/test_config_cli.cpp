#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "svkit/checkpoint.hpp"
#include "svkit/cli.hpp"
#include "svkit/config.hpp"
#include "svkit/model.hpp"

using namespace svkit;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "svkit_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run_cli(std::vector<std::string> args) { return svkit::cli::run(args); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("run config: file parsing, overrides, unknown keys") {
  RunConfig cfg;
  const fs::path file = work_dir() / "run.cfg";
  std::ofstream(file) << "seed = 42\n"
                      << "# a comment\n"
                      << "train.batch_size = 8\n"
                      << "model.margin = 12.5\n"
                      << "protocol.n_subpairs = 100\n";
  cfg.load_file(file.string());
  cfg.resolve();
  CHECK(cfg.seed == 42);
  CHECK(cfg.train.batch_size == 8);
  CHECK(cfg.model.margin == 12.5);
  CHECK(cfg.train.margin == 12.5);  // mirrored by resolve()
  CHECK(cfg.train.seed == 42);
  CHECK(cfg.protocol.n_subpairs == 100);

  CHECK_THROWS_WITH_AS(cfg.set("train.nope", "1"), doctest::Contains("unknown key"), ConfigError);
  CHECK_THROWS_AS(cfg.set("train.batch_size", "abc"), ConfigError);
  CHECK_THROWS_AS(cfg.set("model.weight_sharing", "maybe"), ConfigError);

  // fixed feature geometry is enforced
  RunConfig bad;
  bad.set("model.n_mel", "32");
  CHECK_THROWS_AS(bad.resolve(), ConfigError);

  // canonical text parses back to the same canonical text
  RunConfig c2;
  std::istringstream is(cfg.canonical_text());
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    c2.set(line.substr(0, eq), line.substr(eq + 3));
  }
  c2.resolve();
  CHECK(c2.canonical_text() == cfg.canonical_text());
  CHECK(c2.hash() == cfg.hash());
}

TEST_CASE("cli: synth then features builds caches") {
  const fs::path corpus = work_dir() / "corpus";
  REQUIRE(run_cli({"synth", "--out", corpus.string(), "--speakers", "2", "--utterances", "2",
               "--devices", "microphone", "--seed", "5"}) == 0);
  CHECK(fs::exists(corpus / "manifest.jsonl"));
  CHECK(fs::exists(corpus / "spk000_utt00_microphone.wav"));

  const fs::path cache = work_dir() / "cache";
  REQUIRE(run_cli({"features", "--manifest", (corpus / "manifest.jsonl").string(), "--out",
               cache.string()}) == 0);
  CHECK(fs::exists(cache / "spk000_utt00_microphone.mfsc"));
  CHECK(fs::exists(cache / "prosody.csv"));
  CHECK(fs::exists(cache / "config.txt"));

  // 4 utterances -> 4 cache files + 4 csv rows
  int rows = 0;
  {
    std::ifstream in(cache / "prosody.csv");
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line))
      if (!line.empty()) ++rows;
  }
  CHECK(rows == 4);

  SUBCASE("rerun is bit-identical") {
    const std::string before = slurp(cache / "spk000_utt00_microphone.mfsc");
    const fs::path cache2 = work_dir() / "cache2";
    REQUIRE(run_cli({"features", "--manifest", (corpus / "manifest.jsonl").string(), "--out",
                 cache2.string()}) == 0);
    CHECK(slurp(cache2 / "spk000_utt00_microphone.mfsc") == before);
    CHECK(slurp(cache2 / "prosody.csv") == slurp(cache / "prosody.csv"));
  }

  SUBCASE("missing audio lands in the skip report with a partial-failure exit") {
    const fs::path broken = work_dir() / "broken.jsonl";
    std::ofstream out(broken);
    out << R"({"utterance_id":"missing","speaker_id":"s","device":"microphone","session":"x","path":"nope.wav"})"
        << "\n";
    out << R"({"utterance_id":"ok","speaker_id":"s","device":"microphone","session":"x","path":")"
        << (corpus / "spk000_utt00_microphone.wav").string() << R"("})"
        << "\n";
    out.close();
    const fs::path cache3 = work_dir() / "cache3";
    CHECK(run_cli({"features", "--manifest", broken.string(), "--out", cache3.string()}) == 2);
    CHECK(slurp(cache3 / "skip_report.txt").find("missing") != std::string::npos);
    CHECK(fs::exists(cache3 / "ok.mfsc"));
  }
}

TEST_CASE("cli: train refuses stage-order violations") {
  const fs::path corpus = work_dir() / "corpus";
  const fs::path out = work_dir() / "ckpts_bad";
  CHECK(run_cli({"train", "--manifest", (corpus / "manifest.jsonl").string(), "--stage", "fusion",
             "--out", out.string(), "--features", (work_dir() / "cache").string()}) == 1);
  CHECK(run_cli({"train", "--manifest", (corpus / "manifest.jsonl").string(), "--stage", "bogus",
             "--out", out.string()}) == 1);
}

TEST_CASE("cli: verify rejects too-short audio, evaluate reports chance-level metrics") {
  // untrained checkpoint straight from a fresh verifier
  VerifierConfig vcfg;
  vcfg.n_classes = 0;
  Verifier verifier(vcfg, 3);
  Checkpoint ckpt = verifier.export_checkpoint(false);
  ckpt.metadata["stage"] = "siamese";
  ckpt.metadata["decision_threshold"] = "5.0";
  const fs::path ckpt_path = work_dir() / "untrained.ckpt";
  ckpt.save(ckpt_path.string());

  SUBCASE("1 s clip is too short for a 3 s window") {
    AudioClip clip;
    clip.sample_rate = 48000;
    clip.samples.resize(48000);
    for (size_t i = 0; i < clip.samples.size(); ++i)
      clip.samples[i] = 0.5 * std::sin(2.0 * M_PI * 150.0 * double(i) / 48000.0);
    const fs::path wav = work_dir() / "short.wav";
    save_wav_int16(wav.string(), clip);
    CHECK(run_cli({"verify", wav.string(), wav.string(), "--ckpt", ckpt_path.string()}) == 2);
  }

  SUBCASE("verify accepts a long self-comparison") {
    const fs::path wav = work_dir() / "corpus" / "spk000_utt00_microphone.wav";
    REQUIRE(fs::exists(wav));
    CHECK(run_cli({"verify", wav.string(), wav.string(), "--ckpt", ckpt_path.string(),
               "--symmetrize"}) == 0);
  }

  SUBCASE("evaluate emits a schema-complete report") {
    const fs::path report = work_dir() / "report.json";
    const fs::path roc = work_dir() / "roc.csv";
    REQUIRE(run_cli({"evaluate", "--manifest", (work_dir() / "corpus" / "manifest.jsonl").string(),
                 "--ckpt", ckpt_path.string(), "--report", report.string(), "--roc", roc.string(),
                 "--features", (work_dir() / "cache").string(), "--seed", "9"}) == 0);
    const std::string text = slurp(report);
    CHECK(text.find("\"eer\"") != std::string::npos);
    CHECK(text.find("\"auc\"") != std::string::npos);
    CHECK(text.find("\"n_genuine\"") != std::string::npos);
    CHECK(text.find("\"protocol\"") != std::string::npos);
    CHECK(text.find("\"per_device_pair\"") != std::string::npos);
    CHECK(slurp(roc).find("threshold,far,frr") != std::string::npos);

    // identical rerun produces an identical report
    const fs::path report2 = work_dir() / "report2.json";
    REQUIRE(run_cli({"evaluate", "--manifest", (work_dir() / "corpus" / "manifest.jsonl").string(),
                 "--ckpt", ckpt_path.string(), "--report", report2.string(), "--features",
                 (work_dir() / "cache").string(), "--seed", "9"}) == 0);
    CHECK(slurp(report2) == text);
  }

  SUBCASE("device filter with no matching pairs is a data error") {
    CHECK(run_cli({"evaluate", "--manifest", (work_dir() / "corpus" / "manifest.jsonl").string(),
               "--ckpt", ckpt_path.string(), "--features", (work_dir() / "cache").string(),
               "--device-pair", "phone,phone"}) == 2);
  }
}

TEST_CASE("cli: gradcheck exit codes") {
  CHECK(run_cli({"gradcheck", "--seeds", "2"}) == 0);
  CHECK(run_cli({"gradcheck", "--seeds", "1", "--tolerance", "1e-18"}) == 3);
}

TEST_CASE("cli: unknown config key is a usage error") {
  const fs::path bad = work_dir() / "bad.cfg";
  std::ofstream(bad) << "nonsense.key = 1\n";
  CHECK(run_cli({"gradcheck", "--seeds", "1", "--config", bad.string()}) == 1);
}
