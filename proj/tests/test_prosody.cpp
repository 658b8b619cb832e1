#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "svkit/prosody.hpp"
#include "svkit/rng.hpp"

using namespace svkit;

namespace {

AudioClip clip_of(std::vector<double> samples) {
  AudioClip c;
  c.sample_rate = kSampleRate;
  c.samples = std::move(samples);
  return c;
}

std::vector<double> sine(double freq, double dur_s, double amp = 0.5) {
  std::vector<double> x(size_t(dur_s * kSampleRate));
  for (size_t i = 0; i < x.size(); ++i) x[i] = amp * std::sin(2.0 * M_PI * freq * i / kSampleRate);
  return x;
}

std::vector<double> sawtooth(double freq, double dur_s, double amp = 0.5) {
  std::vector<double> x(size_t(dur_s * kSampleRate));
  for (size_t i = 0; i < x.size(); ++i) {
    double phase = std::fmod(freq * i / kSampleRate, 1.0);
    x[i] = amp * (2.0 * phase - 1.0);
  }
  return x;
}

// Sine whose period alternates between (1+d)T and (1-d)T. The period is
// switched exactly at the waveform peaks (phase 0.25), so the inter-peak
// intervals the cycle extractor measures alternate by +-d as well.
std::vector<double> alternating_period_sine(double freq, double dur_s, double d, double amp = 0.5) {
  std::vector<double> x;
  const double T = 1.0 / freq;
  double period = T * (1.0 + d);
  double phase = 0.0;
  double next_switch = 0.25;
  while (double(x.size()) / kSampleRate < dur_s) {
    x.push_back(amp * std::sin(2.0 * M_PI * phase));
    phase += 1.0 / (period * kSampleRate);
    if (phase >= next_switch) {
      period = (period > T) ? T * (1.0 - d) : T * (1.0 + d);
      next_switch += 1.0;
    }
  }
  return x;
}

double voiced_mean(const PitchTrack& t) {
  double s = 0.0;
  int n = 0;
  for (size_t i = 0; i < t.f0.size(); ++i)
    if (t.voiced[i]) {
      s += t.f0[i];
      ++n;
    }
  REQUIRE(n > 0);
  return s / n;
}

}  // namespace

TEST_CASE("estimate_pitch on known signals") {
  SUBCASE("silence is unvoiced everywhere") {
    auto clip = clip_of(std::vector<double>(kSampleRate, 0.0));
    auto segments = detect_voiced_segments(clip);
    PitchTrack t = estimate_pitch(clip, segments);
    for (size_t i = 0; i < t.f0.size(); ++i) {
      CHECK(!t.voiced[i]);
      CHECK(t.f0[i] == 0.0);
    }
  }

  SUBCASE("200 Hz sine within 2 Hz") {
    auto clip = clip_of(sine(200.0, 1.0));
    auto segments = detect_voiced_segments(clip);
    PitchTrack t = estimate_pitch(clip, segments);
    int voiced = 0;
    for (size_t i = 0; i < t.f0.size(); ++i)
      if (t.voiced[i]) {
        ++voiced;
        CHECK(t.f0[i] == doctest::Approx(200.0).epsilon(2.0 / 200.0));
      }
    CHECK(voiced > 50);
  }

  SUBCASE("100 Hz sawtooth within 1 Hz") {
    auto clip = clip_of(sawtooth(100.0, 1.0));
    auto segments = detect_voiced_segments(clip);
    PitchTrack t = estimate_pitch(clip, segments);
    for (size_t i = 0; i < t.f0.size(); ++i)
      if (t.voiced[i]) CHECK(t.f0[i] == doctest::Approx(100.0).epsilon(1.0 / 100.0));
  }

  SUBCASE("voiced f0 stays within [60, 400]") {
    auto clip = clip_of(sine(90.0, 0.8));
    auto segments = detect_voiced_segments(clip);
    PitchTrack t = estimate_pitch(clip, segments);
    for (size_t i = 0; i < t.f0.size(); ++i) {
      if (t.voiced[i]) {
        CHECK(t.f0[i] >= 60.0);
        CHECK(t.f0[i] <= 400.0);
      } else {
        CHECK(t.f0[i] == 0.0);
      }
    }
  }
}

TEST_CASE("extract_cycles on a pure 100 Hz sine") {
  auto clip = clip_of(sine(100.0, 1.0, 0.5));
  auto segments = detect_voiced_segments(clip);
  PitchTrack t = estimate_pitch(clip, segments);
  auto cycles = extract_cycles(clip, t);
  REQUIRE(cycles.size() == 1);
  REQUIRE(cycles[0].periods.size() >= 50);
  CHECK(cycles[0].periods.size() == cycles[0].amplitudes.size());
  for (double p : cycles[0].periods) CHECK(p == doctest::Approx(0.010).epsilon(0.0001 / 0.010));
  for (double a : cycles[0].amplitudes) CHECK(a == doctest::Approx(0.5).epsilon(0.01 / 0.5));
}

TEST_CASE("2% alternating period perturbation gives ~4% relative jitter") {
  auto clip = clip_of(alternating_period_sine(100.0, 2.0, 0.02));
  auto segments = detect_voiced_segments(clip);
  PitchTrack t = estimate_pitch(clip, segments);
  auto cycles = extract_cycles(clip, t);
  REQUIRE(!cycles.empty());
  JitterFeatures j = jitter_features(cycles);
  CHECK(j.relative == doctest::Approx(4.0).epsilon(0.5 / 4.0));
}

TEST_CASE("runs with fewer than 3 cycles are skipped") {
  // a 25 ms burst of 100 Hz holds at most 2 peaks
  std::vector<double> x(size_t(0.2 * kSampleRate), 0.0);
  auto burst = sine(100.0, 0.025, 0.5);
  x.insert(x.end(), burst.begin(), burst.end());
  x.insert(x.end(), size_t(0.2 * kSampleRate), 0.0);
  auto clip = clip_of(x);
  PitchTrack t = estimate_pitch(clip, {{0, int64_t(x.size())}});
  auto cycles = extract_cycles(clip, t);
  for (const auto& c : cycles) CHECK(c.periods.size() >= 3);
}

TEST_CASE("duration features hand cases") {
  SUBCASE("no voiced segments") {
    DurationFeatures d = duration_features({}, kSampleRate);
    CHECK(d.frames_per_word == 0.0);
    CHECK(d.voiced_len_s == 0.0);
    CHECK(d.unvoiced_len_s == 0.0);
  }

  SUBCASE("one pseudo-word with an internal 0.1 s gap") {
    // voiced [0, 0.5 s), gap 0.1 s, voiced [0.6 s, 0.9 s)
    std::vector<VoicedSegment> segs = {{0, 24000}, {28800, 43200}};
    DurationFeatures d = duration_features(segs, 48000);
    CHECK(d.frames_per_word == doctest::Approx(90.0).epsilon(1e-12));
    CHECK(d.voiced_len_s == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(d.unvoiced_len_s == doctest::Approx(0.1).epsilon(1e-12));
  }

  SUBCASE("a 1 s gap splits two pseudo-words") {
    std::vector<VoicedSegment> segs = {{0, 24000}, {24000 + 48000, 24000 + 48000 + 24000}};
    DurationFeatures d = duration_features(segs, 3 * 48000);
    CHECK(d.frames_per_word == doctest::Approx(50.0).epsilon(1e-12));  // 0.5 s each
    CHECK(d.unvoiced_len_s == 0.0);
  }
}

TEST_CASE("f0 features hand cases") {
  PitchTrack t;

  SUBCASE("constant 120 Hz") {
    t.f0.assign(100, 120.0);
    t.voiced.assign(100, 1);
    F0Features f = f0_features(t);
    CHECK(f.mean == doctest::Approx(120.0));
    CHECK(f.max == doctest::Approx(120.0));
    CHECK(f.min == doctest::Approx(120.0));
    CHECK(f.range == 0.0);
    CHECK(f.pseudo_slope == 0.0);
    CHECK(f.slope == 0.0);
  }

  SUBCASE("linear ramp 100 -> 200 over 1 s") {
    const int n = 101;  // 1 s at a 10 ms hop
    for (int i = 0; i < n; ++i) {
      t.f0.push_back(100.0 + 100.0 * i / double(n - 1));
      t.voiced.push_back(1);
    }
    F0Features f = f0_features(t);
    CHECK(f.pseudo_slope == doctest::Approx(100.0).epsilon(1.0 / 100.0));
    CHECK(f.slope == doctest::Approx(100.0).epsilon(1.0 / 100.0));
    CHECK(f.range == doctest::Approx(100.0));
  }

  SUBCASE("nothing voiced is an error") {
    t.f0.assign(50, 0.0);
    t.voiced.assign(50, 0);
    CHECK_THROWS_AS(f0_features(t), ProsodyError);
  }
}

TEST_CASE("jitter hand cases and properties") {
  SUBCASE("equal periods give zero everywhere") {
    CycleSequence c;
    c.periods.assign(20, 0.008);
    c.amplitudes.assign(20, 0.5);
    JitterFeatures j = jitter_features({c});
    CHECK(j.absolute_s <= 1e-12);
    CHECK(j.relative <= 1e-12);
    CHECK(j.rap <= 1e-12);
    CHECK(j.ppq5 <= 1e-12);
  }

  SUBCASE("periods [10, 12, 10] ms") {
    CycleSequence c;
    c.periods = {0.010, 0.012, 0.010};
    c.amplitudes = {1.0, 1.0, 1.0};
    JitterFeatures j = jitter_features({c});
    CHECK(j.absolute_s == doctest::Approx(0.002).epsilon(1e-9));
    CHECK(j.relative == doctest::Approx(18.75).epsilon(1e-9));
  }

  SUBCASE("time scaling leaves relative indices fixed, scales absolute jitter") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
      CycleSequence c;
      const int n = 8 + int(rng.uniform_index(20));
      for (int i = 0; i < n; ++i) {
        c.periods.push_back(0.005 + 0.01 * rng.uniform());
        c.amplitudes.push_back(1.0);
      }
      const double scale = 0.25 + 3.0 * rng.uniform();
      CycleSequence s = c;
      for (auto& p : s.periods) p *= scale;

      JitterFeatures j1 = jitter_features({c});
      JitterFeatures j2 = jitter_features({s});
      CHECK(j2.absolute_s == doctest::Approx(scale * j1.absolute_s).epsilon(1e-9));
      CHECK(j2.relative == doctest::Approx(j1.relative).epsilon(1e-9));
      CHECK(j2.rap == doctest::Approx(j1.rap).epsilon(1e-9));
      CHECK(j2.ppq5 == doctest::Approx(j1.ppq5).epsilon(1e-9));
    }
  }

  SUBCASE("no usable sequence is an error") {
    CycleSequence c;
    c.periods = {0.01};
    c.amplitudes = {1.0};
    CHECK_THROWS_AS(jitter_features({c}), ProsodyError);
  }
}

TEST_CASE("shimmer hand cases and properties") {
  SUBCASE("equal amplitudes give zero everywhere") {
    CycleSequence c;
    c.periods.assign(15, 0.01);
    c.amplitudes.assign(15, 0.7);
    ShimmerFeatures s = shimmer_features({c});
    CHECK(s.db <= 1e-12);
    CHECK(s.relative <= 1e-12);
    CHECK(s.apq3 <= 1e-12);
    CHECK(s.apq5 <= 1e-12);
    CHECK(s.apq11 <= 1e-12);
  }

  SUBCASE("amplitudes [1.0, 1.1]") {
    CycleSequence c;
    c.periods = {0.01, 0.01};
    c.amplitudes = {1.0, 1.1};
    ShimmerFeatures s = shimmer_features({c});
    CHECK(s.db == doctest::Approx(20.0 * std::log10(1.1)).epsilon(1e-12));
    CHECK(s.db == doctest::Approx(0.8279).epsilon(0.001 / 0.8279));
    CHECK(s.relative == doctest::Approx(100.0 * 0.1 / 1.05).epsilon(1e-9));
    CHECK(s.relative == doctest::Approx(9.52).epsilon(0.01 / 9.52));
  }

  SUBCASE("amplitude scaling leaves all five indices fixed") {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
      CycleSequence c;
      const int n = 12 + int(rng.uniform_index(20));
      for (int i = 0; i < n; ++i) {
        c.periods.push_back(0.01);
        c.amplitudes.push_back(0.2 + rng.uniform());
      }
      const double scale = 0.25 + 3.0 * rng.uniform();
      CycleSequence s = c;
      for (auto& a : s.amplitudes) a *= scale;

      ShimmerFeatures f1 = shimmer_features({c});
      ShimmerFeatures f2 = shimmer_features({s});
      CHECK(f2.db == doctest::Approx(f1.db).epsilon(1e-9));
      CHECK(f2.relative == doctest::Approx(f1.relative).epsilon(1e-9));
      CHECK(f2.apq3 == doctest::Approx(f1.apq3).epsilon(1e-9));
      CHECK(f2.apq5 == doctest::Approx(f1.apq5).epsilon(1e-9));
      CHECK(f2.apq11 == doctest::Approx(f1.apq11).epsilon(1e-9));
    }
  }
}

TEST_CASE("prosodic_vector end to end") {
  SUBCASE("clean 100 Hz sine: near-zero perturbation indices") {
    AudioClip clip = clip_of(sine(100.0, 2.0, 0.5));
    ProsodicVector v = prosodic_vector(clip);
    CHECK(v[3] == doctest::Approx(100.0).epsilon(1.0 / 100.0));  // f1
    for (size_t i = 10; i <= 12; ++i) CHECK(v[i] < 0.5);         // relative jitter indices, %
    CHECK(v[9] < 0.0005);                                        // absolute jitter, s
    for (size_t i = 13; i <= 17; ++i) CHECK(v[i] < 0.5);         // shimmer indices

    // f4 = f2 - f3 exactly; ordering
    CHECK(v[6] == v[4] - v[5]);
    CHECK(v[5] <= v[3]);
    CHECK(v[3] <= v[4]);

    // determinism
    ProsodicVector w = prosodic_vector(clip);
    for (size_t i = 0; i < 18; ++i) CHECK(v[i] == w[i]);
  }

  SUBCASE("white noise has no voiced content") {
    Rng rng(11);
    std::vector<double> x(2 * kSampleRate);
    for (auto& v : x) v = 0.3 * (2.0 * rng.uniform() - 1.0);
    CHECK_THROWS_WITH_AS(prosodic_vector(clip_of(x)), doctest::Contains("no voiced content"),
                         ProsodyError);
  }
}

TEST_CASE("prosody csv cache round trip") {
  std::vector<std::pair<std::string, ProsodicVector>> rows(2);
  rows[0].first = "u0";
  rows[1].first = "u1";
  Rng rng(3);
  for (auto& [id, v] : rows)
    for (size_t i = 0; i < 18; ++i) v[i] = rng.normal(10.0, 5.0);

  const std::string path = (std::filesystem::temp_directory_path() / "prosody.csv").string();
  write_prosody_csv(path, rows);
  auto back = read_prosody_csv(path);
  REQUIRE(back.size() == 2);
  for (size_t r = 0; r < 2; ++r) {
    CHECK(back[r].first == rows[r].first);
    for (size_t i = 0; i < 18; ++i)
      CHECK(back[r].second[i] == doctest::Approx(rows[r].second[i]).epsilon(1e-9));
  }
}
