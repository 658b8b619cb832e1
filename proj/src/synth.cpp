#include "svkit/synth.hpp"

#include <algorithm>
#include <cmath>

#include "svkit/dsp.hpp"
#include "svkit/rng.hpp"

namespace svkit {

namespace {

struct SpeakerVoice {
  double base_f0;
  double formant[3];
  double bandwidth[3];
  double gain[3];
};

SpeakerVoice speaker_voice(const SynthSpec& spec, int speaker) {
  Rng rng = Rng(spec.seed).fork(0x5eed0001ULL).fork(uint64_t(speaker));
  SpeakerVoice v;

  // F0 ladder over 80-300 Hz; the per-speaker offset shrinks as the ladder
  // tightens so that any two speakers stay at least ~10 Hz apart.
  const int n = std::max(2, spec.n_speakers);
  const double spacing = 220.0 / double(n - 1);
  const double offset = std::min(2.0, std::max(0.0, (spacing - 12.0) / 2.0));
  v.base_f0 = 80.0 + spacing * speaker + rng.uniform(-offset, offset);

  const double lo[3] = {350.0, 1000.0, 2600.0};
  const double hi[3] = {900.0, 2400.0, 3800.0};
  for (int r = 0; r < 3; ++r) {
    v.formant[r] = rng.uniform(lo[r], hi[r]);
    v.bandwidth[r] = rng.uniform(80.0, 200.0) * (1.0 + 0.4 * r);
    v.gain[r] = rng.uniform(0.6, 1.0) / (1.0 + 0.8 * r);
  }
  return v;
}

double envelope_at(const SpeakerVoice& v, double freq) {
  double a = 0.0;
  for (int r = 0; r < 3; ++r) {
    double d = freq - v.formant[r];
    a += v.gain[r] * v.bandwidth[r] * v.bandwidth[r] / (d * d + v.bandwidth[r] * v.bandwidth[r]);
  }
  return a / (1.0 + (freq / 3500.0) * (freq / 3500.0));  // gentle spectral tilt
}

// Voiced stretch of harmonic-rich sound with vibrato, declination, per-cycle
// frequency wobble (jitter) and amplitude ripple (shimmer).
void render_voiced(std::vector<double>& out, const SpeakerVoice& v, double f0_scale,
                   double amp, double dur_s, Rng& rng) {
  const int n = int(dur_s * kSampleRate);
  const double vib_rate = rng.uniform(3.0, 5.0);
  const double vib_depth = rng.uniform(0.008, 0.015);
  const double vib_phase = rng.uniform(0.0, 2.0 * M_PI);
  const double am_rate = rng.uniform(1.5, 3.0);
  const double am_depth = rng.uniform(0.03, 0.06);
  const double am_phase = rng.uniform(0.0, 2.0 * M_PI);
  const double declination = rng.uniform(-0.03, 0.0);  // relative F0 drop over the segment

  const double f0_nominal = v.base_f0 * f0_scale;
  const int n_harm = std::max(1, std::min(40, int(4000.0 / (f0_nominal * 1.05))));

  double harm_amp[40];
  double harm_phase[40];
  for (int k = 0; k < n_harm; ++k) {
    harm_amp[k] = envelope_at(v, f0_nominal * (k + 1));
    harm_phase[k] = rng.uniform(0.0, 2.0 * M_PI);
  }
  double norm = 0.0;
  for (int k = 0; k < n_harm; ++k) norm += harm_amp[k];
  if (norm <= 0.0) norm = 1.0;

  // slow random-walk wobble of the instantaneous frequency
  double wobble = 0.0;
  double phase = 0.0;
  const size_t base = out.size();
  out.resize(base + size_t(n));
  for (int i = 0; i < n; ++i) {
    double t = double(i) / kSampleRate;
    if (i % 96 == 0)  // update every 2 ms
      wobble = 0.98 * wobble + 0.003 * rng.normal();
    double f0 = f0_nominal * (1.0 + vib_depth * std::sin(2.0 * M_PI * vib_rate * t + vib_phase) +
                              declination * t / dur_s + wobble);
    phase += 2.0 * M_PI * f0 / kSampleRate;

    double s = 0.0;
    for (int k = 0; k < n_harm; ++k) s += harm_amp[k] * std::sin((k + 1) * phase + harm_phase[k]);
    s /= norm;

    double env = 1.0 + am_depth * std::sin(2.0 * M_PI * am_rate * t + am_phase);
    double fade = 1.0;
    const double ramp = 0.030 * kSampleRate;
    if (i < ramp) fade = 0.5 - 0.5 * std::cos(M_PI * i / ramp);
    if (n - 1 - i < ramp) fade = std::min(fade, 0.5 - 0.5 * std::cos(M_PI * (n - 1 - i) / ramp));
    out[base + size_t(i)] = amp * env * fade * s;
  }
}

void append_silence(std::vector<double>& out, double dur_s) {
  out.resize(out.size() + size_t(dur_s * kSampleRate), 0.0);
}

std::vector<double> bandpass_fir(double f_lo, double f_hi, int taps) {
  std::vector<double> h(size_t(taps), 0.0);
  const int mid = taps / 2;
  const double wl = f_lo / kSampleRate, wh = f_hi / kSampleRate;
  auto sinc = [](double x) { return x == 0.0 ? 1.0 : std::sin(M_PI * x) / (M_PI * x); };
  for (int i = 0; i < taps; ++i) {
    int k = i - mid;
    double w = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / double(taps - 1));
    h[i] = (2.0 * wh * sinc(2.0 * wh * k) - 2.0 * wl * sinc(2.0 * wl * k)) * w;
  }
  return h;
}

void convolve_inplace(std::vector<double>& x, const std::vector<double>& h) {
  const int n = int(x.size()), m = int(h.size()), mid = m / 2;
  std::vector<double> y(size_t(n), 0.0);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = 0; k < m; ++k) {
      int j = i + mid - k;
      if (j >= 0 && j < n) acc += h[k] * x[size_t(j)];
    }
    y[size_t(i)] = acc;
  }
  x.swap(y);
}

double rms_of(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return std::sqrt(e / double(std::max<size_t>(1, x.size())));
}

void apply_device(std::vector<double>& x, Device device, Rng& rng) {
  double noise_db;
  bool band_limit = false, clip = false;
  switch (device) {
    case Device::microphone: noise_db = -60.0; break;
    case Device::dvr: noise_db = -40.0; band_limit = true; break;
    case Device::phone: noise_db = -35.0; band_limit = true; clip = true; break;
    case Device::other: noise_db = -50.0; break;
  }

  if (band_limit) {
    static const std::vector<double> fir = bandpass_fir(300.0, 3400.0, 201);
    convolve_inplace(x, fir);
  }

  const double rms = rms_of(x);
  const double noise_amp = rms * std::pow(10.0, noise_db / 20.0);
  for (double& v : x) v += noise_amp * rng.normal();

  if (clip) {
    const double c = 2.2 * rms;
    if (c > 0.0)
      for (double& v : x) v = c * std::tanh(v / c);
  }
}

std::vector<double> render_base_utterance(const SynthSpec& spec, int speaker, int utterance) {
  const SpeakerVoice voice = speaker_voice(spec, speaker);
  Rng rng = Rng(spec.seed).fork(0x5eed0002ULL).fork(uint64_t(speaker) << 20 | uint64_t(utterance));

  const double f0_scale = 1.0 + rng.uniform(-0.005, 0.005);
  const double amp = 0.28 * (1.0 + rng.uniform(-0.2, 0.2));
  const double target = spec.min_duration_s + rng.uniform(0.2, 1.2);

  std::vector<double> x;
  append_silence(x, 0.25);
  int since_word_break = 0;
  while (double(x.size()) / kSampleRate < target) {
    render_voiced(x, voice, f0_scale, amp, rng.uniform(0.25, 0.55), rng);
    ++since_word_break;
    if (since_word_break >= 2 && rng.uniform() < 0.4) {
      append_silence(x, rng.uniform(0.35, 0.6));  // word boundary
      since_word_break = 0;
    } else {
      append_silence(x, rng.uniform(0.06, 0.2));  // word-internal pause
    }
  }
  append_silence(x, 0.25);
  return x;
}

}  // namespace

double synth_speaker_f0(const SynthSpec& spec, int speaker) {
  return speaker_voice(spec, speaker).base_f0;
}

AudioClip synth_utterance(const SynthSpec& spec, int speaker, int utterance, Device device) {
  if (spec.n_speakers < 2) throw AudioError("synthetic corpus needs at least 2 speakers");
  if (speaker < 0 || speaker >= spec.n_speakers || utterance < 0 ||
      utterance >= spec.utterances_per_speaker)
    throw AudioError("speaker/utterance index out of range");
  if (spec.min_duration_s < 6.0) throw AudioError("utterance duration must be >= 6 s");

  std::vector<double> x = render_base_utterance(spec, speaker, utterance);
  Rng rng = Rng(spec.seed)
                .fork(0x5eed0003ULL)
                .fork(uint64_t(speaker) << 28 | uint64_t(utterance) << 8 | uint64_t(device));
  apply_device(x, device, rng);

  AudioClip clip;
  clip.sample_rate = kSampleRate;
  clip.samples = std::move(x);
  return clip;
}

ManifestEntry synth_manifest_entry(const SynthSpec& spec, int speaker, int utterance,
                                   Device device, const std::string& wav_dir) {
  (void)spec;
  ManifestEntry e;
  char buf[64];
  std::snprintf(buf, sizeof buf, "spk%03d_utt%02d_%s", speaker, utterance, device_name(device));
  e.utterance_id = buf;
  std::snprintf(buf, sizeof buf, "spk%03d", speaker);
  e.speaker_id = buf;
  e.device = device;
  std::snprintf(buf, sizeof buf, "sess%02d", utterance);
  e.session = buf;
  e.path = wav_dir.empty() ? e.utterance_id + ".wav" : wav_dir + "/" + e.utterance_id + ".wav";
  return e;
}

void generate_synthetic_corpus(const SynthSpec& spec, std::vector<AudioClip>& clips,
                               std::vector<ManifestEntry>& manifest) {
  if (spec.n_speakers < 2) throw AudioError("synthetic corpus needs at least 2 speakers");
  if (spec.utterances_per_speaker < 1 || spec.devices.empty())
    throw AudioError("invalid synthetic corpus counts");

  clips.clear();
  manifest.clear();
  struct Item {
    int speaker, utterance;
    Device device;
  };
  std::vector<Item> items;
  for (int s = 0; s < spec.n_speakers; ++s)
    for (int u = 0; u < spec.utterances_per_speaker; ++u)
      for (Device d : spec.devices) items.push_back({s, u, d});

  clips.resize(items.size());
  manifest.resize(items.size());
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < items.size(); ++i) {
    const Item& it = items[i];
    clips[i] = synth_utterance(spec, it.speaker, it.utterance, it.device);
    manifest[i] = synth_manifest_entry(spec, it.speaker, it.utterance, it.device);
  }
}

}  // namespace svkit
