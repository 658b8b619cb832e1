#include "svkit/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "svkit/rng.hpp"
#include "json.hpp"

namespace svkit {

const char* device_name(Device d) {
  switch (d) {
    case Device::microphone: return "microphone";
    case Device::dvr: return "dvr";
    case Device::phone: return "phone";
    case Device::other: return "other";
  }
  return "other";
}

Device device_from_name(const std::string& name) {
  if (name == "microphone") return Device::microphone;
  if (name == "dvr") return Device::dvr;
  if (name == "phone") return Device::phone;
  if (name == "other") return Device::other;
  throw AudioError("unknown device '" + name + "'");
}

namespace {

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return uint16_t(b[0]) | uint16_t(b[1]) << 8;
}

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8 & 0xff),
                        (unsigned char)(v >> 16 & 0xff), (unsigned char)(v >> 24 & 0xff)};
  out.write(reinterpret_cast<char*>(b), 4);
}

void write_u16(std::ostream& out, uint16_t v) {
  unsigned char b[2] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8 & 0xff)};
  out.write(reinterpret_cast<char*>(b), 2);
}

}  // namespace

AudioClip load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioError("cannot open '" + path + "'");

  char riff[4], wave[4];
  in.read(riff, 4);
  read_u32(in);  // riff size
  in.read(wave, 4);
  if (!in || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave, "WAVE", 4) != 0)
    throw AudioError("'" + path + "' is not a RIFF/WAVE file");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  bool have_fmt = false;
  std::vector<char> data;

  while (in) {
    char id[4];
    in.read(id, 4);
    if (!in) break;
    uint32_t size = read_u32(in);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      format = read_u16(in);
      channels = read_u16(in);
      sample_rate = read_u32(in);
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      bits = read_u16(in);
      if (size > 16) in.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data.resize(size);
      in.read(data.data(), size);
      if (size_t(in.gcount()) != size) throw AudioError("truncated data chunk in '" + path + "'");
      break;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);  // chunks are word-aligned
    }
  }

  if (!have_fmt) throw AudioError("missing fmt chunk in '" + path + "'");
  if (channels == 0 || sample_rate == 0) throw AudioError("bad fmt chunk in '" + path + "'");

  bool pcm16 = (format == 1 && bits == 16);
  bool f32 = ((format == 3 || format == 0xFFFE) && bits == 32);
  if (!pcm16 && !f32)
    throw AudioError("unsupported encoding in '" + path + "' (need 16-bit PCM or 32-bit float)");

  size_t bytes_per_sample = bits / 8;
  size_t n_frames = data.size() / (bytes_per_sample * channels);
  if (n_frames == 0) throw AudioError("zero-length audio in '" + path + "'");

  AudioClip clip;
  clip.sample_rate = int(sample_rate);
  clip.samples.resize(n_frames);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(data.data());
  for (size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      size_t off = (i * channels + c) * bytes_per_sample;
      if (pcm16) {
        int16_t v = int16_t(uint16_t(p[off]) | uint16_t(p[off + 1]) << 8);
        acc += v / 32768.0;
      } else {
        uint32_t u = uint32_t(p[off]) | uint32_t(p[off + 1]) << 8 | uint32_t(p[off + 2]) << 16 |
                     uint32_t(p[off + 3]) << 24;
        float f;
        std::memcpy(&f, &u, 4);
        acc += f;
      }
    }
    double v = acc / channels;
    if (!std::isfinite(v)) throw AudioError("non-finite sample in '" + path + "'");
    clip.samples[i] = v;
  }
  return clip;
}

void save_wav_int16(const std::string& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw AudioError("cannot write '" + path + "'");
  uint32_t n = uint32_t(clip.samples.size());
  uint32_t data_bytes = n * 2;
  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 1);  // PCM
  write_u16(out, 1);  // mono
  write_u32(out, uint32_t(clip.sample_rate));
  write_u32(out, uint32_t(clip.sample_rate) * 2);
  write_u16(out, 2);
  write_u16(out, 16);
  out.write("data", 4);
  write_u32(out, data_bytes);
  for (double s : clip.samples) {
    long q = std::lrint(std::clamp(s, -1.0, 1.0) * 32768.0);
    q = std::clamp<long>(q, -32768, 32767);
    write_u16(out, uint16_t(int16_t(q)));
  }
  if (!out) throw AudioError("write failed for '" + path + "'");
}

namespace {

// Blackman window keeps the sinc sidelobes below -74 dB, comfortably past the
// 60 dB target for the resampler.
double blackman(double x, double half_width) {
  double t = (x / half_width + 1.0) * 0.5;  // [0,1] over the kernel support
  return 0.42 - 0.5 * std::cos(2.0 * M_PI * t) + 0.08 * std::cos(4.0 * M_PI * t);
}

double sinc(double x) {
  if (std::fabs(x) < 1e-12) return 1.0;
  double px = M_PI * x;
  return std::sin(px) / px;
}

}  // namespace

AudioClip resample_48k(const AudioClip& clip) {
  constexpr int kTargetRate = 48000;
  if (clip.sample_rate <= 0) throw AudioError("invalid sample rate");
  if (clip.samples.empty()) throw AudioError("zero-length audio");
  if (clip.sample_rate == kTargetRate) return clip;

  const double ratio = double(clip.sample_rate) / kTargetRate;  // input samples per output sample
  const int64_t n_in = int64_t(clip.samples.size());
  const int64_t n_out = llround(double(n_in) * kTargetRate / clip.sample_rate);

  // Anti-alias cutoff at 90% of the narrower Nyquist; kernel half-width of 24
  // zero crossings at the lower rate.
  const double fc = 0.45 * std::min(1.0, 1.0 / ratio);  // cycles per input sample, vs 0.5 = Nyquist(in)
  const double scale = std::min(1.0, 1.0 / ratio);
  const double half_width = 24.0 / scale;

  AudioClip out;
  out.sample_rate = kTargetRate;
  out.samples.resize(size_t(n_out));

#pragma omp parallel for schedule(static)
  for (int64_t m = 0; m < n_out; ++m) {
    const double pos = double(m) * ratio;
    const int64_t k_lo = int64_t(std::ceil(pos - half_width));
    const int64_t k_hi = int64_t(std::floor(pos + half_width));
    double acc = 0.0;
    for (int64_t k = std::max<int64_t>(0, k_lo); k <= std::min(n_in - 1, k_hi); ++k) {
      double x = pos - double(k);
      acc += clip.samples[size_t(k)] * 2.0 * fc * sinc(2.0 * fc * x) * blackman(x, half_width);
    }
    out.samples[size_t(m)] = acc;
  }
  return out;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw AudioError("cannot open manifest '" + path + "'");
  std::vector<ManifestEntry> entries;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw AudioError("manifest '" + path + "' line " + std::to_string(line_no) + ": " + e.what());
    }
    ManifestEntry e;
    try {
      e.utterance_id = j.at("utterance_id").get<std::string>();
      e.speaker_id = j.at("speaker_id").get<std::string>();
      e.device = device_from_name(j.at("device").get<std::string>());
      e.session = j.at("session").get<std::string>();
      e.path = j.at("path").get<std::string>();
    } catch (const std::exception& ex) {
      throw AudioError("manifest '" + path + "' line " + std::to_string(line_no) + ": " + ex.what());
    }
    if (!seen.insert(e.utterance_id).second)
      throw AudioError("manifest '" + path + "' line " + std::to_string(line_no) +
                       ": duplicate utterance_id '" + e.utterance_id + "'");
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw AudioError("cannot write manifest '" + path + "'");
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["utterance_id"] = e.utterance_id;
    j["speaker_id"] = e.speaker_id;
    j["device"] = device_name(e.device);
    j["session"] = e.session;
    j["path"] = e.path;
    out << j.dump() << "\n";
  }
}

void split_speakers(const std::vector<ManifestEntry>& entries, double test_fraction,
                    uint64_t seed, std::vector<ManifestEntry>& train,
                    std::vector<ManifestEntry>& test) {
  if (test_fraction <= 0.0 || test_fraction >= 1.0)
    throw AudioError("test_fraction must be in (0,1)");
  std::set<std::string> speaker_set;
  for (const auto& e : entries) speaker_set.insert(e.speaker_id);
  if (speaker_set.size() < 2) throw AudioError("need at least 2 distinct speakers to split");

  std::vector<std::string> speakers(speaker_set.begin(), speaker_set.end());
  Rng rng(seed);
  rng.shuffle(speakers);

  size_t n_test = size_t(std::lround(test_fraction * double(speakers.size())));
  n_test = std::clamp<size_t>(n_test, 1, speakers.size() - 1);
  std::set<std::string> test_speakers(speakers.begin(), speakers.begin() + n_test);

  train.clear();
  test.clear();
  for (const auto& e : entries) {
    if (test_speakers.count(e.speaker_id))
      test.push_back(e);
    else
      train.push_back(e);
  }
}

}  // namespace svkit
