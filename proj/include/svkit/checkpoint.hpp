#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "svkit/tensor.hpp"

namespace svkit {

/// Checkpoint container. Binary layout, all integers little-endian:
///   magic "PSNN", u16 version,
///   u32 record count, records of (u16 name length, name bytes, u8 dtype tag
///   0=f32/1=f64, u8 trainable, u8 ndim, u32 dims..., raw values),
///   metadata block: u32 length + "key = value" lines (config hash, stage
///   tag, epoch, RNG seed, anything else a stage wants to pin).
struct Checkpoint {
  struct Record {
    std::string name;
    std::vector<int> shape;
    bool trainable = true;
    std::vector<float> values;
  };
  std::vector<Record> records;
  std::map<std::string, std::string> metadata;  // ordered, so serialization is canonical

  const Record* find(const std::string& name) const {
    for (const auto& r : records)
      if (r.name == name) return &r;
    return nullptr;
  }

  std::string meta_or(const std::string& key, const std::string& fallback) const {
    auto it = metadata.find(key);
    return it == metadata.end() ? fallback : it->second;
  }

  static Checkpoint from_store(const ParamStore<float>& store);
  void load_into(ParamStore<float>& store) const;  // shapes must match

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

// FNV-1a over a canonical text rendering; used to tie checkpoints to the
// feature/model configuration that produced them.
uint64_t fnv1a_hash(const std::string& text);

}  // namespace svkit
