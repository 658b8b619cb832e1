#pragma once

#include <stdexcept>
#include <string>

#include "svkit/eval.hpp"
#include "svkit/model.hpp"
#include "svkit/train.hpp"

namespace svkit {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Merged run configuration: `section.key = value` lines from a file plus
/// command-line overrides. Unknown keys are rejected; the effective config
/// is echoed into every output artifact.
struct RunConfig {
  uint64_t seed = 0;
  int jobs = 0;  // 0 = OpenMP default
  VerifierConfig model;
  TrainConfig train;
  ScoreProtocol protocol;

  // Applies one `key = value` assignment; throws ConfigError on unknown keys
  // or unparsable values.
  void set(const std::string& key, const std::string& value);

  void load_file(const std::string& path);

  // Mirrors the shared fields (seed, margin, dropout, bn decay, weight
  // sharing) into the sub-configs. Call after the last set().
  void resolve();

  // Canonical text: every key in a fixed order.
  std::string canonical_text() const;
  uint64_t hash() const { return fnv1a_hash(canonical_text()); }
};

}  // namespace svkit
