#pragma once
// Model checkpoints: an 8-byte magic "FGRMCKP1", a little-endian u32 length,
// a JSON header (architecture, parameter table, config hash, seed, stage),
// then the raw parameter doubles in header order, little-endian. Round trips
// are bit exact.

#include <cstdint>
#include <string>

#include "fgrm/model.hpp"

namespace fgrm {

struct CheckpointMeta {
  std::string config_hash;
  uint64_t seed = 0;
  std::string stage;  // "pretrain", "tune_id", ...
};

struct LoadedCheckpoint {
  EvidentialModel model;
  CheckpointMeta meta;
};

void save_checkpoint(const std::string& path, const EvidentialModel& model,
                     const CheckpointMeta& meta);

// Throws IoError on missing/corrupt files.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace fgrm
