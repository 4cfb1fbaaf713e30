#pragma once

#include <cstdint>
#include <string>

#include "linattn/models/params.hpp"

namespace linattn::models {

struct CheckpointMeta {
  uint64_t seed = 0;
  std::string created;  // ISO-8601
};

// Single JSON document; real-64 values round-trip bit-exactly.
void save_checkpoint(const ModelRef& model, const std::string& path,
                     const CheckpointMeta& meta = {});
std::string checkpoint_to_json(const ModelRef& model, const CheckpointMeta& meta = {});

struct LoadedCheckpoint {
  ModelRef model;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);
LoadedCheckpoint checkpoint_from_json(const std::string& text);

}  // namespace linattn::models
