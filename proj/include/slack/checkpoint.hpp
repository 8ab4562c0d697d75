#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "slack/nn.hpp"

namespace slack {

// Ordered key/value pairs; order is preserved so archives are byte-stable.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

std::string kv_get(const KeyValues& kv, const std::string& key);
std::string kv_get(const KeyValues& kv, const std::string& key, const std::string& fallback);
void kv_set(KeyValues& kv, const std::string& key, const std::string& value);

// Named-array archive with an embedded config block.
struct Checkpoint {
  std::string kind;  // "backbone", "pd", "lqi", "dsr"
  KeyValues config;
  nn::ParamSet params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& where = "checkpoint");

}  // namespace slack
