#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mail/autograd.hpp"

namespace mail {

struct NamedTensor {
  std::string name;
  Mat<float> value;
};

/// Binary container: "MAILCKPT", u64 header length, JSON header, then raw
/// little-endian float32 blobs listed in the header's "tensors" table.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();  // config, step, metrics, ...
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

/// Writes to a temporary file and renames, so a crash never leaves a
/// truncated checkpoint behind.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mail
