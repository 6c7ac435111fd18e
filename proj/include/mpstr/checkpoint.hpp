#pragma once

// On-disk format:
//   line 1: "MPSTR-CKPT 1"
//   line 2: JSON manifest {model, train, step, tensors: [{name, shape,
//           dtype, offset, nbytes}], adam_steps}
//   rest:   raw little-endian f32 blob addressed by the manifest offsets.
// Optimizer moments are stored as tensors named "adam.m/<param>" and
// "adam.v/<param>".

#include <cstdint>
#include <filesystem>
#include <optional>

#include <json.hpp>

#include "mpstr/model.hpp"
#include "mpstr/optimizer.hpp"

namespace mpstr {

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const nlohmann::json& train_config,
                     std::int64_t step, const Adam* adam = nullptr);

struct LoadedCheckpoint {
  Model<float> model;
  nlohmann::json train_config;
  std::int64_t step = 0;
  bool has_optimizer_state = false;
  std::int64_t adam_steps = 0;
  std::vector<Matrix<float>> adam_m, adam_v;
};

// Throws IoError on a missing/corrupt file and ShapeError when the tensor
// table disagrees with the configured model.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mpstr
