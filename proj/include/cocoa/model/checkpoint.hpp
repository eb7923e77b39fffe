#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "cocoa/autodiff/parameter.hpp"
#include "json.hpp"

namespace cocoa::model {

// A checkpoint is a pair of files next to each other:
//   <stem>.json  manifest: stage tag, free-form metadata (seeds, config),
//                 and one entry per tensor (name, shape, trainable, offset)
//   <stem>.bin   "CZCK" | u32 version | u64 value count | f64 values | u32 CRC-32
// Loading checks the tensor census against the receiving parameter sets:
// same names in the same order, same shapes, same trainable flags.
struct CheckpointInfo {
  std::string stage;
  nlohmann::json meta;
  std::size_t tensors = 0;
  std::size_t trainable_scalars = 0;
};

void save_checkpoint(const std::filesystem::path& stem, const std::string& stage, const nlohmann::json& meta,
                     std::span<const ad::ParameterSet* const> sets);

CheckpointInfo load_checkpoint(const std::filesystem::path& stem, const std::string& expected_stage,
                               std::span<ad::ParameterSet* const> sets);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& stem);

bool checkpoint_exists(const std::filesystem::path& stem);

}  // namespace cocoa::model
