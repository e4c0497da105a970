#pragma once

// Weight checkpoints: a flat little-endian container.
//
//   "DQW1" | version u32 | count u32 |
//   count x ( name_len u32 | name bytes (UTF-8) | rank u32 | dims u32[rank] | f32[numel] )

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dq/tensor.hpp"

namespace dq {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace dq
