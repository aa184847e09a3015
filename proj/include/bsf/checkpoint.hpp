#pragma once

// Shared on-disk layout for model checkpoints:
//
//   8 bytes   magic "BSFCKPT1"
//   8 bytes   header length L, little-endian uint64
//   L bytes   JSON header: kind, config, dtype, endianness, tensor table
//   payload   little-endian float64 values; complex tensors interleave (re, im)
//
// The tensor table lists name, shape, complex flag, offset and count (in
// doubles) for every tensor in payload order.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace bsf {

struct TensorInfo {
  std::string name;
  std::vector<int> shape;
  bool complex = false;

  std::size_t count() const;  // doubles occupied in the payload
};

struct CheckpointData {
  nlohmann::json header;
  std::vector<TensorInfo> tensors;
  std::vector<double> payload;
};

void write_checkpoint(const std::filesystem::path& path, const std::string& kind,
                      const nlohmann::json& config, const std::vector<TensorInfo>& tensors,
                      const std::vector<double>& payload);

// Throws ParseError on bad magic, malformed header, unexpected kind or a
// payload whose size disagrees with the tensor table.
CheckpointData read_checkpoint(const std::filesystem::path& path, const std::string& kind);

// FNV-1a over the file bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

}  // namespace bsf
