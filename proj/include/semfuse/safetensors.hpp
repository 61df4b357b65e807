#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace semfuse {

/// Named float32 tensor as stored in a checkpoint.
struct NamedTensor {
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

/// Contents of a safetensors file, converted to float32.
struct TensorFile {
  std::map<std::string, NamedTensor> tensors;
  std::map<std::string, std::string> metadata;  ///< the optional "__metadata__" block
  std::string sha256;                           ///< hex digest of the whole file
};

/// Reads a safetensors file (F32, F16 and BF16 payloads). Throws LoadError for
/// missing, malformed or truncated files.
TensorFile read_safetensors(const std::filesystem::path& path);

/// Writes float32 tensors in safetensors layout, in name order.
void write_safetensors(const std::filesystem::path& path, const std::map<std::string, NamedTensor>& tensors,
                       const std::map<std::string, std::string>& metadata = {});

}  // namespace semfuse
