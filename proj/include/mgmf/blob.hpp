#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mgmf/tensor.hpp"

namespace mgmf {

// Bit-exact tensor container: magic "MGMF", u32 LE format version, u32 LE
// rank, rank u32 LE dimension sizes, then row-major f32 LE payload. Values
// are widened to double on load.
inline constexpr std::uint32_t kBlobVersion = 1;

struct BlobTensor {
  Shape shape;
  std::vector<double> data;
};

void write_blob(std::ostream& os, const Shape& shape, std::span<const double> data);
BlobTensor read_blob(std::istream& is);

void write_blob_file(const std::filesystem::path& path, const Shape& shape,
                     std::span<const double> data);
BlobTensor read_blob_file(const std::filesystem::path& path);

// Checkpoint = payload file of concatenated blobs (registration order) plus a
// structured-text index mapping each parameter name to its byte offset.
// `fingerprint` ties the checkpoint to the config that produced it.
struct CheckpointInfo {
  std::string fingerprint;
  std::vector<std::string> names;  // registration order
};

void save_checkpoint(const std::filesystem::path& payload_path, ParamStore& params,
                     const std::string& fingerprint);
// Loads into an already-registered store; every stored tensor must match an
// existing parameter's name and shape exactly, and vice versa.
CheckpointInfo load_checkpoint(const std::filesystem::path& payload_path,
                               ParamStore& params);
// Reads only the index (fingerprint + names), without touching parameters.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& payload_path);

std::filesystem::path checkpoint_index_path(const std::filesystem::path& payload_path);

}  // namespace mgmf
