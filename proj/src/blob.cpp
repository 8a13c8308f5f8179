#include "mgmf/blob.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace mgmf {

namespace {

constexpr char kMagic[4] = {'M', 'G', 'M', 'F'};
constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff),
                     static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw DataError(std::string("blob: truncated while reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_blob(std::ostream& os, const Shape& shape, std::span<const double> data) {
  if (shape_numel(shape) != data.size())
    throw ShapeError("blob: data size " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  if (shape.size() > kMaxRank)
    throw ShapeError("blob: rank " + std::to_string(shape.size()) + " exceeds " +
                     std::to_string(kMaxRank));
  os.write(kMagic, 4);
  put_u32(os, kBlobVersion);
  put_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) {
    if (d > std::numeric_limits<std::uint32_t>::max())
      throw ShapeError("blob: dimension too large for the format");
    put_u32(os, static_cast<std::uint32_t>(d));
  }
  for (double v : data) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw DataError("blob: write failed");
}

BlobTensor read_blob(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw DataError("blob: truncated while reading magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("blob: bad magic bytes (not an MGMF blob)");
  const std::uint32_t version = get_u32(is, "version");
  if (version != kBlobVersion)
    throw DataError("blob: unsupported format version " + std::to_string(version));
  const std::uint32_t rank = get_u32(is, "rank");
  if (rank > kMaxRank)
    throw DataError("blob: rank " + std::to_string(rank) + " exceeds " +
                    std::to_string(kMaxRank));
  BlobTensor out;
  out.shape.resize(rank);
  std::size_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    out.shape[i] = get_u32(is, "dimension");
    if (out.shape[i] == 0) throw DataError("blob: zero dimension");
    if (numel > std::numeric_limits<std::size_t>::max() / out.shape[i])
      throw DataError("blob: dimension product overflows");
    numel *= out.shape[i];
  }
  out.data.resize(numel);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = static_cast<double>(std::bit_cast<float>(get_u32(is, "payload")));
  return out;
}

void write_blob_file(const std::filesystem::path& path, const Shape& shape,
                     std::span<const double> data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("blob: cannot open for writing: " + path.string());
  write_blob(os, shape, data);
}

BlobTensor read_blob_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("blob: cannot open: " + path.string());
  return read_blob(is);
}

std::filesystem::path checkpoint_index_path(const std::filesystem::path& payload_path) {
  std::filesystem::path p = payload_path;
  p += ".index.json";
  return p;
}

void save_checkpoint(const std::filesystem::path& payload_path, ParamStore& params,
                     const std::string& fingerprint) {
  std::ofstream os(payload_path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open for writing: " + payload_path.string());
  nlohmann::json index;
  index["format_version"] = kBlobVersion;
  index["fingerprint"] = fingerprint;
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    const auto offset = static_cast<std::uint64_t>(os.tellp());
    write_blob(os, p.shape, p.value);
    nlohmann::json t;
    t["name"] = p.name;
    t["offset"] = offset;
    t["bytes"] = static_cast<std::uint64_t>(os.tellp()) - offset;
    tensors.push_back(std::move(t));
  }
  index["tensors"] = std::move(tensors);
  os.flush();
  if (!os) throw DataError("checkpoint: write failed: " + payload_path.string());
  std::ofstream idx(checkpoint_index_path(payload_path), std::ios::binary);
  if (!idx)
    throw DataError("checkpoint: cannot open index for writing: " +
                    checkpoint_index_path(payload_path).string());
  idx << index.dump(2) << "\n";
  if (!idx) throw DataError("checkpoint: index write failed");
}

namespace {

nlohmann::json load_index(const std::filesystem::path& payload_path) {
  const auto idx_path = checkpoint_index_path(payload_path);
  std::ifstream idx(idx_path, std::ios::binary);
  if (!idx) throw DataError("checkpoint: cannot open index: " + idx_path.string());
  nlohmann::json index;
  try {
    idx >> index;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: malformed index " + idx_path.string() + ": " + e.what());
  }
  if (!index.contains("format_version") ||
      index["format_version"].get<std::uint32_t>() != kBlobVersion)
    throw DataError("checkpoint: unsupported index version in " + idx_path.string());
  return index;
}

}  // namespace

CheckpointInfo read_checkpoint_info(const std::filesystem::path& payload_path) {
  const nlohmann::json index = load_index(payload_path);
  CheckpointInfo info;
  info.fingerprint = index.value("fingerprint", std::string{});
  for (const auto& t : index.at("tensors")) info.names.push_back(t.at("name").get<std::string>());
  return info;
}

CheckpointInfo load_checkpoint(const std::filesystem::path& payload_path,
                               ParamStore& params) {
  const nlohmann::json index = load_index(payload_path);
  std::ifstream is(payload_path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open payload: " + payload_path.string());

  CheckpointInfo info;
  info.fingerprint = index.value("fingerprint", std::string{});
  std::size_t loaded = 0;
  for (const auto& t : index.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    info.names.push_back(name);
    Parameter* p = params.find(name);
    if (!p)
      throw DataError("checkpoint: stored tensor " + name +
                      " has no registered parameter");
    is.seekg(static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
    BlobTensor blob = read_blob(is);
    if (blob.shape != p->shape)
      throw DataError("checkpoint: shape of " + name + " is " + shape_str(blob.shape) +
                      ", expected " + shape_str(p->shape));
    p->value = std::move(blob.data);
    ++loaded;
  }
  if (loaded != params.size())
    throw DataError("checkpoint: stores " + std::to_string(loaded) +
                    " tensors but the model registers " + std::to_string(params.size()));
  return info;
}

}  // namespace mgmf
