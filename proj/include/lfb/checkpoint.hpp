#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "lfb/binio.hpp"
#include "lfb/tape.hpp"
#include "lfb/tensor.hpp"

namespace lfb {

// Checkpoint container: magic "LFBP", u32 version (currently 1), u32 blob
// count, then per blob a u32 name length, the name bytes, u32 rank, rank u32
// dims, and the row-major f32 payload. Everything little-endian. Values are
// stored in single precision regardless of the in-memory scalar type.

inline constexpr char kCheckpointMagic[4] = {'L', 'F', 'B', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(std::ostream& out,
                     const std::vector<std::pair<std::string, TensorT<T>>>&
                         blobs) {
  detail::write_bytes(out, kCheckpointMagic, 4);
  detail::write_u32(out, kCheckpointVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(blobs.size()));
  for (const auto& [name, tensor] : blobs) {
    if (name.empty()) throw ValueError("checkpoint blob has an empty name");
    detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
    detail::write_bytes(out, name.data(), name.size());
    detail::write_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) {
      detail::write_u32(out, static_cast<std::uint32_t>(d));
    }
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      detail::write_f32(out, static_cast<float>(tensor.at(i)));
    }
  }
}

template <typename T>
void save_checkpoint(std::ostream& out,
                     const std::vector<NamedParamT<T>>& params) {
  std::vector<std::pair<std::string, TensorT<T>>> blobs;
  blobs.reserve(params.size());
  for (const auto& np : params) blobs.emplace_back(np.name, np.param.value());
  save_checkpoint(out, blobs);
}

template <typename T = double>
std::map<std::string, TensorT<T>> load_checkpoint(std::istream& in) {
  char magic[4];
  detail::read_bytes(in, magic, 4, "checkpoint magic");
  if (std::string(magic, 4) != std::string(kCheckpointMagic, 4)) {
    throw FormatError(FormatError::Kind::kBadMagic,
                      "not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = detail::read_u32(in, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::kBadVersion,
                      "unsupported checkpoint version " +
                          std::to_string(version));
  }
  const std::uint32_t count = detail::read_u32(in, "blob count");
  std::map<std::string, TensorT<T>> blobs;
  for (std::uint32_t b = 0; b < count; ++b) {
    const std::uint32_t name_len = detail::read_u32(in, "blob name length");
    std::string name(name_len, '\0');
    detail::read_bytes(in, name.data(), name_len, "blob name");
    if (name.empty()) {
      throw FormatError(FormatError::Kind::kInconsistent,
                        "checkpoint blob has an empty name");
    }
    if (blobs.count(name) != 0) {
      throw FormatError(FormatError::Kind::kInconsistent,
                        "duplicate checkpoint blob '" + name + "'");
    }
    const std::uint32_t rank = detail::read_u32(in, "blob rank");
    Shape shape(rank);
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = detail::read_u32(in, "blob dimension");
      total *= shape[d];
    }
    TensorT<T> tensor(shape);
    for (std::size_t i = 0; i < total; ++i) {
      tensor.at(i) = static_cast<T>(detail::read_f32(in, "blob payload"));
    }
    blobs.emplace(std::move(name), std::move(tensor));
  }
  if (!detail::at_eof(in)) {
    throw FormatError(FormatError::Kind::kInconsistent,
                      "trailing bytes after the last checkpoint blob");
  }
  return blobs;
}

/// Copies checkpoint blobs into the given parameters by name. Every
/// parameter must be present with a matching shape; blobs with no matching
/// parameter are ignored, so a full-model checkpoint can seed a sub-model.
template <typename T>
void load_into(const std::map<std::string, TensorT<T>>& blobs,
               std::vector<NamedParamT<T>>& params) {
  for (auto& np : params) {
    const auto it = blobs.find(np.name);
    if (it == blobs.end()) {
      throw FormatError(FormatError::Kind::kInconsistent,
                        "checkpoint is missing parameter '" + np.name + "'");
    }
    if (it->second.shape() != np.param.value().shape()) {
      throw FormatError(FormatError::Kind::kInconsistent,
                        "checkpoint blob '" + np.name + "' has shape " +
                            shape_str(it->second.shape()) +
                            " but the parameter is " +
                            shape_str(np.param.value().shape()));
    }
    np.param.value() = it->second;
    np.param.zero_grad();
  }
}

template <typename T>
void save_checkpoint_file(const std::string& path,
                          const std::vector<NamedParamT<T>>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  save_checkpoint(out, params);
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

template <typename T = double>
std::map<std::string, TensorT<T>> load_checkpoint_file(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return load_checkpoint<T>(in);
}

}  // namespace lfb
