#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "lfb/binio.hpp"
#include "lfb/feature_bank.hpp"

namespace lfb {

// On-disk bank container, little-endian throughout:
//   bytes 0-3   magic "LFBK"
//   bytes 4-7   u32 format version (currently 1)
//   bytes 8-11  u32 d, feature dimension
//   bytes 12-15 u32 T, number of steps
//   bytes 16-19 f32 steps_per_second
//   then per step: u32 N_t, followed by N_t*d f32 values row-major.
// Values are stored as f32 regardless of the in-memory scalar type, so the
// round-trip is bit-exact at stored precision.

inline constexpr char kBankMagic[4] = {'L', 'F', 'B', 'K'};
inline constexpr std::uint32_t kBankVersion = 1;
inline constexpr std::size_t kBankHeaderBytes = 20;

template <typename T>
void save_bank(const FeatureBankT<T>& bank, std::ostream& out) {
  detail::write_bytes(out, kBankMagic, 4);
  detail::write_u32(out, kBankVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(bank.dim()));
  detail::write_u32(out, static_cast<std::uint32_t>(bank.num_steps()));
  detail::write_f32(out, static_cast<float>(bank.steps_per_second()));
  for (std::size_t t = 0; t < bank.num_steps(); ++t) {
    const TensorT<T>& step = bank.step(t);
    detail::write_u32(out, static_cast<std::uint32_t>(step.rows()));
    for (const T& v : step.data()) {
      detail::write_f32(out, static_cast<float>(v));
    }
  }
}

template <typename T>
FeatureBankT<T> load_bank(std::istream& in) {
  char magic[4];
  detail::read_bytes(in, magic, 4, "bank magic");
  if (std::memcmp(magic, kBankMagic, 4) != 0) {
    throw FormatError(FormatError::Kind::kBadMagic,
                      "not a feature bank file (bad magic)");
  }
  const std::uint32_t version = detail::read_u32(in, "bank version");
  if (version != kBankVersion) {
    throw FormatError(FormatError::Kind::kBadVersion,
                      "unsupported bank version " + std::to_string(version));
  }
  const std::uint32_t dim = detail::read_u32(in, "bank dim");
  const std::uint32_t num_steps = detail::read_u32(in, "bank step count");
  const float rate = detail::read_f32(in, "bank steps_per_second");
  if (dim == 0) {
    throw FormatError(FormatError::Kind::kInconsistent,
                      "bank declares zero feature dimension");
  }
  if (!std::isfinite(rate) || rate <= 0.0f) {
    throw FormatError(FormatError::Kind::kInconsistent,
                      "bank declares non-positive steps_per_second");
  }
  FeatureBankT<T> bank(dim, static_cast<double>(rate));
  for (std::uint32_t t = 0; t < num_steps; ++t) {
    const std::uint32_t rows = detail::read_u32(in, "step row count");
    TensorT<T> step(Shape{rows, dim});
    for (std::size_t i = 0; i < step.size(); ++i) {
      step.at(i) = static_cast<T>(detail::read_f32(in, "step features"));
    }
    // check_finite inside append_step rejects non-finite payloads; the
    // container is structurally fine, the values break the tensor contract.
    bank.append_step(std::move(step));
  }
  if (!detail::at_eof(in)) {
    throw FormatError(FormatError::Kind::kInconsistent,
                      "bank stream longer than declared contents");
  }
  return bank;
}

template <typename T>
void save_bank_file(const FeatureBankT<T>& bank, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  save_bank(bank, out);
  out.flush();
  if (!out) throw IoError("write to " + path + " failed");
}

template <typename T>
FeatureBankT<T> load_bank_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return load_bank<T>(in);
}

/// Expected byte length of a serialized bank: header plus a u32 row count and
/// N_t*d f32 values per step.
inline std::size_t bank_file_bytes(std::size_t dim,
                                   const std::vector<std::size_t>& rows_per_step) {
  std::size_t n = kBankHeaderBytes;
  for (std::size_t rows : rows_per_step) n += 4 + 4 * rows * dim;
  return n;
}

/// Resamples a bank to a new step rate by nearest-source-index selection:
/// output step i takes source step floor(i * rate_in / rate_out), with
/// T_out = floor(T_in * rate_out / rate_in). Downsampling a 900-step 1 Hz
/// bank to 1/15 Hz keeps every 15th step, 60 in total.
template <typename T>
FeatureBankT<T> resample_bank(const FeatureBankT<T>& in, double rate_out) {
  if (!(rate_out > 0.0) || !std::isfinite(rate_out)) {
    throw ValueError("resample_bank: target rate must be positive");
  }
  FeatureBankT<T> out(in.dim(), rate_out);
  const double rate_in = in.steps_per_second();
  const std::size_t t_out = static_cast<std::size_t>(
      static_cast<double>(in.num_steps()) * rate_out / rate_in);
  for (std::size_t i = 0; i < t_out; ++i) {
    const std::size_t src = static_cast<std::size_t>(
        static_cast<double>(i) * rate_in / rate_out);
    out.append_step(in.step(std::min(src, in.num_steps() - 1)));
  }
  return out;
}

}  // namespace lfb
