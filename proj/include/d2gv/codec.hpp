#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "d2gv/trainer.hpp"

namespace d2gv {

inline constexpr char kMagic[4] = {'D', '2', 'G', 'V'};
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::uint32_t kFlagQuantized = 1u;

/// Fixed header size before the offsets table.
inline constexpr std::size_t kHeaderBytes = 4 + 2 + 2 + 2 + 2 + 4 + 4;

struct ContainerHeader {
  std::uint16_t version = kFormatVersion;
  int width = 0;
  int height = 0;
  int gop_size = 0;
  std::uint32_t flags = 0;
  std::vector<std::uint64_t> offsets;  // absolute byte offset of each GoP record

  bool quantized() const { return (flags & kFlagQuantized) != 0; }
  int gop_count() const { return static_cast<int>(offsets.size()); }
};

struct Container {
  ContainerHeader header;
  std::vector<GopModel> gops;
};

/// Serializes models to bytes. Primitives are written in their current
/// order, so callers store them ranked (see finalize_for_storage).
std::string encode_container(const std::vector<GopModel>& models, int gop_size, bool quantize = false);
Container decode_container(const std::string& bytes);

/// Writes the container and returns its size in bytes.
std::uint64_t save(const std::vector<GopModel>& models, int gop_size, const std::filesystem::path& path,
                   bool quantize = false);
Container load(const std::filesystem::path& path);

/// Reads only the header and offsets table.
ContainerHeader read_header(std::istream& in);
ContainerHeader read_header(const std::filesystem::path& path);

struct PrefixModel {
  GopModel model;
  int stored = 0;  // primitives in the record
  bool clamped = false;
};

/// Loads GoP `gop` with only its first `k` primitives; bytes after the
/// k-th primitive are never read. k above the stored count is clamped.
PrefixModel load_prefix(std::istream& in, int gop, int k);
PrefixModel load_prefix(const std::filesystem::path& path, int gop, int k);
/// k = round(keep_ratio * stored).
PrefixModel load_prefix_ratio(const std::filesystem::path& path, int gop, double keep_ratio);

/// Per-GoP N_prim * 8 + P_MLP.
std::size_t param_count(const GopModel& model);
std::size_t param_count(const std::vector<GopModel>& models);

/// Bytes of one serialized GoP record.
std::size_t record_bytes(const GopModel& model, bool quantized);

/// IEEE binary16 conversion with round-to-nearest-even.
std::uint16_t float_to_half(float f);
float half_to_float(std::uint16_t h);

}  // namespace d2gv
