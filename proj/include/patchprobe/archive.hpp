#pragma once
// Feature archive: per-split cache of encoder outputs.
//
// Layout (little-endian):
//   magic "PPFEATS\0" | u32 version | u32 header_len | header JSON
//   entry blocks: zlib-compressed float32 tensors (C, grid_h, grid_w)
//   index: u64 count, then per entry
//     i64 image_id, u32 flipped, u32 channels, u32 grid_h, u32 grid_w,
//     u32 image_h, u32 image_w, u32 original_h, u32 original_w,
//     u64 offset, u64 compressed_size
//   u64 index_offset
//   32-byte SHA-256 of every preceding byte

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "patchprobe/digest.hpp"
#include "patchprobe/encoder.hpp"

namespace patchprobe {

inline constexpr char kArchiveMagic[8] = {'P', 'P', 'F', 'E', 'A', 'T', 'S', '\0'};
inline constexpr std::uint32_t kArchiveVersion = 1;

struct ArchiveHeader {
  EncoderSpec encoder;
  std::string split;
};

struct ArchiveEntry {
  std::int64_t image_id = 0;
  bool flipped = false;
  int channels = 0;
  int grid_h = 0;
  int grid_w = 0;
  int image_h = 0;
  int image_w = 0;
  int original_h = 0;
  int original_w = 0;
  std::uint64_t offset = 0;
  std::uint64_t compressed_size = 0;
};

// Single writer. Entries go to "<path>.partial" and the file is moved into
// place on finalize(); an unfinalized writer leaves nothing behind.
class ArchiveWriter {
 public:
  ArchiveWriter(std::filesystem::path path, ArchiveHeader header);
  ~ArchiveWriter();
  ArchiveWriter(const ArchiveWriter&) = delete;
  ArchiveWriter& operator=(const ArchiveWriter&) = delete;

  void add(const PatchFeatureMap& map);
  void finalize();

 private:
  void write_bytes(const void* data, std::size_t size);

  std::filesystem::path path_;
  std::filesystem::path partial_;
  ArchiveHeader header_;
  std::ofstream out_;
  Sha256 sha_;
  std::uint64_t position_ = 0;
  std::vector<ArchiveEntry> index_;
  bool finalized_ = false;
};

// Verifies the trailing digest on open; nothing is readable from a corrupt
// file. Safe for concurrent get() calls after construction.
class ArchiveReader {
 public:
  explicit ArchiveReader(std::filesystem::path path);

  const ArchiveHeader& header() const { return header_; }
  const std::vector<ArchiveEntry>& entries() const { return entries_; }
  bool contains(std::int64_t image_id, bool flipped = false) const;
  // Throws NotFoundError for ids missing from the index.
  PatchFeatureMap get(std::int64_t image_id, bool flipped = false) const;
  std::vector<PatchFeatureMap> read_all() const;

 private:
  std::filesystem::path path_;
  ArchiveHeader header_;
  std::vector<ArchiveEntry> entries_;
  std::map<std::pair<std::int64_t, bool>, std::size_t> lookup_;
};

void write_archive(const std::filesystem::path& path, const std::vector<PatchFeatureMap>& maps,
                   const EncoderSpec& spec, const std::string& split);
std::vector<PatchFeatureMap> read_archive(const std::filesystem::path& path);

}  // namespace patchprobe
