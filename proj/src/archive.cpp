#include "patchprobe/archive.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>

#include "json.hpp"
#include "patchprobe/errors.hpp"

namespace patchprobe {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "archive I/O assumes little-endian");

namespace {

constexpr std::size_t kEntryRecordSize = 8 + 8 * 4 + 8 + 8;

template <typename T>
void put(std::vector<std::uint8_t>& buf, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::uint8_t*& p, const std::uint8_t* end) {
  if (static_cast<std::size_t>(end - p) < sizeof(T)) throw CorruptArchiveError("truncated archive");
  T value;
  std::memcpy(&value, p, sizeof(T));
  p += sizeof(T);
  return value;
}

nlohmann::json header_json(const ArchiveHeader& h) {
  return {{"encoder",
           {{"name", h.encoder.name},
            {"variant", to_string(h.encoder.variant)},
            {"patch_size", h.encoder.patch_size},
            {"embed_dim", h.encoder.embed_dim}}},
          {"split", h.split},
          {"dtype", "float32"},
          {"compression", "zlib"}};
}

}  // namespace

ArchiveWriter::ArchiveWriter(fs::path path, ArchiveHeader header)
    : path_(std::move(path)), partial_(path_.string() + ".partial"), header_(std::move(header)) {
  if (header_.encoder.embed_dim <= 0) throw ConfigError("archive header needs a positive embed dim");
  out_.open(partial_, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot write " + partial_.string());
  const std::string hj = header_json(header_).dump();
  std::vector<std::uint8_t> buf(kArchiveMagic, kArchiveMagic + 8);
  put<std::uint32_t>(buf, kArchiveVersion);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(hj.size()));
  buf.insert(buf.end(), hj.begin(), hj.end());
  write_bytes(buf.data(), buf.size());
}

ArchiveWriter::~ArchiveWriter() {
  if (!finalized_) {
    out_.close();
    std::error_code ec;
    fs::remove(partial_, ec);
  }
}

void ArchiveWriter::write_bytes(const void* data, std::size_t size) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out_) throw IoError("failed writing " + partial_.string());
  sha_.update(data, size);
  position_ += size;
}

void ArchiveWriter::add(const PatchFeatureMap& map) {
  if (finalized_) throw Error("archive already finalized");
  if (map.channels != header_.encoder.embed_dim) {
    throw ShapeError("feature map channels " + std::to_string(map.channels) +
                     " differ from archive embed dim " + std::to_string(header_.encoder.embed_dim));
  }
  if (map.image_h != map.grid_h * kPatchSize || map.image_w != map.grid_w * kPatchSize ||
      map.data.size() != static_cast<std::size_t>(map.channels) * map.grid_h * map.grid_w) {
    throw ShapeError("feature map violates the grid law for image " + std::to_string(map.image_id));
  }
  for (const auto& e : index_) {
    if (e.image_id == map.image_id && e.flipped == map.flipped) {
      throw ConfigError("duplicate archive entry for image " + std::to_string(map.image_id));
    }
  }
  const uLong raw_size = static_cast<uLong>(map.data.size() * sizeof(float));
  uLongf bound = compressBound(raw_size);
  std::vector<std::uint8_t> packed(bound);
  if (compress2(packed.data(), &bound, reinterpret_cast<const Bytef*>(map.data.data()), raw_size,
                Z_DEFAULT_COMPRESSION) != Z_OK) {
    throw Error("zlib compression failed");
  }
  ArchiveEntry e;
  e.image_id = map.image_id;
  e.flipped = map.flipped;
  e.channels = map.channels;
  e.grid_h = map.grid_h;
  e.grid_w = map.grid_w;
  e.image_h = map.image_h;
  e.image_w = map.image_w;
  e.original_h = map.original_h;
  e.original_w = map.original_w;
  e.offset = position_;
  e.compressed_size = bound;
  write_bytes(packed.data(), bound);
  index_.push_back(e);
}

void ArchiveWriter::finalize() {
  if (finalized_) return;
  const std::uint64_t index_offset = position_;
  std::vector<std::uint8_t> buf;
  put<std::uint64_t>(buf, index_.size());
  for (const auto& e : index_) {
    put<std::int64_t>(buf, e.image_id);
    for (int v : {int(e.flipped), e.channels, e.grid_h, e.grid_w, e.image_h, e.image_w,
                  e.original_h, e.original_w}) {
      put<std::uint32_t>(buf, static_cast<std::uint32_t>(v));
    }
    put<std::uint64_t>(buf, e.offset);
    put<std::uint64_t>(buf, e.compressed_size);
  }
  put<std::uint64_t>(buf, index_offset);
  write_bytes(buf.data(), buf.size());
  const Digest d = sha_.finish();
  out_.write(reinterpret_cast<const char*>(d.data()), d.size());
  out_.close();
  if (!out_) throw IoError("failed writing " + partial_.string());
  fs::rename(partial_, path_);
  finalized_ = true;
}

ArchiveReader::ArchiveReader(fs::path path) : path_(std::move(path)) {
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw IoError("cannot read archive " + path_.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 + 8 + 8 + 8 + 32 || std::memcmp(bytes.data(), kArchiveMagic, 8) != 0) {
    throw CorruptArchiveError("not a feature archive: " + path_.string());
  }
  const std::size_t body = bytes.size() - 32;
  Sha256 sha;
  sha.update(bytes.data(), body);
  const Digest expected = sha.finish();
  if (std::memcmp(expected.data(), bytes.data() + body, 32) != 0) {
    throw CorruptArchiveError("digest mismatch in " + path_.string());
  }

  const std::uint8_t* p = bytes.data() + 8;
  const std::uint8_t* end = bytes.data() + body;
  if (take<std::uint32_t>(p, end) != kArchiveVersion) throw CorruptArchiveError("unsupported archive version");
  const auto hlen = take<std::uint32_t>(p, end);
  if (static_cast<std::size_t>(end - p) < hlen) throw CorruptArchiveError("truncated header");
  try {
    const auto hj = nlohmann::json::parse(p, p + hlen);
    header_.encoder.name = hj.at("encoder").at("name").get<std::string>();
    header_.encoder.variant = parse_variant(hj.at("encoder").at("variant").get<std::string>());
    header_.encoder.patch_size = hj.at("encoder").at("patch_size").get<int>();
    header_.encoder.embed_dim = hj.at("encoder").at("embed_dim").get<int>();
    header_.split = hj.at("split").get<std::string>();
  } catch (const std::exception& e) {
    throw CorruptArchiveError(std::string("bad archive header: ") + e.what());
  }

  const std::uint8_t* footer = end - 8;
  const auto index_offset = take<std::uint64_t>(footer, end);
  if (index_offset > body - 8) throw CorruptArchiveError("index offset out of range");
  const std::uint8_t* q = bytes.data() + index_offset;
  const std::uint8_t* index_end = end - 8;
  const auto count = take<std::uint64_t>(q, index_end);
  if (count > (index_end - q) / kEntryRecordSize) throw CorruptArchiveError("index too short");
  for (std::uint64_t i = 0; i < count; ++i) {
    ArchiveEntry e;
    e.image_id = take<std::int64_t>(q, index_end);
    e.flipped = take<std::uint32_t>(q, index_end) != 0;
    e.channels = static_cast<int>(take<std::uint32_t>(q, index_end));
    e.grid_h = static_cast<int>(take<std::uint32_t>(q, index_end));
    e.grid_w = static_cast<int>(take<std::uint32_t>(q, index_end));
    e.image_h = static_cast<int>(take<std::uint32_t>(q, index_end));
    e.image_w = static_cast<int>(take<std::uint32_t>(q, index_end));
    e.original_h = static_cast<int>(take<std::uint32_t>(q, index_end));
    e.original_w = static_cast<int>(take<std::uint32_t>(q, index_end));
    e.offset = take<std::uint64_t>(q, index_end);
    e.compressed_size = take<std::uint64_t>(q, index_end);
    if (e.offset + e.compressed_size > index_offset || e.channels != header_.encoder.embed_dim) {
      throw CorruptArchiveError("inconsistent index entry for image " + std::to_string(e.image_id));
    }
    lookup_[{e.image_id, e.flipped}] = entries_.size();
    entries_.push_back(e);
  }
}

bool ArchiveReader::contains(std::int64_t image_id, bool flipped) const {
  return lookup_.count({image_id, flipped}) != 0;
}

PatchFeatureMap ArchiveReader::get(std::int64_t image_id, bool flipped) const {
  auto it = lookup_.find({image_id, flipped});
  if (it == lookup_.end()) {
    throw NotFoundError("image " + std::to_string(image_id) + (flipped ? " (flipped)" : "") +
                        " not in archive " + path_.string());
  }
  const ArchiveEntry& e = entries_[it->second];
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw IoError("cannot read archive " + path_.string());
  std::vector<std::uint8_t> packed(e.compressed_size);
  in.seekg(static_cast<std::streamoff>(e.offset));
  in.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
  if (!in) throw CorruptArchiveError("short read in " + path_.string());

  PatchFeatureMap map;
  map.image_id = e.image_id;
  map.flipped = e.flipped;
  map.channels = e.channels;
  map.grid_h = e.grid_h;
  map.grid_w = e.grid_w;
  map.image_h = e.image_h;
  map.image_w = e.image_w;
  map.original_h = e.original_h;
  map.original_w = e.original_w;
  map.data.resize(static_cast<std::size_t>(e.channels) * e.grid_h * e.grid_w);
  uLongf raw = static_cast<uLongf>(map.data.size() * sizeof(float));
  const uLongf expected = raw;
  if (uncompress(reinterpret_cast<Bytef*>(map.data.data()), &raw, packed.data(),
                 static_cast<uLong>(packed.size())) != Z_OK ||
      raw != expected) {
    throw CorruptArchiveError("cannot decode entry for image " + std::to_string(image_id));
  }
  return map;
}

std::vector<PatchFeatureMap> ArchiveReader::read_all() const {
  std::vector<PatchFeatureMap> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(get(e.image_id, e.flipped));
  return out;
}

void write_archive(const fs::path& path, const std::vector<PatchFeatureMap>& maps,
                   const EncoderSpec& spec, const std::string& split) {
  ArchiveWriter w(path, ArchiveHeader{spec, split});
  for (const auto& m : maps) w.add(m);
  w.finalize();
}

std::vector<PatchFeatureMap> read_archive(const fs::path& path) { return ArchiveReader(path).read_all(); }

}  // namespace patchprobe
