#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "patchprobe/decoders.hpp"
#include "patchprobe/digest.hpp"
#include "patchprobe/errors.hpp"

namespace patchprobe {

namespace {

constexpr char kMagic[8] = {'P', 'P', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::uint8_t*& p, const std::uint8_t* end) {
  if (static_cast<std::size_t>(end - p) < sizeof(T)) throw CorruptArchiveError("truncated checkpoint");
  T v;
  std::memcpy(&v, p, sizeof(T));
  p += sizeof(T);
  return v;
}

}  // namespace

void save_checkpoint(const PatchModel& model, const std::filesystem::path& path) {
  const ModelConfig& cfg = model.config();
  nlohmann::json j{{"task", to_string(cfg.task)},
                   {"stem",
                    {{"input_dim", cfg.stem.input_dim},
                     {"adapted_dim", cfg.stem.adapted_dim},
                     {"layers", cfg.stem.layers},
                     {"nonlinearity", "relu"}}},
                   {"num_classes", cfg.num_classes},
                   {"seg_widths", cfg.seg.widths}};
  const std::string js = j.dump();
  std::vector<std::uint8_t> buf(kMagic, kMagic + 8);
  put<std::uint32_t>(buf, kVersion);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(js.size()));
  buf.insert(buf.end(), js.begin(), js.end());
  const auto params = model.parameters();
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(params.size()));
  for (const Param* p : params) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(p->name.size()));
    buf.insert(buf.end(), p->name.begin(), p->name.end());
    put<std::uint64_t>(buf, p->value.size());
    const auto* raw = reinterpret_cast<const std::uint8_t*>(p->value.data());
    buf.insert(buf.end(), raw, raw + p->value.size() * sizeof(double));
  }
  Sha256 sha;
  sha.update(buf);
  const Digest d = sha.finish();
  buf.insert(buf.end(), d.begin(), d.end());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

PatchModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 + 8 + 32 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw CorruptArchiveError("not a checkpoint: " + path.string());
  }
  const std::size_t body = bytes.size() - 32;
  Sha256 sha;
  sha.update(bytes.data(), body);
  if (std::memcmp(sha.finish().data(), bytes.data() + body, 32) != 0) {
    throw CorruptArchiveError("checkpoint digest mismatch: " + path.string());
  }
  const std::uint8_t* p = bytes.data() + 8;
  const std::uint8_t* end = bytes.data() + body;
  if (take<std::uint32_t>(p, end) != kVersion) throw CorruptArchiveError("unsupported checkpoint version");
  const auto jlen = take<std::uint32_t>(p, end);
  if (static_cast<std::size_t>(end - p) < jlen) throw CorruptArchiveError("truncated checkpoint");
  ModelConfig cfg;
  try {
    const auto j = nlohmann::json::parse(p, p + jlen);
    cfg.task = parse_task(j.at("task").get<std::string>());
    cfg.stem.input_dim = j.at("stem").at("input_dim").get<int>();
    cfg.stem.adapted_dim = j.at("stem").at("adapted_dim").get<int>();
    cfg.stem.layers = j.at("stem").at("layers").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.seg.widths = j.at("seg_widths").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArchiveError(std::string("bad checkpoint config: ") + e.what());
  }
  p += jlen;
  PatchModel model(cfg, 0);
  auto params = model.parameters();
  const auto count = take<std::uint32_t>(p, end);
  if (count != params.size()) throw CorruptArchiveError("checkpoint parameter count mismatch");
  for (Param* param : params) {
    const auto nlen = take<std::uint32_t>(p, end);
    if (static_cast<std::size_t>(end - p) < nlen) throw CorruptArchiveError("truncated checkpoint");
    const std::string name(reinterpret_cast<const char*>(p), nlen);
    p += nlen;
    const auto n = take<std::uint64_t>(p, end);
    if (name != param->name || n != param->value.size() ||
        static_cast<std::size_t>(end - p) < n * sizeof(double)) {
      throw CorruptArchiveError("checkpoint tensor '" + name + "' does not match the model");
    }
    std::memcpy(param->value.data(), p, n * sizeof(double));
    p += n * sizeof(double);
  }
  return model;
}

}  // namespace patchprobe
