#pragma once
// Image preprocessing, the frozen patch-token encoder interface, the variant
// registry and the deterministic mock backend used offline.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "patchprobe/image.hpp"

namespace patchprobe {

inline constexpr int kPatchSize = 16;

enum class Variant { S, SPlus, B, L, Mock };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);  // s, s+, b, l, mock

struct EncoderSpec {
  std::string name;
  int patch_size = kPatchSize;
  int embed_dim = 0;
  Variant variant = Variant::Mock;
  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

struct PreprocessConfig {
  int target_long_side = 640;
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> std{0.229f, 0.224f, 0.225f};
};

// Normalized planar tensor (3, height, width).
struct ImageTensor {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

// Output size after scaling the long side to target and flooring each axis
// to a multiple of the patch size (minimum one patch).
std::pair<int, int> preprocess_size(int width, int height, int target_long_side);

ImageTensor preprocess(const RgbImage& image, const PreprocessConfig& cfg = {});

// Dense per-image encoder output, shape (channels, grid_h, grid_w).
struct PatchFeatureMap {
  std::int64_t image_id = 0;
  bool flipped = false;
  int channels = 0;
  int grid_h = 0;
  int grid_w = 0;
  int image_h = 0;  // = grid_h * 16
  int image_w = 0;  // = grid_w * 16
  int original_h = 0;
  int original_w = 0;
  std::vector<float> data;

  float at(int c, int row, int col) const {
    return data[(static_cast<std::size_t>(c) * grid_h + row) * grid_w + col];
  }
  friend bool operator==(const PatchFeatureMap&, const PatchFeatureMap&) = default;
};

class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;
  virtual int embed_dim() const = 0;
  // Returns (embed_dim, height/16, width/16) features; must not mutate state
  // that changes later outputs.
  virtual std::vector<float> encode(const ImageTensor& image) const = 0;
};

// Deterministic stand-in for a real backbone. Features are uniform noise
// seeded by the image content hash and patch position; patches whose 16x16
// block is mostly the signal color get a fixed offset vector added.
class MockEncoder : public EncoderBackend {
 public:
  static constexpr int kDefaultDim = 64;
  static constexpr std::array<std::uint8_t, 3> kSignalColor{255, 0, 255};
  static constexpr double kSignalStrength = 1.5;

  explicit MockEncoder(int dim = kDefaultDim);

  int embed_dim() const override { return dim_; }
  std::vector<float> encode(const ImageTensor& image) const override;

  static std::uint64_t content_hash(const ImageTensor& image);
  static std::vector<float> patch_noise(std::uint64_t content_hash, int grid_h, int grid_w,
                                        int row, int col, int dim);
  static std::vector<float> signal_offset(int dim);
  static bool is_signal_patch(const ImageTensor& image, int row, int col,
                              const PreprocessConfig& cfg = {});

 private:
  int dim_;
};

using BackendFactory = std::function<std::unique_ptr<EncoderBackend>()>;

// Maps variant labels to backends. Only the mock backend is registered by
// default; real backbones plug in through register_backend.
class EncoderRegistry {
 public:
  EncoderRegistry();

  void register_backend(Variant variant, BackendFactory factory);
  bool available(Variant variant) const;
  // Throws BackendUnavailable when nothing is registered for the variant.
  std::unique_ptr<EncoderBackend> create(Variant variant) const;
  // Embed dim is queried from the backend itself.
  EncoderSpec spec(Variant variant) const;

  static std::string default_name(Variant variant);

 private:
  std::map<Variant, BackendFactory> factories_;
};

EncoderRegistry& default_registry();

PatchFeatureMap extract(const EncoderBackend& backend, const ImageTensor& image,
                        std::int64_t image_id, int original_w = 0, int original_h = 0);

}  // namespace patchprobe
