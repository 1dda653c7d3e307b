#include "patchprobe/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "patchprobe/errors.hpp"

namespace patchprobe {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::S: return "s";
    case Variant::SPlus: return "s+";
    case Variant::B: return "b";
    case Variant::L: return "l";
    case Variant::Mock: return "mock";
  }
  return "mock";
}

Variant parse_variant(std::string_view name) {
  if (name == "s") return Variant::S;
  if (name == "s+") return Variant::SPlus;
  if (name == "b") return Variant::B;
  if (name == "l") return Variant::L;
  if (name == "mock") return Variant::Mock;
  throw ConfigError("unknown encoder variant '" + std::string(name) + "'");
}

std::pair<int, int> preprocess_size(int width, int height, int target_long_side) {
  if (width <= 0 || height <= 0) throw ShapeError("degenerate image with a zero dimension");
  if (target_long_side < kPatchSize) throw ConfigError("target long side below patch size");
  const std::int64_t long_side = std::max(width, height);
  // floor(d * target / long / 16) * 16, in exact integer arithmetic.
  const auto axis = [&](std::int64_t d) {
    const std::int64_t patches = d * target_long_side / (long_side * kPatchSize);
    return static_cast<int>(std::max<std::int64_t>(1, patches) * kPatchSize);
  };
  return {axis(width), axis(height)};
}

ImageTensor preprocess(const RgbImage& image, const PreprocessConfig& cfg) {
  if (image.width < kPatchSize || image.height < kPatchSize) {
    throw ShapeError("image smaller than one patch: " + std::to_string(image.width) + "x" +
                     std::to_string(image.height));
  }
  const auto [w, h] = preprocess_size(image.width, image.height, cfg.target_long_side);
  const RgbImage resized = resize(image, w, h);
  ImageTensor t{w, h, std::vector<float>(static_cast<std::size_t>(3) * w * h)};
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const float v = resized.at(x, y)[c] / 255.0f;
        t.data[(static_cast<std::size_t>(c) * h + y) * w + x] = (v - cfg.mean[c]) / cfg.std[c];
      }
    }
  }
  return t;
}

MockEncoder::MockEncoder(int dim) : dim_(dim) {
  if (dim <= 0) throw ConfigError("mock encoder needs a positive embed dim");
}

std::uint64_t MockEncoder::content_hash(const ImageTensor& image) {
  // FNV-1a over dims and raw float bytes.
  std::uint64_t h = 1469598103934665603ull;
  const auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  mix(&image.width, sizeof image.width);
  mix(&image.height, sizeof image.height);
  mix(image.data.data(), image.data.size() * sizeof(float));
  return h;
}

std::vector<float> MockEncoder::patch_noise(std::uint64_t content_hash, int grid_h, int grid_w,
                                            int row, int col, int dim) {
  std::seed_seq seq{static_cast<std::uint32_t>(content_hash),
                    static_cast<std::uint32_t>(content_hash >> 32),
                    static_cast<std::uint32_t>(grid_h), static_cast<std::uint32_t>(grid_w),
                    static_cast<std::uint32_t>(row), static_cast<std::uint32_t>(col)};
  std::mt19937_64 rng(seq);
  std::vector<float> out(dim);
  for (auto& v : out) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
    v = static_cast<float>(2.0 * u - 1.0);
  }
  return out;
}

std::vector<float> MockEncoder::signal_offset(int dim) {
  std::vector<float> out(dim);
  for (int c = 0; c < dim; ++c) {
    const std::uint32_t bit = (static_cast<std::uint32_t>(c) * 2654435761u >> 13) & 1u;
    out[c] = static_cast<float>(bit ? kSignalStrength : -kSignalStrength);
  }
  return out;
}

bool MockEncoder::is_signal_patch(const ImageTensor& image, int row, int col,
                                  const PreprocessConfig& cfg) {
  constexpr float kTolerance = 40.0f / 255.0f;
  int hits = 0;
  for (int y = row * kPatchSize; y < (row + 1) * kPatchSize; ++y) {
    for (int x = col * kPatchSize; x < (col + 1) * kPatchSize; ++x) {
      bool match = true;
      for (int c = 0; c < 3 && match; ++c) {
        const float raw = image.at(c, y, x) * cfg.std[c] + cfg.mean[c];
        match = std::abs(raw - kSignalColor[c] / 255.0f) <= kTolerance;
      }
      hits += match ? 1 : 0;
    }
  }
  return 2 * hits > kPatchSize * kPatchSize;
}

std::vector<float> MockEncoder::encode(const ImageTensor& image) const {
  if (image.width % kPatchSize != 0 || image.height % kPatchSize != 0) {
    throw ShapeError("image dims must be divisible by the patch size");
  }
  const int gh = image.height / kPatchSize;
  const int gw = image.width / kPatchSize;
  const std::uint64_t hash = content_hash(image);
  const std::vector<float> offset = signal_offset(dim_);
  std::vector<float> out(static_cast<std::size_t>(dim_) * gh * gw);
  for (int r = 0; r < gh; ++r) {
    for (int c = 0; c < gw; ++c) {
      std::vector<float> f = patch_noise(hash, gh, gw, r, c, dim_);
      if (is_signal_patch(image, r, c)) {
        for (int k = 0; k < dim_; ++k) f[k] += offset[k];
      }
      for (int k = 0; k < dim_; ++k) out[(static_cast<std::size_t>(k) * gh + r) * gw + c] = f[k];
    }
  }
  return out;
}

EncoderRegistry::EncoderRegistry() {
  register_backend(Variant::Mock, [] { return std::make_unique<MockEncoder>(); });
}

void EncoderRegistry::register_backend(Variant variant, BackendFactory factory) {
  factories_[variant] = std::move(factory);
}

bool EncoderRegistry::available(Variant variant) const { return factories_.count(variant) != 0; }

std::unique_ptr<EncoderBackend> EncoderRegistry::create(Variant variant) const {
  auto it = factories_.find(variant);
  if (it == factories_.end()) {
    throw BackendUnavailable("no backend registered for encoder variant '" +
                             std::string(to_string(variant)) + "'");
  }
  return it->second();
}

EncoderSpec EncoderRegistry::spec(Variant variant) const {
  const auto backend = create(variant);
  return EncoderSpec{default_name(variant), kPatchSize, backend->embed_dim(), variant};
}

std::string EncoderRegistry::default_name(Variant variant) {
  switch (variant) {
    case Variant::S: return "dinov3_vits16";
    case Variant::SPlus: return "dinov3_vits16plus";
    case Variant::B: return "dinov3_vitb16";
    case Variant::L: return "dinov3_vitl16";
    case Variant::Mock: return "mock16";
  }
  return "mock16";
}

EncoderRegistry& default_registry() {
  static EncoderRegistry registry;
  return registry;
}

PatchFeatureMap extract(const EncoderBackend& backend, const ImageTensor& image,
                        std::int64_t image_id, int original_w, int original_h) {
  if (image.width <= 0 || image.height <= 0 || image.width % kPatchSize != 0 ||
      image.height % kPatchSize != 0) {
    throw ShapeError("image dims must be positive multiples of the patch size");
  }
  PatchFeatureMap map;
  map.image_id = image_id;
  map.channels = backend.embed_dim();
  map.grid_h = image.height / kPatchSize;
  map.grid_w = image.width / kPatchSize;
  map.image_h = image.height;
  map.image_w = image.width;
  map.original_h = original_h > 0 ? original_h : image.height;
  map.original_w = original_w > 0 ? original_w : image.width;
  map.data = backend.encode(image);
  if (map.data.size() != static_cast<std::size_t>(map.channels) * map.grid_h * map.grid_w) {
    throw ShapeError("backend returned a feature tensor of unexpected size");
  }
  for (float v : map.data) {
    if (!std::isfinite(v)) throw ShapeError("backend returned non-finite features");
  }
  return map;
}

}  // namespace patchprobe
