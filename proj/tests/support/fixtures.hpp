#pragma once
// Synthetic scenes and small helpers shared by the unit and acceptance tests.

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "patchprobe/dataset.hpp"
#include "patchprobe/encoder.hpp"
#include "patchprobe/image.hpp"

namespace fixtures {

using namespace patchprobe;

// Removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline constexpr std::uint8_t kSignal[3] = {255, 0, 255};

// Images of size x size with foliage-like noise and 1..max_blobs magenta
// blocks on distinct patches (patch aligned, 16 x 16). Each block is one
// instance of category 1 with a polygon mask and its bbox.
struct BlobScene {
  AnnotationStore store;
  std::vector<RgbImage> images;  // parallel to store.images
};

BlobScene make_blob_scene(int n_images, int size, std::uint64_t seed, int max_blobs = 4);

// Mock features for every image (and the flipped copy when asked), with the
// preprocessing target set to the image's long side so no resize happens.
std::vector<PatchFeatureMap> encode_scene(const BlobScene& scene, bool with_flipped = false);

void save_scene(const BlobScene& scene, const std::filesystem::path& image_dir);

// Random feature map with values uniform in [-2, 2).
PatchFeatureMap random_map(std::mt19937_64& rng, std::int64_t id, int channels, int grid_h, int grid_w);

double uniform(std::mt19937_64& rng, double lo, double hi);
int uniform_int(std::mt19937_64& rng, int lo, int hi);  // inclusive

}  // namespace fixtures
