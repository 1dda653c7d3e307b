#include "fixtures.hpp"

#include <set>
#include <string>

namespace fixtures {

TempDir::TempDir() {
  static int counter = 0;
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() /
          ("patchprobe_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

BlobScene make_blob_scene(int n_images, int size, std::uint64_t seed, int max_blobs) {
  std::mt19937_64 rng(seed);
  BlobScene scene;
  scene.store.categories.push_back({1, "fruit"});
  const int grid = size / kPatchSize;
  std::int64_t next_instance = 1;
  for (int i = 0; i < n_images; ++i) {
    const std::int64_t id = i + 1;
    scene.store.images.push_back({id, "img_" + std::to_string(id) + ".png", size, size});
    RgbImage img(size, size);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        std::uint8_t* p = img.at(x, y);
        p[0] = static_cast<std::uint8_t>(uniform_int(rng, 20, 120));
        p[1] = static_cast<std::uint8_t>(uniform_int(rng, 60, 200));
        p[2] = static_cast<std::uint8_t>(uniform_int(rng, 20, 120));
      }
    }
    const int blobs = uniform_int(rng, 1, max_blobs);
    std::set<int> used;
    while (static_cast<int>(used.size()) < blobs) used.insert(uniform_int(rng, 0, grid * grid - 1));
    for (int cell : used) {
      const int row = cell / grid, col = cell % grid;
      const double x0 = col * kPatchSize, y0 = row * kPatchSize;
      for (int y = 0; y < kPatchSize; ++y) {
        for (int x = 0; x < kPatchSize; ++x) {
          std::uint8_t* p = img.at(col * kPatchSize + x, row * kPatchSize + y);
          p[0] = kSignal[0];
          p[1] = kSignal[1];
          p[2] = kSignal[2];
        }
      }
      Instance inst;
      inst.id = next_instance++;
      inst.image_id = id;
      inst.category_id = 1;
      inst.bbox = Box{x0, y0, double(kPatchSize), double(kPatchSize)};
      MaskGeometry g;
      g.polygons.push_back({x0, y0, x0 + kPatchSize, y0, x0 + kPatchSize, y0 + kPatchSize, x0, y0 + kPatchSize});
      inst.mask = g;
      scene.store.instances.push_back(inst);
    }
    scene.images.push_back(std::move(img));
  }
  return scene;
}

std::vector<PatchFeatureMap> encode_scene(const BlobScene& scene, bool with_flipped) {
  const MockEncoder encoder;
  std::vector<PatchFeatureMap> maps;
  for (std::size_t i = 0; i < scene.images.size(); ++i) {
    const RgbImage& img = scene.images[i];
    PreprocessConfig pre;
    pre.target_long_side = std::max(img.width, img.height);
    const std::int64_t id = scene.store.images[i].id;
    maps.push_back(extract(encoder, preprocess(img, pre), id, img.width, img.height));
    if (with_flipped) {
      PatchFeatureMap f = extract(encoder, preprocess(flip_horizontal(img), pre), id, img.width, img.height);
      f.flipped = true;
      maps.push_back(std::move(f));
    }
  }
  return maps;
}

void save_scene(const BlobScene& scene, const std::filesystem::path& image_dir) {
  std::filesystem::create_directories(image_dir);
  for (std::size_t i = 0; i < scene.images.size(); ++i) {
    write_png(image_dir / scene.store.images[i].file_name, scene.images[i]);
  }
}

PatchFeatureMap random_map(std::mt19937_64& rng, std::int64_t id, int channels, int grid_h, int grid_w) {
  PatchFeatureMap m;
  m.image_id = id;
  m.channels = channels;
  m.grid_h = grid_h;
  m.grid_w = grid_w;
  m.image_h = grid_h * kPatchSize;
  m.image_w = grid_w * kPatchSize;
  m.original_h = m.image_h;
  m.original_w = m.image_w;
  m.data.resize(static_cast<std::size_t>(channels) * grid_h * grid_w);
  for (float& v : m.data) v = static_cast<float>(uniform(rng, -2.0, 2.0));
  return m;
}

}  // namespace fixtures
