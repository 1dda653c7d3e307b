#pragma once
// COCO-style annotation store, loaders, bbox derivation and splitting.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "patchprobe/geometry.hpp"
#include "patchprobe/image.hpp"

namespace patchprobe {

enum class Split { Train, Val, Test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct ImageRecord {
  std::int64_t id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Category {
  std::int64_t id = 0;
  std::string name;
  friend bool operator==(const Category&, const Category&) = default;
};

// COCO run-length raster: column-major, counts alternate background /
// foreground starting with background.
struct RleMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;
  friend bool operator==(const RleMask&, const RleMask&) = default;
};

// Polygons (x0, y0, x1, y1, ...) for vector sources, RLE for bitmap sources.
struct MaskGeometry {
  std::vector<std::vector<double>> polygons;
  std::optional<RleMask> rle;

  bool empty() const { return polygons.empty() && !rle; }
  friend bool operator==(const MaskGeometry&, const MaskGeometry&) = default;
};

struct Instance {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  std::optional<Box> bbox;  // absent until derive_bboxes for mask-only sources
  std::optional<MaskGeometry> mask;

  bool pending_bbox() const { return !bbox.has_value(); }
  friend bool operator==(const Instance&, const Instance&) = default;
};

struct AnnotationStore {
  std::vector<ImageRecord> images;
  std::vector<Category> categories;
  std::vector<Instance> instances;
  std::map<std::int64_t, Split> splits;

  const ImageRecord* find_image(std::int64_t id) const;
  std::vector<const Instance*> instances_of(std::int64_t image_id) const;
  std::vector<std::int64_t> image_ids(std::optional<Split> split = std::nullopt) const;

  friend bool operator==(const AnnotationStore&, const AnnotationStore&) = default;
};

struct Violation {
  std::string record_kind;  // "image", "category", "instance", "split"
  std::int64_t record_id = 0;
  std::string message;
};

std::vector<Violation> validate(const AnnotationStore& store);

AnnotationStore store_from_json(const nlohmann::json& doc);
nlohmann::json store_to_json(const AnnotationStore& store);

// Accepts a COCO-JSON file, a directory holding one (annotations.json or a
// single *.json), or a mask layout: categories.json plus masks/<name>.png
// label rasters (each nonzero value one instance), optionally images/.
AnnotationStore load_source(const std::filesystem::path& path);
void write_coco(const AnnotationStore& store, const std::filesystem::path& path);

BinaryMask rasterize(const MaskGeometry& mask, int width, int height);
// Tight half-open extent of the foreground, nullopt when empty.
std::optional<Box> tight_extent(const BinaryMask& mask);

// Fills missing bboxes from mask geometry; existing bboxes are kept.
AnnotationStore derive_bboxes(AnnotationStore store);

struct SplitPolicy {
  enum class Mode { Random, Predefined };
  double train = 0.7;
  double val = 0.2;
  double test = 0.1;
  std::uint64_t seed = 42;
  Mode mode = Mode::Random;
  std::map<std::int64_t, Split> predefined;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  friend bool operator==(const SplitSizes&, const SplitSizes&) = default;
};

// floor for val and test, remainder to train.
SplitSizes split_sizes(std::size_t n, const SplitPolicy& policy);
AnnotationStore split_dataset(AnnotationStore store, const SplitPolicy& policy);
SplitSizes count_splits(const AnnotationStore& store);

// Parses "7:2:1" style ratio strings into normalized fractions.
SplitPolicy parse_ratios(std::string_view text);

// Union of the instance masks (or filled boxes when no mask) of one image,
// rasterized at out_width x out_height by scaling from the image's size.
BinaryMask foreground_mask(const AnnotationStore& store, std::int64_t image_id, int out_width,
                           int out_height);

// COCO compressed RLE string codec.
std::string rle_to_string(const std::vector<std::uint32_t>& counts);
std::vector<std::uint32_t> rle_from_string(std::string_view text);
RleMask encode_rle(const BinaryMask& mask);
BinaryMask decode_rle(const RleMask& rle);

}  // namespace patchprobe
