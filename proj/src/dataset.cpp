#include "patchprobe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "patchprobe/errors.hpp"

namespace patchprobe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kBoundsTolerance = 1e-6;

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

template <typename T>
T require(const json& obj, const char* key, const std::string& kind, std::int64_t id) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw SchemaError(kind, id, std::string("missing field '") + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw SchemaError(kind, id, std::string("bad type for field '") + key + "'");
  }
}

std::int64_t record_id(const json& obj, const std::string& kind) {
  if (!obj.is_object() || !obj.contains("id") || !obj["id"].is_number_integer()) {
    throw SchemaError(kind + " record without integer id");
  }
  return obj["id"].get<std::int64_t>();
}

MaskGeometry parse_segmentation(const json& seg, std::int64_t id) {
  MaskGeometry g;
  if (seg.is_array()) {
    for (const auto& poly : seg) {
      if (!poly.is_array() || poly.size() < 6 || poly.size() % 2 != 0) {
        throw SchemaError("instance", id, "polygon needs an even number (>= 6) of coordinates");
      }
      g.polygons.push_back(poly.get<std::vector<double>>());
    }
  } else if (seg.is_object()) {
    const auto size = require<std::vector<int>>(seg, "size", "instance", id);
    if (size.size() != 2) throw SchemaError("instance", id, "RLE size must be [h, w]");
    RleMask rle{size[0], size[1], {}};
    const json& counts = seg.at("counts");
    if (counts.is_string()) {
      rle.counts = rle_from_string(counts.get<std::string>());
    } else {
      rle.counts = counts.get<std::vector<std::uint32_t>>();
    }
    g.rle = std::move(rle);
  } else {
    throw SchemaError("instance", id, "unrecognized segmentation encoding");
  }
  return g;
}

// Pixel (x, y) is inside when its center (x + 0.5, y + 0.5) is inside the
// polygon under the even-odd rule.
void fill_polygon(const std::vector<double>& coords, BinaryMask& mask) {
  const std::size_t n = coords.size() / 2;
  std::vector<double> xs;
  for (int y = 0; y < mask.height; ++y) {
    const double sy = y + 0.5;
    xs.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const double x0 = coords[2 * i], y0 = coords[2 * i + 1];
      const double x1 = coords[2 * ((i + 1) % n)], y1 = coords[2 * ((i + 1) % n) + 1];
      if ((y0 <= sy && y1 > sy) || (y1 <= sy && y0 > sy)) {
        xs.push_back(x0 + (sy - y0) * (x1 - x0) / (y1 - y0));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // centers x + 0.5 in [xs[k], xs[k+1])
      const int first = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
      const int last = std::min(mask.width - 1, static_cast<int>(std::ceil(xs[k + 1] - 0.5)) - 1);
      for (int x = first; x <= last; ++x) mask.at(x, y) = 1;
    }
  }
}

std::uint64_t random_below(std::mt19937_64& rng, std::uint64_t bound) {
  // Rejection sampling keeps the shuffle identical across standard libraries.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % bound;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw SchemaError("unknown split name '" + std::string(name) + "'");
}

const ImageRecord* AnnotationStore::find_image(std::int64_t id) const {
  for (const auto& im : images) {
    if (im.id == id) return &im;
  }
  return nullptr;
}

std::vector<const Instance*> AnnotationStore::instances_of(std::int64_t image_id) const {
  std::vector<const Instance*> out;
  for (const auto& inst : instances) {
    if (inst.image_id == image_id) out.push_back(&inst);
  }
  return out;
}

std::vector<std::int64_t> AnnotationStore::image_ids(std::optional<Split> split) const {
  std::vector<std::int64_t> ids;
  for (const auto& im : images) {
    if (!split) {
      ids.push_back(im.id);
      continue;
    }
    auto it = splits.find(im.id);
    if (it != splits.end() && it->second == *split) ids.push_back(im.id);
  }
  return ids;
}

std::vector<Violation> validate(const AnnotationStore& store) {
  std::vector<Violation> out;
  std::map<std::int64_t, const ImageRecord*> images;
  for (const auto& im : store.images) {
    if (!images.emplace(im.id, &im).second) out.push_back({"image", im.id, "duplicate image id"});
    if (im.width <= 0 || im.height <= 0) out.push_back({"image", im.id, "non-positive image size"});
  }
  std::set<std::int64_t> categories;
  for (const auto& c : store.categories) {
    if (!categories.insert(c.id).second) out.push_back({"category", c.id, "duplicate category id"});
  }
  std::set<std::int64_t> instance_ids;
  for (const auto& inst : store.instances) {
    if (!instance_ids.insert(inst.id).second) {
      out.push_back({"instance", inst.id, "duplicate instance id"});
    }
    auto im = images.find(inst.image_id);
    if (im == images.end()) {
      out.push_back({"instance", inst.id, "references missing image " + std::to_string(inst.image_id)});
    }
    if (!categories.count(inst.category_id)) {
      out.push_back({"instance", inst.id,
                     "references missing category " + std::to_string(inst.category_id)});
    }
    if (inst.bbox) {
      const Box& b = *inst.bbox;
      if (!(b.w > 0.0) || !(b.h > 0.0)) {
        out.push_back({"instance", inst.id, "bbox has non-positive extent"});
      } else if (im != images.end()) {
        const ImageRecord& r = *im->second;
        if (b.x < -kBoundsTolerance || b.y < -kBoundsTolerance ||
            b.x2() > r.width + kBoundsTolerance || b.y2() > r.height + kBoundsTolerance) {
          out.push_back({"instance", inst.id, "bbox exceeds image bounds"});
        }
      }
    } else if (!inst.mask || inst.mask->empty()) {
      out.push_back({"instance", inst.id, "neither bbox nor mask geometry"});
    }
    if (inst.mask && inst.mask->rle && im != images.end()) {
      const RleMask& rle = *inst.mask->rle;
      if (rle.width != im->second->width || rle.height != im->second->height) {
        out.push_back({"instance", inst.id, "mask raster size differs from image size"});
      }
    }
  }
  if (!store.splits.empty()) {
    for (const auto& im : store.images) {
      if (!store.splits.count(im.id)) out.push_back({"split", im.id, "image missing from split map"});
    }
    for (const auto& [id, split] : store.splits) {
      if (!images.count(id)) out.push_back({"split", id, "split entry for unknown image"});
    }
  }
  return out;
}

AnnotationStore store_from_json(const json& doc) {
  if (!doc.is_object()) throw SchemaError("COCO document must be a JSON object");
  AnnotationStore store;
  for (const auto& j : doc.value("images", json::array())) {
    const auto id = record_id(j, "image");
    store.images.push_back({id, require<std::string>(j, "file_name", "image", id),
                            require<int>(j, "width", "image", id),
                            require<int>(j, "height", "image", id)});
  }
  for (const auto& j : doc.value("categories", json::array())) {
    const auto id = record_id(j, "category");
    store.categories.push_back({id, j.value("name", std::string{})});
  }
  for (const auto& j : doc.value("annotations", json::array())) {
    const auto id = record_id(j, "instance");
    Instance inst;
    inst.id = id;
    inst.image_id = require<std::int64_t>(j, "image_id", "instance", id);
    inst.category_id = require<std::int64_t>(j, "category_id", "instance", id);
    if (j.contains("bbox") && !j["bbox"].is_null()) {
      const auto b = require<std::vector<double>>(j, "bbox", "instance", id);
      if (b.size() != 4) throw SchemaError("instance", id, "bbox must have 4 numbers");
      inst.bbox = Box{b[0], b[1], b[2], b[3]};
    }
    if (j.contains("segmentation") && !j["segmentation"].is_null()) {
      MaskGeometry g = parse_segmentation(j["segmentation"], id);
      if (!g.empty()) inst.mask = std::move(g);
    }
    store.instances.push_back(std::move(inst));
  }
  if (doc.contains("splits")) {
    for (const auto& [key, value] : doc["splits"].items()) {
      std::int64_t id = 0;
      try {
        id = std::stoll(key);
      } catch (const std::exception&) {
        throw SchemaError("split key '" + key + "' is not an image id");
      }
      store.splits[id] = parse_split(value.get<std::string>());
    }
  }
  return store;
}

json store_to_json(const AnnotationStore& store) {
  json doc;
  doc["images"] = json::array();
  for (const auto& im : store.images) {
    doc["images"].push_back({{"id", im.id}, {"file_name", im.file_name}, {"width", im.width},
                             {"height", im.height}});
  }
  doc["categories"] = json::array();
  for (const auto& c : store.categories) {
    doc["categories"].push_back({{"id", c.id}, {"name", c.name}, {"supercategory", c.name}});
  }
  doc["annotations"] = json::array();
  for (const auto& inst : store.instances) {
    json j{{"id", inst.id}, {"image_id", inst.image_id}, {"category_id", inst.category_id},
           {"iscrowd", 0}};
    if (inst.bbox) {
      j["bbox"] = {inst.bbox->x, inst.bbox->y, inst.bbox->w, inst.bbox->h};
      j["area"] = inst.bbox->area();
    } else {
      j["bbox"] = nullptr;
    }
    if (inst.mask) {
      if (inst.mask->rle) {
        const RleMask& rle = *inst.mask->rle;
        j["segmentation"] = {{"size", {rle.height, rle.width}}, {"counts", rle_to_string(rle.counts)}};
      } else {
        j["segmentation"] = inst.mask->polygons;
      }
    } else {
      j["segmentation"] = json::array();
    }
    doc["annotations"].push_back(std::move(j));
  }
  if (!store.splits.empty()) {
    json splits = json::object();
    for (const auto& [id, split] : store.splits) splits[std::to_string(id)] = to_string(split);
    doc["splits"] = std::move(splits);
  }
  return doc;
}

namespace {

AnnotationStore checked(AnnotationStore store) {
  const auto violations = validate(store);
  if (!violations.empty()) {
    const Violation& v = violations.front();
    throw SchemaError(v.record_kind, v.record_id, v.message);
  }
  return store;
}

AnnotationStore load_mask_layout(const fs::path& dir) {
  const json cats = read_json_file(dir / "categories.json");
  AnnotationStore store;
  const json& list = cats.is_object() && cats.contains("categories") ? cats["categories"] : cats;
  for (const auto& j : list) {
    const auto id = record_id(j, "category");
    store.categories.push_back({id, j.value("name", std::string{})});
  }
  if (store.categories.empty()) throw SchemaError("categories.json lists no categories");

  std::vector<fs::path> masks;
  for (const auto& e : fs::directory_iterator(dir / "masks")) {
    if (e.is_regular_file() && e.path().extension() == ".png") masks.push_back(e.path());
  }
  std::sort(masks.begin(), masks.end());

  std::int64_t image_id = 0;
  std::int64_t instance_id = 0;
  for (const auto& path : masks) {
    ++image_id;
    const LabelImage labels = read_labels(path);
    std::string file_name = path.filename().string();
    if (fs::is_directory(dir / "images")) {
      for (const char* ext : {".png", ".jpg", ".jpeg", ".bmp", ".tif"}) {
        if (fs::exists(dir / "images" / (path.stem().string() + ext))) {
          file_name = path.stem().string() + ext;
          break;
        }
      }
    }
    store.images.push_back({image_id, file_name, labels.width, labels.height});
    std::set<std::int32_t> values(labels.labels.begin(), labels.labels.end());
    values.erase(0);
    for (std::int32_t v : values) {
      BinaryMask m(labels.width, labels.height);
      for (std::size_t i = 0; i < labels.labels.size(); ++i) m.data[i] = labels.labels[i] == v;
      Instance inst;
      inst.id = ++instance_id;
      inst.image_id = image_id;
      inst.category_id = store.categories.front().id;
      inst.mask = MaskGeometry{{}, encode_rle(m)};
      store.instances.push_back(std::move(inst));
    }
  }
  return store;
}

}  // namespace

AnnotationStore load_source(const fs::path& path) {
  if (fs::is_regular_file(path)) return checked(store_from_json(read_json_file(path)));
  if (!fs::is_directory(path)) throw IoError("no such annotation source " + path.string());

  if (fs::exists(path / "annotations.json")) {
    return checked(store_from_json(read_json_file(path / "annotations.json")));
  }
  if (fs::exists(path / "categories.json") && fs::is_directory(path / "masks")) {
    return checked(load_mask_layout(path));
  }
  std::vector<fs::path> jsons;
  for (const auto& e : fs::directory_iterator(path)) {
    if (e.is_regular_file() && e.path().extension() == ".json") jsons.push_back(e.path());
  }
  if (jsons.size() == 1) return checked(store_from_json(read_json_file(jsons.front())));
  throw SchemaError("unrecognized annotation layout in " + path.string());
}

void write_coco(const AnnotationStore& store, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << store_to_json(store).dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

BinaryMask rasterize(const MaskGeometry& mask, int width, int height) {
  BinaryMask out(width, height);
  for (const auto& poly : mask.polygons) fill_polygon(poly, out);
  if (mask.rle) {
    BinaryMask r = decode_rle(*mask.rle);
    if (r.width != width || r.height != height) r = resize_nearest(r, width, height);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] |= r.data[i];
  }
  return out;
}

std::optional<Box> tight_extent(const BinaryMask& mask) {
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < 0) return std::nullopt;
  return Box{double(x0), double(y0), double(x1 - x0 + 1), double(y1 - y0 + 1)};
}

AnnotationStore derive_bboxes(AnnotationStore store) {
  for (auto& inst : store.instances) {
    if (inst.bbox) continue;
    if (!inst.mask || inst.mask->empty()) {
      throw SchemaError("instance", inst.id, "no mask geometry to derive a bbox from");
    }
    const ImageRecord* im = store.find_image(inst.image_id);
    if (!im) throw SchemaError("instance", inst.id, "references missing image");
    const auto extent = tight_extent(rasterize(*inst.mask, im->width, im->height));
    if (!extent) throw SchemaError("instance", inst.id, "mask has no foreground pixels");
    inst.bbox = *extent;
  }
  return store;
}

SplitSizes split_sizes(std::size_t n, const SplitPolicy& policy) {
  // Tiny slack so 0.1 * 10 is not floored to 0.
  const auto floor_of = [n](double r) {
    return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9));
  };
  SplitSizes s;
  s.test = floor_of(policy.test);
  s.val = floor_of(policy.val);
  s.train = n - s.val - s.test;
  return s;
}

AnnotationStore split_dataset(AnnotationStore store, const SplitPolicy& policy) {
  if (policy.mode == SplitPolicy::Mode::Predefined) {
    for (const auto& im : store.images) {
      if (!policy.predefined.count(im.id)) {
        throw SchemaError("image", im.id, "missing from predefined split map");
      }
    }
    store.splits.clear();
    for (const auto& im : store.images) store.splits[im.id] = policy.predefined.at(im.id);
    return store;
  }
  for (double r : {policy.train, policy.val, policy.test}) {
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("split fractions must lie in (0, 1)");
  }
  if (std::abs(policy.train + policy.val + policy.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  std::vector<std::int64_t> ids = store.image_ids();
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(policy.seed);
  for (std::size_t i = ids.size(); i > 1; --i) {
    std::swap(ids[i - 1], ids[random_below(rng, i)]);
  }
  const SplitSizes sizes = split_sizes(ids.size(), policy);
  store.splits.clear();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Split s = Split::Test;
    if (i < sizes.train) {
      s = Split::Train;
    } else if (i < sizes.train + sizes.val) {
      s = Split::Val;
    }
    store.splits[ids[i]] = s;
  }
  return store;
}

SplitSizes count_splits(const AnnotationStore& store) {
  SplitSizes s;
  for (const auto& [id, split] : store.splits) {
    if (split == Split::Train) ++s.train;
    if (split == Split::Val) ++s.val;
    if (split == Split::Test) ++s.test;
  }
  return s;
}

SplitPolicy parse_ratios(std::string_view text) {
  std::vector<double> parts;
  std::stringstream ss{std::string(text)};
  std::string item;
  while (std::getline(ss, item, ':')) {
    try {
      parts.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("bad ratio component '" + item + "'");
    }
  }
  if (parts.size() != 3) throw ConfigError("ratios must look like 7:2:1");
  const double total = parts[0] + parts[1] + parts[2];
  if (!(total > 0.0)) throw ConfigError("ratios must be positive");
  SplitPolicy p;
  p.train = parts[0] / total;
  p.val = parts[1] / total;
  p.test = parts[2] / total;
  return p;
}

BinaryMask foreground_mask(const AnnotationStore& store, std::int64_t image_id, int out_width,
                           int out_height) {
  const ImageRecord* im = store.find_image(image_id);
  if (!im) throw NotFoundError("image " + std::to_string(image_id) + " not in annotations");
  BinaryMask out(out_width, out_height);
  const double sx = static_cast<double>(out_width) / im->width;
  const double sy = static_cast<double>(out_height) / im->height;
  for (const Instance* inst : store.instances_of(image_id)) {
    if (inst->mask) {
      MaskGeometry scaled;
      for (const auto& poly : inst->mask->polygons) {
        std::vector<double> p = poly;
        for (std::size_t k = 0; k < p.size(); k += 2) {
          p[k] *= sx;
          p[k + 1] *= sy;
        }
        scaled.polygons.push_back(std::move(p));
      }
      scaled.rle = inst->mask->rle;
      const BinaryMask m = rasterize(scaled, out_width, out_height);
      for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] |= m.data[i];
    } else if (inst->bbox) {
      const Box& b = *inst->bbox;
      const int x0 = std::max(0, static_cast<int>(std::lround(b.x * sx)));
      const int y0 = std::max(0, static_cast<int>(std::lround(b.y * sy)));
      const int x1 = std::min(out_width, static_cast<int>(std::lround(b.x2() * sx)));
      const int y1 = std::min(out_height, static_cast<int>(std::lround(b.y2() * sy)));
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) out.at(x, y) = 1;
      }
    }
  }
  return out;
}

}  // namespace patchprobe
