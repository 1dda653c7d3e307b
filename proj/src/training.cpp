#include "patchprobe/training.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "patchprobe/errors.hpp"
#include "patchprobe/simd/kernels.hpp"

namespace patchprobe {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  const LossWeights& w = weights;
  for (double x : {w.objectness, w.classification, w.box, w.seg_bce, w.seg_dice}) {
    if (!(x >= 0.0)) throw ConfigError("loss weights must be >= 0");
  }
  post.validate();
}

FeatureSet load_feature_set(const ArchiveReader& archive, const AnnotationStore& store) {
  return FeatureSet{archive.read_all(), &store};
}

std::vector<GtBox> gt_boxes_for(const AnnotationStore& store, const PatchFeatureMap& map) {
  std::map<std::int64_t, int> class_of;
  for (std::size_t k = 0; k < store.categories.size(); ++k) class_of[store.categories[k].id] = int(k);
  const double sx = double(map.image_w) / map.original_w;
  const double sy = double(map.image_h) / map.original_h;
  std::vector<GtBox> out;
  for (const Instance* inst : store.instances_of(map.image_id)) {
    if (!inst->bbox) throw SchemaError("instance", inst->id, "bbox missing; run normalize first");
    Box b{inst->bbox->x * sx, inst->bbox->y * sy, inst->bbox->w * sx, inst->bbox->h * sy};
    if (map.flipped) b = flip_box(b, map.image_w);
    out.push_back({b, class_of.at(inst->category_id), inst->id});
  }
  return out;
}

namespace {

struct Sample {
  const PatchFeatureMap* plain = nullptr;
  const PatchFeatureMap* flipped = nullptr;
};

TrainSample prepare(const PatchFeatureMap& map, const AnnotationStore& store, Task task, int num_classes) {
  TrainSample p;
  p.features = to_tensor(map);
  if (task == Task::Det) {
    const auto boxes = gt_boxes_for(store, map);
    p.det = encode_targets(boxes, map.grid_h, map.grid_w, num_classes);
  } else {
    p.mask = foreground_mask(store, map.image_id, map.image_w, map.image_h);
    if (map.flipped) p.mask = flip_horizontal(p.mask);
  }
  return p;
}

}  // namespace

double accumulate_gradients(PatchModel& model, const TrainSample& s, Task task, const LossWeights& w,
                            double scale) {
  Stem::Trace trace;
  const Tensor adapted = model.stem().forward(s.features, &trace);
  Tensor grad_adapted;
  double loss = 0.0;
  if (task == Task::Det) {
    const DetGrid grid = model.det_head().forward(adapted);
    DetLoss l = loss_detection(grid, s.det, w);
    for (Tensor* g : {&l.grad_objectness, &l.grad_class, &l.grad_offsets}) {
      for (double& x : g->v) x *= scale;
    }
    grad_adapted = model.det_head().backward(adapted, l.grad_objectness, l.grad_class, l.grad_offsets);
    loss = l.total;
  } else {
    SegHead::Trace st;
    const Tensor logits = model.seg_head().forward(adapted, &st);
    SegLoss l = loss_segmentation(make_dense_mask(logits, 0), s.mask, w);
    for (double& x : l.grad_logits.v) x *= scale;
    grad_adapted = model.seg_head().backward(st, l.grad_logits);
    loss = l.total;
  }
  model.stem().backward(trace, grad_adapted);
  return loss;
}

namespace {

double validation_metric(const PatchModel& model, const FeatureSet& val, Task task,
                         const TrainConfig& cfg) {
  const AnnotationStore& store = *val.store;
  if (task == Task::Seg) {
    SegConfusion confusion(1);
    for (const auto& map : val.maps) {
      if (map.flipped) continue;
      const BinaryMask gt = foreground_mask(store, map.image_id, map.original_w, map.original_h);
      confusion.add(predict_mask(model, map, cfg.post.mask_threshold), gt);
    }
    return seg_scores(confusion).miou;
  }
  std::vector<DetPrediction> preds;
  std::vector<std::int64_t> ids;
  for (const auto& map : val.maps) {
    if (map.flipped) continue;
    ids.push_back(map.image_id);
    auto p = predict_detections(model, map, store.categories, cfg.post);
    preds.insert(preds.end(), p.begin(), p.end());
  }
  return map_report(preds, store, cfg.post.conf_threshold, ids).map50;
}

std::uint64_t random_below(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

}  // namespace

TrainResult train(const FeatureSet& train_set, Task task, const TrainConfig& cfg, const FeatureSet* val_set,
                  std::optional<Split> split) {
  cfg.validate();
  if (!train_set.store) throw ConfigError("training set has no annotations");
  const AnnotationStore& store = *train_set.store;

  std::map<std::pair<std::int64_t, bool>, const PatchFeatureMap*> by_key;
  for (const auto& m : train_set.maps) by_key[{m.image_id, m.flipped}] = &m;
  std::vector<std::int64_t> ids = store.splits.empty() ? store.image_ids() : store.image_ids(split);
  if (ids.empty()) throw ConfigError("no training images");

  std::vector<Sample> samples;
  for (std::int64_t id : ids) {
    Sample s;
    auto it = by_key.find({id, false});
    if (it == by_key.end()) throw NotFoundError("no feature entry for image " + std::to_string(id));
    s.plain = it->second;
    if (cfg.flip_aug) {
      auto f = by_key.find({id, true});
      if (f == by_key.end()) throw NotFoundError("no flipped feature entry for image " + std::to_string(id));
      s.flipped = f->second;
    }
    samples.push_back(s);
  }

  ModelConfig mc;
  mc.task = task;
  mc.stem.input_dim = samples.front().plain->channels;
  mc.stem.adapted_dim = cfg.adapted_dim;
  mc.stem.layers = cfg.stem_layers;
  mc.num_classes = std::max<int>(1, static_cast<int>(store.categories.size()));
  mc.seg = cfg.seg;
  for (const auto& s : samples) {
    if (s.plain->channels != mc.stem.input_dim) throw ShapeError("feature maps disagree on channel count");
  }

  TrainResult result;
  result.model = PatchModel(mc, cfg.seed);
  PatchModel& model = result.model;
  std::vector<Param*> params = model.parameters();
  std::vector<std::vector<double>> m1(params.size()), m2(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m1[i].assign(params[i]->value.size(), 0.0);
    m2[i].assign(params[i]->value.size(), 0.0);
  }

  // Targets of both orientations are fixed; build them once.
  std::vector<TrainSample> plain(samples.size()), flipped(cfg.flip_aug ? samples.size() : 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    plain[i] = prepare(*samples[i].plain, store, task, mc.num_classes);
    if (cfg.flip_aug) flipped[i] = prepare(*samples[i].flipped, store, task, mc.num_classes);
  }

  std::seed_seq seq{0x7ea1u, static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32)};
  std::mt19937_64 rng(seq);
  const auto& k = simd::kernels();
  std::optional<double> best_metric;
  std::vector<std::vector<double>> best_values;
  double b1t = 1.0, b2t = 1.0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[random_below(rng, i)]);
    std::vector<char> use_flip(samples.size(), 0);
    if (cfg.flip_aug) {
      for (std::size_t i : order) use_flip[i] = static_cast<char>(rng() >> 63);
    }

    // Batches hold a single grid size; a batch is emitted when full, the
    // remainders in order of first appearance.
    std::vector<std::vector<std::size_t>> batches;
    std::map<std::pair<int, int>, std::size_t> open;
    std::vector<std::vector<std::size_t>> pending;
    for (std::size_t i : order) {
      const auto key = std::make_pair(samples[i].plain->grid_h, samples[i].plain->grid_w);
      auto it = open.find(key);
      if (it == open.end()) {
        it = open.emplace(key, pending.size()).first;
        pending.emplace_back();
      }
      auto& bucket = pending[it->second];
      bucket.push_back(i);
      if (bucket.size() == static_cast<std::size_t>(cfg.batch_size)) {
        batches.push_back(std::move(bucket));
        bucket.clear();
      }
    }
    for (auto& b : pending) {
      if (!b.empty()) batches.push_back(std::move(b));
    }

    double epoch_loss = 0.0;
    for (const auto& batch : batches) {
      model.zero_grad();
      const double scale = 1.0 / double(batch.size());
      for (std::size_t i : batch) {
        const TrainSample& s = use_flip[i] ? flipped[i] : plain[i];
        epoch_loss += accumulate_gradients(model, s, task, cfg.weights, scale);
      }
      b1t *= cfg.beta1;
      b2t *= cfg.beta2;
      const simd::AdamStep step{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, 1.0 - b1t, 1.0 - b2t};
      for (std::size_t p = 0; p < params.size(); ++p) {
        k.adam(params[p]->value.data(), params[p]->grad.data(), m1[p].data(), m2[p].data(),
               params[p]->value.size(), step);
      }
      ++result.steps;
    }

    EpochRecord rec{epoch, epoch_loss / double(samples.size()), std::nullopt};
    if (val_set && val_set->store && !val_set->maps.empty()) {
      rec.val_metric = validation_metric(model, *val_set, task, cfg);
      if (!best_metric || *rec.val_metric > *best_metric) {
        best_metric = rec.val_metric;
        result.best_epoch = epoch;
        best_values.clear();
        for (const Param* p : params) best_values.push_back(p->value);
      }
    }
    result.curve.push_back(rec);
  }

  if (best_values.empty()) {
    result.best_epoch = cfg.epochs;
  } else {
    for (std::size_t p = 0; p < params.size(); ++p) params[p]->value = best_values[p];
  }
  model.zero_grad();
  return result;
}

void write_loss_curve(const std::vector<EpochRecord>& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(10);
  out << "epoch,train_loss,val_metric\n";
  for (const auto& r : curve) {
    out << r.epoch << ',' << r.train_loss << ',';
    if (r.val_metric) out << *r.val_metric;
    out << '\n';
  }
}

std::vector<DetPrediction> predict_detections(const PatchModel& model, const PatchFeatureMap& map,
                                              const std::vector<Category>& categories,
                                              const PostprocessConfig& cfg) {
  const auto dets = postprocess(model.detect(map), cfg);
  const double sx = double(map.original_w) / map.image_w;
  const double sy = double(map.original_h) / map.image_h;
  std::vector<DetPrediction> out;
  for (const auto& d : dets) {
    Box b{d.box.x * sx, d.box.y * sy, d.box.w * sx, d.box.h * sy};
    if (map.flipped) b = flip_box(b, map.original_w);
    const std::int64_t cat = d.class_index < static_cast<int>(categories.size())
                                 ? categories[d.class_index].id
                                 : d.class_index + 1;
    out.push_back({map.image_id, cat, b, d.score});
  }
  return out;
}

BinaryMask predict_mask(const PatchModel& model, const PatchFeatureMap& map, double threshold) {
  BinaryMask m = binarize(model.segment(map), threshold);
  if (map.flipped) m = flip_horizontal(m);
  if (m.width == map.original_w && m.height == map.original_h) return m;
  return resize_nearest(m, map.original_w, map.original_h);
}

}  // namespace patchprobe
