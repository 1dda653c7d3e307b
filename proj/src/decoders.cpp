#include "patchprobe/decoders.hpp"

#include <algorithm>
#include <cmath>

#include "patchprobe/errors.hpp"

namespace patchprobe {

std::string_view to_string(Task task) { return task == Task::Seg ? "seg" : "det"; }

Task parse_task(std::string_view name) {
  if (name == "seg") return Task::Seg;
  if (name == "det") return Task::Det;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

Tensor to_tensor(const PatchFeatureMap& map) {
  Tensor t(map.channels, map.grid_h, map.grid_w);
  std::copy(map.data.begin(), map.data.end(), t.v.begin());
  return t;
}

// ---------------------------------------------------------------- stem

Stem::Stem(const StemConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.input_dim <= 0 || cfg.adapted_dim <= 0 || cfg.layers < 1) {
    throw ConfigError("stem needs positive dims and at least one layer");
  }
  for (int l = 0; l < cfg.layers; ++l) {
    const int in = l == 0 ? cfg.input_dim : cfg.adapted_dim;
    layers_.emplace_back("stem." + std::to_string(l), in, cfg.adapted_dim);
    layers_.back().init(l + 1 < cfg.layers ? Init::HeUniform : Init::XavierUniform, rng);
  }
}

Tensor Stem::forward(const Tensor& features, Trace* trace) const {
  if (features.c != cfg_.input_dim) {
    throw ShapeError("stem expects " + std::to_string(cfg_.input_dim) + " input channels, got " +
                     std::to_string(features.c));
  }
  if (trace) {
    trace->input = features;
    trace->hidden.clear();
  }
  Tensor x = layers_.front().forward(features);
  for (std::size_t l = 1; l < layers_.size(); ++l) {
    relu_inplace(x);
    if (trace) trace->hidden.push_back(x);
    x = layers_[l].forward(x);
  }
  return x;
}

void Stem::backward(const Trace& trace, const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t l = layers_.size(); l-- > 1;) {
    const Tensor& act = trace.hidden[l - 1];
    g = layers_[l].backward(act, g);
    relu_backward(act, g);
  }
  layers_.front().backward(trace.input, g, false);
}

void Stem::collect(std::vector<Param*>& out) {
  for (auto& l : layers_) {
    out.push_back(&l.weight());
    out.push_back(&l.bias());
  }
}

// ---------------------------------------------------------------- det head

DetHead::DetHead(int adapted_dim, int num_classes, std::mt19937_64& rng)
    : num_classes_(num_classes), proj_("det.proj", adapted_dim, 1 + num_classes + 4) {
  if (num_classes < 1) throw ConfigError("detection head needs K >= 1");
  proj_.init(Init::XavierUniform, rng);
  // Objectness prior of 0.01 so early training is not swamped by negatives.
  proj_.bias().value[0] = -std::log((1.0 - 0.01) / 0.01);
}

DetGrid DetHead::forward(const Tensor& adapted) const {
  const Tensor raw = proj_.forward(adapted);
  DetGrid g;
  g.num_classes = num_classes_;
  g.grid_h = adapted.h;
  g.grid_w = adapted.w;
  g.objectness_logits = Tensor(1, adapted.h, adapted.w);
  g.class_logits = Tensor(num_classes_, adapted.h, adapted.w);
  g.offsets = Tensor(4, adapted.h, adapted.w);
  const std::size_t n = raw.plane();
  std::copy_n(raw.channel(0), n, g.objectness_logits.channel(0));
  for (int k = 0; k < num_classes_; ++k) std::copy_n(raw.channel(1 + k), n, g.class_logits.channel(k));
  for (int k = 0; k < 4; ++k) std::copy_n(raw.channel(1 + num_classes_ + k), n, g.offsets.channel(k));
  return g;
}

Tensor DetHead::backward(const Tensor& adapted, const Tensor& grad_obj, const Tensor& grad_cls,
                         const Tensor& grad_off) {
  Tensor g(1 + num_classes_ + 4, adapted.h, adapted.w);
  const std::size_t n = g.plane();
  std::copy_n(grad_obj.channel(0), n, g.channel(0));
  for (int k = 0; k < num_classes_; ++k) std::copy_n(grad_cls.channel(k), n, g.channel(1 + k));
  for (int k = 0; k < 4; ++k) std::copy_n(grad_off.channel(k), n, g.channel(1 + num_classes_ + k));
  return proj_.backward(adapted, g);
}

void DetHead::collect(std::vector<Param*>& out) {
  out.push_back(&proj_.weight());
  out.push_back(&proj_.bias());
}

// ---------------------------------------------------------------- seg head

SegHead::SegHead(int adapted_dim, const SegHeadConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.widths.size() != kStages + 1) throw ConfigError("seg head needs 5 widths");
  for (int w : cfg.widths) {
    if (w <= 0) throw ConfigError("seg head widths must be positive");
  }
  reduce_ = PointwiseConv("seg.reduce", adapted_dim, cfg.widths[0]);
  reduce_.init(Init::HeUniform, rng);
  for (int s = 0; s < kStages; ++s) {
    stages_.emplace_back("seg.stage" + std::to_string(s), cfg.widths[s], cfg.widths[s + 1]);
    stages_.back().init(Init::HeUniform, rng);
  }
  final_ = PointwiseConv("seg.final", cfg.widths[kStages], 1);
  final_.init(Init::Zero, rng);
  skip_ = PointwiseConv("seg.skip", adapted_dim, 1);
  skip_.init(Init::XavierUniform, rng);
}

Tensor SegHead::forward(const Tensor& adapted, Trace* trace) const {
  Tensor x = reduce_.forward(adapted);
  relu_inplace(x);
  if (trace) {
    trace->adapted = adapted;
    trace->reduced = x;
    trace->upsampled.clear();
    trace->activated.clear();
  }
  for (const auto& conv : stages_) {
    Tensor up = upsample_nearest(x, 2);
    x = conv.forward(up);
    relu_inplace(x);
    if (trace) {
      trace->upsampled.push_back(std::move(up));
      trace->activated.push_back(x);
    }
  }
  Tensor logits = final_.forward(x);
  const Tensor skip = upsample_nearest(skip_.forward(adapted), kPatchSize);
  for (std::size_t i = 0; i < logits.v.size(); ++i) logits.v[i] += skip.v[i];
  return logits;
}

Tensor SegHead::backward(const Trace& trace, const Tensor& grad_logits) {
  Tensor grad_adapted = skip_.backward(trace.adapted, upsample_nearest_backward(grad_logits, kPatchSize));
  Tensor g = final_.backward(trace.activated.back(), grad_logits);
  for (int s = kStages; s-- > 0;) {
    relu_backward(trace.activated[s], g);
    g = upsample_nearest_backward(stages_[s].backward(trace.upsampled[s], g), 2);
  }
  relu_backward(trace.reduced, g);
  const Tensor from_reduce = reduce_.backward(trace.adapted, g);
  for (std::size_t i = 0; i < grad_adapted.v.size(); ++i) grad_adapted.v[i] += from_reduce.v[i];
  return grad_adapted;
}

void SegHead::collect(std::vector<Param*>& out) {
  for (PointwiseConv* p : {&reduce_}) {
    out.push_back(&p->weight());
    out.push_back(&p->bias());
  }
  for (auto& s : stages_) {
    out.push_back(&s.weight());
    out.push_back(&s.bias());
  }
  for (PointwiseConv* p : {&final_, &skip_}) {
    out.push_back(&p->weight());
    out.push_back(&p->bias());
  }
}

DenseMask make_dense_mask(const Tensor& logits, std::int64_t image_id) {
  DenseMask m;
  m.image_id = image_id;
  m.height = logits.h;
  m.width = logits.w;
  m.logits = logits.v;
  m.probabilities.resize(logits.v.size());
  std::transform(logits.v.begin(), logits.v.end(), m.probabilities.begin(), sigmoid);
  return m;
}

// ---------------------------------------------------------------- model

PatchModel::PatchModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  std::mt19937_64 rng(seed);
  stem_ = Stem(cfg.stem, rng);
  if (cfg.task == Task::Det) {
    det_ = DetHead(cfg.stem.adapted_dim, cfg.num_classes, rng);
  } else {
    seg_ = SegHead(cfg.stem.adapted_dim, cfg.seg, rng);
  }
}

DetGrid PatchModel::detect(const PatchFeatureMap& features) const {
  if (cfg_.task != Task::Det) throw ConfigError("model was built for segmentation");
  return det_.forward(stem_.forward(to_tensor(features)));
}

DenseMask PatchModel::segment(const PatchFeatureMap& features) const {
  if (cfg_.task != Task::Seg) throw ConfigError("model was built for detection");
  return make_dense_mask(seg_.forward(stem_.forward(to_tensor(features))), features.image_id);
}

std::vector<Param*> PatchModel::parameters() {
  std::vector<Param*> out;
  stem_.collect(out);
  if (cfg_.task == Task::Det) {
    det_.collect(out);
  } else {
    seg_.collect(out);
  }
  return out;
}

std::vector<const Param*> PatchModel::parameters() const {
  auto mutable_params = const_cast<PatchModel*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

void PatchModel::zero_grad() {
  for (Param* p : parameters()) p->zero_grad();
}

// ---------------------------------------------------------------- boxes

Box decode_offsets(int row, int col, double tx, double ty, double tw, double th, int patch) {
  const double cx = (col + 0.5 + tx) * patch;
  const double cy = (row + 0.5 + ty) * patch;
  const double w = patch * std::exp(tw);
  const double h = patch * std::exp(th);
  return Box{cx - 0.5 * w, cy - 0.5 * h, w, h};
}

PatchOffsets encode_box(const Box& box, int grid_h, int grid_w, int patch) {
  if (!(box.w > 0.0) || !(box.h > 0.0)) throw ShapeError("degenerate ground-truth box");
  const double cx = box.center_x() / patch;
  const double cy = box.center_y() / patch;
  PatchOffsets o;
  o.col = std::clamp(static_cast<int>(std::floor(cx)), 0, grid_w - 1);
  o.row = std::clamp(static_cast<int>(std::floor(cy)), 0, grid_h - 1);
  o.tx = cx - o.col - 0.5;
  o.ty = cy - o.row - 0.5;
  o.tw = std::log(box.w / patch);
  o.th = std::log(box.h / patch);
  return o;
}

std::vector<Detection> decode_boxes(const DetGrid& grid, int patch) {
  const double width = static_cast<double>(grid.grid_w) * patch;
  const double height = static_cast<double>(grid.grid_h) * patch;
  std::vector<Detection> out;
  out.reserve(static_cast<std::size_t>(grid.grid_h) * grid.grid_w);
  for (int r = 0; r < grid.grid_h; ++r) {
    for (int c = 0; c < grid.grid_w; ++c) {
      const Box raw = decode_offsets(r, c, grid.offsets.at(0, r, c), grid.offsets.at(1, r, c),
                                     grid.offsets.at(2, r, c), grid.offsets.at(3, r, c), patch);
      const double x1 = std::clamp(raw.x, 0.0, width);
      const double y1 = std::clamp(raw.y, 0.0, height);
      const double x2 = std::clamp(raw.x + raw.w, 0.0, width);
      const double y2 = std::clamp(raw.y + raw.h, 0.0, height);
      int best = 0;
      double best_p = grid.class_prob(0, r, c);
      for (int k = 1; k < grid.num_classes; ++k) {
        const double p = grid.class_prob(k, r, c);
        if (p > best_p) {
          best_p = p;
          best = k;
        }
      }
      Detection d;
      d.box = Box{x1, y1, x2 - x1, y2 - y1};
      d.score = grid.objectness(r, c) * best_p;
      d.class_index = best;
      d.patch = static_cast<std::size_t>(r) * grid.grid_w + c;
      out.push_back(d);
    }
  }
  return out;
}

std::size_t DetTargets::positives() const {
  return static_cast<std::size_t>(std::count(positive.begin(), positive.end(), 1));
}

DetTargets encode_targets(std::span<const GtBox> boxes, int grid_h, int grid_w, int num_classes,
                          int patch) {
  DetTargets t;
  t.grid_h = grid_h;
  t.grid_w = grid_w;
  t.num_classes = num_classes;
  const std::size_t n = static_cast<std::size_t>(grid_h) * grid_w;
  t.objectness.assign(n, 0.0);
  t.class_index.assign(n, -1);
  t.offsets.assign(4 * n, 0.0);
  t.positive.assign(n, 0);
  t.instance_id.assign(n, -1);
  std::vector<double> area(n, 0.0);
  for (const GtBox& gt : boxes) {
    if (gt.class_index < 0 || gt.class_index >= num_classes) {
      throw ShapeError("ground-truth class index out of range");
    }
    const PatchOffsets o = encode_box(gt.box, grid_h, grid_w, patch);
    const std::size_t p = static_cast<std::size_t>(o.row) * grid_w + o.col;
    const double a = gt.box.area();
    if (t.positive[p]) {
      const bool wins = a > area[p] || (a == area[p] && gt.instance_id < t.instance_id[p]);
      if (!wins) continue;
    }
    t.positive[p] = 1;
    t.objectness[p] = 1.0;
    t.class_index[p] = gt.class_index;
    t.instance_id[p] = gt.instance_id;
    area[p] = a;
    t.offsets[p] = o.tx;
    t.offsets[n + p] = o.ty;
    t.offsets[2 * n + p] = o.tw;
    t.offsets[3 * n + p] = o.th;
  }
  return t;
}

}  // namespace patchprobe
