#pragma once
// Shared adaptation stem, patch-level detection head, patch-to-pixel
// segmentation head, and the box parameterization in patch coordinates.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchprobe/encoder.hpp"
#include "patchprobe/geometry.hpp"
#include "patchprobe/layers.hpp"

namespace patchprobe {

enum class Task { Seg, Det };
std::string_view to_string(Task task);
Task parse_task(std::string_view name);

enum class Nonlinearity { ReLU };

struct StemConfig {
  int input_dim = 0;
  int adapted_dim = 256;
  int layers = 2;
  Nonlinearity nonlinearity = Nonlinearity::ReLU;
};

Tensor to_tensor(const PatchFeatureMap& map);

// Stack of pointwise layers with a nonlinearity between consecutive layers.
// Never changes the spatial grid.
class Stem {
 public:
  struct Trace {
    Tensor input;
    std::vector<Tensor> hidden;  // post-activation outputs of all but the last layer
  };

  Stem() = default;
  Stem(const StemConfig& cfg, std::mt19937_64& rng);

  Tensor forward(const Tensor& features, Trace* trace = nullptr) const;
  // Backbone is frozen: no gradient is propagated into the features.
  void backward(const Trace& trace, const Tensor& grad_out);

  const StemConfig& config() const { return cfg_; }
  std::vector<PointwiseConv>& layers() { return layers_; }
  void collect(std::vector<Param*>& out);

 private:
  StemConfig cfg_;
  std::vector<PointwiseConv> layers_;
};

// Raw detection head output on the patch grid. Probabilities are derived
// from the stored logits.
struct DetGrid {
  int num_classes = 1;
  int grid_h = 0;
  int grid_w = 0;
  Tensor objectness_logits;  // (1, H_p, W_p)
  Tensor class_logits;       // (K, H_p, W_p)
  Tensor offsets;            // (4, H_p, W_p): t_x, t_y, t_w, t_h

  double objectness(int row, int col) const { return sigmoid(objectness_logits.at(0, row, col)); }
  double class_prob(int k, int row, int col) const { return sigmoid(class_logits.at(k, row, col)); }
};

class DetHead {
 public:
  DetHead() = default;
  DetHead(int adapted_dim, int num_classes, std::mt19937_64& rng);

  DetGrid forward(const Tensor& adapted) const;
  // Gradients w.r.t. the three output groups; returns dL/d(adapted).
  Tensor backward(const Tensor& adapted, const Tensor& grad_obj, const Tensor& grad_cls,
                  const Tensor& grad_off);

  int num_classes() const { return num_classes_; }
  PointwiseConv& projection() { return proj_; }
  void collect(std::vector<Param*>& out);

 private:
  int num_classes_ = 1;
  PointwiseConv proj_;
};

struct DenseMask {
  std::int64_t image_id = 0;
  int height = 0;
  int width = 0;
  std::vector<double> logits;
  std::vector<double> probabilities;

  double probability(int y, int x) const { return probabilities[static_cast<std::size_t>(y) * width + x]; }
};

struct SegHeadConfig {
  // widths[0]: patch-level reduction; widths[1..4]: outputs of the four
  // upsampling stages.
  std::vector<int> widths{32, 16, 16, 8, 8};
};

// Four nearest 2x upsampling stages, each followed by a 3x3 refinement and
// ReLU, then a 1-channel projection. A patch-level 1x1 logit, replicated over
// its 16x16 block, is added to the refined logit.
class SegHead {
 public:
  static constexpr int kStages = 4;

  struct Trace {
    Tensor adapted;
    Tensor reduced;
    std::vector<Tensor> upsampled;  // conv inputs per stage
    std::vector<Tensor> activated;  // post-ReLU outputs per stage
  };

  SegHead() = default;
  SegHead(int adapted_dim, const SegHeadConfig& cfg, std::mt19937_64& rng);

  // Returns logits (1, 16 H_p, 16 W_p).
  Tensor forward(const Tensor& adapted, Trace* trace = nullptr) const;
  Tensor backward(const Trace& trace, const Tensor& grad_logits);

  const SegHeadConfig& config() const { return cfg_; }
  PointwiseConv& refine_output() { return final_; }
  void collect(std::vector<Param*>& out);

 private:
  SegHeadConfig cfg_;
  PointwiseConv reduce_;
  std::vector<Conv3x3> stages_;
  PointwiseConv final_;
  PointwiseConv skip_;
};

DenseMask make_dense_mask(const Tensor& logits, std::int64_t image_id);

struct ModelConfig {
  Task task = Task::Seg;
  StemConfig stem;
  int num_classes = 1;
  SegHeadConfig seg;
};

// Stem plus the head for one task; the only trainable parameters.
class PatchModel {
 public:
  PatchModel() = default;
  PatchModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  Stem& stem() { return stem_; }
  DetHead& det_head() { return det_; }
  SegHead& seg_head() { return seg_; }
  const Stem& stem() const { return stem_; }
  const DetHead& det_head() const { return det_; }
  const SegHead& seg_head() const { return seg_; }

  DetGrid detect(const PatchFeatureMap& features) const;
  DenseMask segment(const PatchFeatureMap& features) const;

  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
  void zero_grad();

 private:
  ModelConfig cfg_;
  Stem stem_;
  DetHead det_;
  SegHead seg_;
};

// One decoded patch hypothesis.
struct Detection {
  Box box;
  double score = 0.0;
  int class_index = 0;
  std::size_t patch = 0;  // row * W_p + col
};

// Exactly H_p * W_p hypotheses, one per patch, clipped to the image extent.
// score = objectness * max class probability.
std::vector<Detection> decode_boxes(const DetGrid& grid, int patch = kPatchSize);

struct PatchOffsets {
  int row = 0;
  int col = 0;
  double tx = 0.0, ty = 0.0, tw = 0.0, th = 0.0;
};

// Patch containing the box center (floor rule) and the offsets that decode
// back to the box.
PatchOffsets encode_box(const Box& box, int grid_h, int grid_w, int patch = kPatchSize);
Box decode_offsets(int row, int col, double tx, double ty, double tw, double th,
                   int patch = kPatchSize);

struct GtBox {
  Box box;
  int class_index = 0;
  std::int64_t instance_id = 0;
};

struct DetTargets {
  int grid_h = 0;
  int grid_w = 0;
  int num_classes = 1;
  std::vector<double> objectness;         // N
  std::vector<int> class_index;           // N, -1 where negative
  std::vector<double> offsets;            // 4 x N planar
  std::vector<std::uint8_t> positive;     // N
  std::vector<std::int64_t> instance_id;  // N, -1 where negative

  std::size_t positives() const;
};

// Center-patch assignment; on collision the larger box wins, equal areas go
// to the lower instance id.
DetTargets encode_targets(std::span<const GtBox> boxes, int grid_h, int grid_w, int num_classes,
                          int patch = kPatchSize);

// Checkpoint: "PPCKPT\0\0" | u32 version | u32 json_len | config JSON |
// u32 n_params | per param: u32 name_len, name, u64 count, f64 values |
// 32-byte SHA-256 of the preceding bytes.
void save_checkpoint(const PatchModel& model, const std::filesystem::path& path);
PatchModel load_checkpoint(const std::filesystem::path& path);

}  // namespace patchprobe
