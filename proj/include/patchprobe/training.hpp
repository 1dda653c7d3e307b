#pragma once
// Optimization of the stem and one task head on cached features, plus the
// per-image inference helpers shared by validation and the CLI.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "patchprobe/archive.hpp"
#include "patchprobe/dataset.hpp"
#include "patchprobe/decoders.hpp"
#include "patchprobe/losses.hpp"
#include "patchprobe/metrics.hpp"
#include "patchprobe/postprocess.hpp"

namespace patchprobe {

struct TrainConfig {
  int epochs = 50;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 8;
  std::uint64_t seed = 0;
  bool flip_aug = false;
  LossWeights weights;
  int adapted_dim = 256;
  int stem_layers = 2;
  SegHeadConfig seg;
  // Used by the detection validation metric.
  PostprocessConfig post;

  void validate() const;  // throws ConfigError
};

// Feature maps of one split with their annotations. Flipped entries are
// needed only when training with flip augmentation.
struct FeatureSet {
  std::vector<PatchFeatureMap> maps;
  const AnnotationStore* store = nullptr;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> val_metric;  // mIoU (seg) or mAP50 (det), percent
};

struct TrainResult {
  PatchModel model;  // best by validation metric, else the last
  int best_epoch = 0;
  std::size_t steps = 0;
  std::vector<EpochRecord> curve;
};

// One image's head input and targets (detection or mask, per task).
struct TrainSample {
  Tensor features;
  DetTargets det;
  BinaryMask mask;  // at 16 H_p x 16 W_p
};

// Forward and backward through stem and task head. Parameter gradients are
// accumulated (scaled by scale); returns the unscaled loss.
double accumulate_gradients(PatchModel& model, const TrainSample& sample, Task task, const LossWeights& w = {},
                            double scale = 1.0);

// Training images: the store's images in the given split, or every image
// when the store has no split assignment. Throws NotFoundError when one of
// them has no (unflipped, or flipped under flip_aug) feature entry.
TrainResult train(const FeatureSet& train_set, Task task, const TrainConfig& cfg,
                  const FeatureSet* val_set = nullptr, std::optional<Split> split = Split::Train);

FeatureSet load_feature_set(const ArchiveReader& archive, const AnnotationStore& store);

void write_loss_curve(const std::vector<EpochRecord>& curve, const std::filesystem::path& path);

// Category-index to id mapping follows store.categories order.
std::vector<GtBox> gt_boxes_for(const AnnotationStore& store, const PatchFeatureMap& map);

// Detections in original image coordinates.
std::vector<DetPrediction> predict_detections(const PatchModel& model, const PatchFeatureMap& map,
                                              const std::vector<Category>& categories,
                                              const PostprocessConfig& cfg = {});

// Binary mask at the original image resolution.
BinaryMask predict_mask(const PatchModel& model, const PatchFeatureMap& map, double threshold = 0.5);

}  // namespace patchprobe
