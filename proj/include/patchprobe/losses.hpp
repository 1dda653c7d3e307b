#pragma once

#include "patchprobe/decoders.hpp"
#include "patchprobe/image.hpp"

namespace patchprobe {

struct LossWeights {
  double objectness = 1.0;
  double classification = 1.0;
  double box = 1.0;
  double seg_bce = 1.0;
  double seg_dice = 1.0;
};

struct DetLoss {
  double total = 0.0;
  double objectness = 0.0;      // mean BCE over all patches
  double classification = 0.0; // mean over positives of summed per-class BCE
  double box = 0.0;             // mean over positives of summed smooth-L1
  Tensor grad_objectness;       // d total / d logits, same shapes as the grid
  Tensor grad_class;
  Tensor grad_offsets;
};

// Class and box terms are exactly 0 when there are no positives.
DetLoss loss_detection(const DetGrid& pred, const DetTargets& targets, const LossWeights& w = {});

struct SegLoss {
  double total = 0.0;
  double bce = 0.0;   // mean over pixels
  double dice = 0.0;  // 1 - soft Dice with +1 smoothing
  Tensor grad_logits; // (1, H, W)
};

SegLoss loss_segmentation(const DenseMask& pred, const BinaryMask& gt, const LossWeights& w = {});

// Numerically stable BCE on a logit and its derivative.
double bce_with_logits(double logit, double target);
double smooth_l1(double diff);

}  // namespace patchprobe
