#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "patchprobe/decoders.hpp"
#include "patchprobe/errors.hpp"

using namespace patchprobe;

namespace {

ModelConfig small_config(Task task, int input_dim, int adapted = 16) {
  ModelConfig c;
  c.task = task;
  c.stem.input_dim = input_dim;
  c.stem.adapted_dim = adapted;
  c.seg.widths = {4, 4, 3, 3, 2};
  return c;
}

DetGrid grid_with(int gh, int gw, double tx, double ty, double tw, double th) {
  DetGrid g;
  g.grid_h = gh;
  g.grid_w = gw;
  g.objectness_logits = Tensor(1, gh, gw, 0.0);
  g.class_logits = Tensor(1, gh, gw, 0.0);
  g.offsets = Tensor(4, gh, gw);
  for (int r = 0; r < gh; ++r) {
    for (int c = 0; c < gw; ++c) {
      g.offsets.at(0, r, c) = tx;
      g.offsets.at(1, r, c) = ty;
      g.offsets.at(2, r, c) = tw;
      g.offsets.at(3, r, c) = th;
    }
  }
  return g;
}

}  // namespace

TEST(Stem, PreservesGridAndIsDeterministic) {
  std::mt19937_64 rng(1);
  const PatchModel model(small_config(Task::Det, 12, 256), 3);
  const PatchFeatureMap m = fixtures::random_map(rng, 1, 12, 30, 40);
  const Tensor out = model.stem().forward(to_tensor(m));
  EXPECT_EQ(out.c, 256);
  EXPECT_EQ(out.h, 30);
  EXPECT_EQ(out.w, 40);
  EXPECT_EQ(out, model.stem().forward(to_tensor(m)));
  for (double v : out.v) EXPECT_TRUE(std::isfinite(v));
}

TEST(Stem, ZeroInputWithZeroFinalLayerGivesZero) {
  PatchModel model(small_config(Task::Det, 6), 4);
  auto& last = model.stem().layers().back();
  std::fill(last.weight().value.begin(), last.weight().value.end(), 0.0);
  std::fill(last.bias().value.begin(), last.bias().value.end(), 0.0);
  const Tensor out = model.stem().forward(Tensor(6, 3, 5, 0.0));
  for (double v : out.v) EXPECT_EQ(v, 0.0);
}

TEST(DetHead, ShapesAndSaturation) {
  std::mt19937_64 rng(2);
  DetHead head(8, 1, rng);
  const DetGrid g = head.forward(Tensor(8, 30, 40, 0.1));
  EXPECT_EQ(g.objectness_logits.c, 1);
  EXPECT_EQ(g.class_logits.c, 1);
  EXPECT_EQ(g.offsets.c, 4);
  EXPECT_EQ(g.offsets.h, 30);
  EXPECT_EQ(g.offsets.w, 40);
  DetGrid low = g;
  std::fill(low.objectness_logits.v.begin(), low.objectness_logits.v.end(), -50.0);
  for (int r = 0; r < 30; ++r) {
    for (int c = 0; c < 40; ++c) EXPECT_LT(low.objectness(r, c), 0.001);
  }
  EXPECT_EQ(head.forward(Tensor(8, 30, 40, 0.1)).offsets, g.offsets);
}

TEST(DecodeBoxes, AnchorIdentityAndOffsets) {
  auto d = decode_boxes(grid_with(2, 2, 0, 0, 0, 0));
  EXPECT_EQ(d[0].box, (Box{0, 0, 16, 16}));
  d = decode_boxes(grid_with(3, 3, 0.5, 0, std::log(2.0), 0));
  EXPECT_DOUBLE_EQ(d[0].box.center_x(), 16.0);
  EXPECT_DOUBLE_EQ(d[0].box.center_y(), 8.0);
  EXPECT_DOUBLE_EQ(d[0].box.w, 32.0);
  EXPECT_DOUBLE_EQ(d[0].box.h, 16.0);
}

TEST(DecodeBoxes, HugeWidthIsClippedToImage) {
  for (const auto& d : decode_boxes(grid_with(30, 40, 0, 0, 20.0, 0))) {
    EXPECT_EQ(d.box.x, 0.0);
    EXPECT_EQ(d.box.w, 640.0);
    EXPECT_LE(d.box.y2(), 480.0);
  }
}

TEST(DecodeBoxes, ScoreIsObjectnessTimesBestClass) {
  DetGrid g = grid_with(1, 2, 0, 0, 0, 0);
  g.num_classes = 2;
  g.class_logits = Tensor(2, 1, 2, 0.0);
  g.class_logits.at(1, 0, 1) = 2.0;
  g.objectness_logits.at(0, 0, 1) = 1.0;
  const auto d = decode_boxes(g);
  EXPECT_EQ(d[1].class_index, 1);
  EXPECT_DOUBLE_EQ(d[1].score, sigmoid(1.0) * sigmoid(2.0));
  EXPECT_DOUBLE_EQ(d[0].score, 0.25);
}

TEST(EncodeTargets, Examples) {
  const GtBox a{Box{0, 0, 16, 16}, 0, 1};
  auto t = encode_targets(std::span(&a, 1), 2, 3, 1);
  EXPECT_EQ(t.positive[0], 1);
  EXPECT_EQ(t.positives(), 1u);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(t.offsets[k * 6], 0.0);

  // Center (16, 8) sits on the patch boundary and belongs to column 1.
  const auto o = encode_box(Box{0, 0, 32, 16}, 2, 3);
  EXPECT_EQ(o.row, 0);
  EXPECT_EQ(o.col, 1);
  EXPECT_DOUBLE_EQ(o.tx, -0.5);
  EXPECT_DOUBLE_EQ(o.ty, 0.0);
  EXPECT_DOUBLE_EQ(o.tw, std::log(2.0));
  EXPECT_DOUBLE_EQ(o.th, 0.0);
}

TEST(EncodeTargets, LargerBoxWinsCollisionTiesToLowerId) {
  const std::vector<GtBox> boxes{{Box{3, 3, 10, 10}, 0, 5}, {Box{-2, -2, 20, 20}, 0, 9}};
  const auto t = encode_targets(boxes, 2, 2, 1);
  EXPECT_EQ(t.instance_id[0], 9);
  EXPECT_EQ(t.positives(), 1u);
  const std::vector<GtBox> tie{{Box{2, 2, 10, 10}, 0, 7}, {Box{4, 4, 10, 10}, 0, 3}};
  EXPECT_EQ(encode_targets(tie, 2, 2, 1).instance_id[0], 3);
}

TEST(EncodeTargets, FlipMirrorsTargets) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int gh = fixtures::uniform_int(rng, 1, 8), gw = fixtures::uniform_int(rng, 1, 8);
    const double W = gw * 16.0;
    std::vector<GtBox> plain, mirrored;
    const int n = fixtures::uniform_int(rng, 1, 4);
    for (int i = 0; i < n; ++i) {
      // Centers strictly inside a patch so the floor rule is mirror-symmetric.
      const int col = fixtures::uniform_int(rng, 0, gw - 1), row = fixtures::uniform_int(rng, 0, gh - 1);
      const double cx = (col + fixtures::uniform(rng, 0.05, 0.95)) * 16, cy = (row + fixtures::uniform(rng, 0.05, 0.95)) * 16;
      const double w = fixtures::uniform(rng, 4, 40), h = fixtures::uniform(rng, 4, 40);
      const Box b{cx - w / 2, cy - h / 2, w, h};
      plain.push_back({b, 0, i});
      mirrored.push_back({flip_box(b, W), 0, i});
    }
    const auto a = encode_targets(plain, gh, gw, 1), f = encode_targets(mirrored, gh, gw, 1);
    const std::size_t N = static_cast<std::size_t>(gh) * gw;
    for (int r = 0; r < gh; ++r) {
      for (int c = 0; c < gw; ++c) {
        const std::size_t p = static_cast<std::size_t>(r) * gw + c, q = static_cast<std::size_t>(r) * gw + (gw - 1 - c);
        ASSERT_EQ(a.positive[p], f.positive[q]);
        EXPECT_EQ(a.instance_id[p], f.instance_id[q]);
        if (!a.positive[p]) continue;
        EXPECT_NEAR(a.offsets[p], -f.offsets[q], 1e-12);
        for (int k = 1; k < 4; ++k) EXPECT_NEAR(a.offsets[k * N + p], f.offsets[k * N + q], 1e-12);
      }
    }
  }
}

TEST(EncodeDecode, RoundTripInsidePatches) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    const int gh = fixtures::uniform_int(rng, 1, 40), gw = fixtures::uniform_int(rng, 1, 40);
    const double cx = fixtures::uniform(rng, 0.01, gw * 16 - 0.01), cy = fixtures::uniform(rng, 0.01, gh * 16 - 0.01);
    const double w = fixtures::uniform(rng, 1, 200), h = fixtures::uniform(rng, 1, 200);
    const Box b{cx - w / 2, cy - h / 2, w, h};
    const auto o = encode_box(b, gh, gw);
    const Box d = decode_offsets(o.row, o.col, o.tx, o.ty, o.tw, o.th);
    EXPECT_NEAR(d.x, b.x, 1e-5);
    EXPECT_NEAR(d.y, b.y, 1e-5);
    EXPECT_NEAR(d.w, b.w, 1e-5);
    EXPECT_NEAR(d.h, b.h, 1e-5);
  }
}

TEST(SegHead, OutputResolutionIsSixteenTimesGrid) {
  std::mt19937_64 rng(5);
  const PatchModel model(small_config(Task::Seg, 5), 6);
  for (auto [gh, gw] : {std::pair{30, 40}, std::pair{1, 1}, std::pair{3, 7}}) {
    const DenseMask m = model.segment(fixtures::random_map(rng, 1, 5, gh, gw));
    EXPECT_EQ(m.height, gh * 16);
    EXPECT_EQ(m.width, gw * 16);
    for (double p : m.probabilities) {
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
    }
  }
}

TEST(SegHead, ConstantInputGivesConstantOutput) {
  std::mt19937_64 rng(7);
  PatchModel model(small_config(Task::Seg, 5), 8);
  // Make the refinement path active; the default final layer starts at zero.
  for (Param* p : model.parameters()) {
    for (double& v : p->value) v = fixtures::uniform(rng, -0.5, 0.5);
  }
  PatchFeatureMap m = fixtures::random_map(rng, 1, 5, 4, 6);
  for (int c = 0; c < 5; ++c) {
    for (int i = 0; i < 24; ++i) m.data[c * 24 + i] = 0.3f * (c + 1);
  }
  const DenseMask out = model.segment(m);
  double lo = 1e9, hi = -1e9;
  for (double v : out.logits) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  // Replicate padding: the measured spatial deviation is exactly zero.
  EXPECT_EQ(hi - lo, 0.0);
  EXPECT_EQ(out.logits, model.segment(m).logits);
}

TEST(Model, RawHypothesisCountIsGridSize) {
  std::mt19937_64 rng(9);
  const PatchModel model(small_config(Task::Det, 4), 10);
  for (int trial = 0; trial < 20; ++trial) {
    const int gh = fixtures::uniform_int(rng, 1, 12), gw = fixtures::uniform_int(rng, 1, 12);
    EXPECT_EQ(decode_boxes(model.detect(fixtures::random_map(rng, 1, 4, gh, gw))).size(), std::size_t(gh * gw));
  }
}

TEST(Model, TaskMismatchIsAnError) {
  std::mt19937_64 rng(11);
  const PatchModel det(small_config(Task::Det, 4), 1);
  EXPECT_THROW(det.segment(fixtures::random_map(rng, 1, 4, 2, 2)), ConfigError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  fixtures::TempDir dir;
  std::mt19937_64 rng(12);
  const PatchModel model(small_config(Task::Seg, 5), 13);
  save_checkpoint(model, dir / "m.ckpt");
  const PatchModel back = load_checkpoint(dir / "m.ckpt");
  const auto a = model.parameters(), b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_EQ(a[i]->value, b[i]->value);
  }
  const PatchFeatureMap m = fixtures::random_map(rng, 1, 5, 2, 3);
  EXPECT_EQ(model.segment(m).logits, back.segment(m).logits);

  std::fstream f(dir / "m.ckpt", std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(40);
  const char byte = static_cast<char>(f.get() ^ 0x10);
  f.seekp(40);
  f.put(byte);
  f.close();
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), CorruptArchiveError);
}
