// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <Eigen/SVD>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "patchprobe/archive.hpp"
#include "patchprobe/cluster.hpp"
#include "patchprobe/errors.hpp"
#include "patchprobe/metrics.hpp"
#include "patchprobe/pca.hpp"
#include "patchprobe/postprocess.hpp"
#include "patchprobe/training.hpp"

using namespace patchprobe;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kOracleTol = 1e-9;
constexpr double kOracleSeconds = 30.0;
constexpr double kHandTol = 1e-9;
constexpr double kRoundTripPx = 1e-5;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr std::size_t kGradMaxParams = 1000;
constexpr double kSegOverfitMiou = 95.0;
constexpr std::size_t kSegOverfitSteps = 200;
constexpr double kDetOverfitMap50 = 90.0;
constexpr std::size_t kDetOverfitSteps = 500;
constexpr double kOverfitSeconds = 300.0;
constexpr double kDeterminismTol = 1e-9;
constexpr double kOrthoTol = 1e-6;
constexpr double kOneDimFraction = 0.99;

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double u(std::mt19937_64& rng, double lo, double hi) { return fixtures::uniform(rng, lo, hi); }
int ui(std::mt19937_64& rng, int lo, int hi) { return fixtures::uniform_int(rng, lo, hi); }

// ------------------------------------------------------------------ 1

Outcome metric_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    AnnotationStore store;
    store.images.push_back({1, "a.png", 128, 128});
    store.categories.push_back({1, "fruit"});
    oracles::ImageCase c;
    const int n_gt = ui(rng, 0, 4), n_pred = ui(rng, 0, 6);
    for (int g = 0; g < n_gt; ++g) {
      const Box b{u(rng, 0, 90), u(rng, 0, 90), u(rng, 6, 38), u(rng, 6, 38)};
      c.gts.push_back(b);
      Instance inst;
      inst.id = g + 1, inst.image_id = 1, inst.category_id = 1, inst.bbox = b;
      store.instances.push_back(inst);
    }
    std::vector<DetPrediction> preds;
    for (int p = 0; p < n_pred; ++p) {
      Box b{u(rng, 0, 90), u(rng, 0, 90), u(rng, 6, 38), u(rng, 6, 38)};
      if (n_gt > 0 && u(rng, 0, 1) < 0.7) {
        // shifted GT copy: IoU spread over the whole threshold ladder
        b = c.gts[ui(rng, 0, n_gt - 1)];
        b.x += u(rng, -0.4, 0.4) * b.w;
        b.y += u(rng, -0.2, 0.2) * b.h;
      }
      const double score = ui(rng, 1, 8) / 8.0;  // ties on purpose
      c.preds.push_back({b, score});
      preds.push_back({1, 1, b, score});
    }
    const DetScores got = map_report(preds, store);
    const double ref50 = oracles::average_precision({c}, 0.5);
    const double want50 = ref50 < 0 ? 100.0 : 100.0 * ref50;
    const double want = ref50 < 0 ? 100.0 : oracles::map_percent({c});
    worst = std::max({worst, std::abs(got.map50 - want50), std::abs(got.map - want)});
  }
  const double secs = seconds_since(t0);
  return {worst <= kOracleTol && secs < kOracleSeconds,
          "1000 instances, max |diff| " + fmt("%.3g", worst) + ", " + fmt("%.2f", secs) + " s"};
}

// ------------------------------------------------------------------ 2

Outcome hand_cases() {
  BinaryMask pred(6, 1), gt(6, 1);
  pred.data = {1, 1, 1, 1, 0, 0};
  gt.data = {1, 1, 1, 0, 1, 1};
  const SegScores s = seg_metrics(std::span(&pred, 1), std::span(&gt, 1));
  const std::string shown = fmt("%.3f", s.miou) + "/" + fmt("%.3f", s.dice) + "/" + fmt("%.3f", s.precision) + "/" +
                            fmt("%.3f", s.recall);
  bool ok = shown == "50.000/66.667/75.000/60.000";
  ok &= std::abs(s.miou - 50.0) < kHandTol && std::abs(s.dice - 200.0 / 3.0) < kHandTol &&
        std::abs(s.precision - 75.0) < kHandTol && std::abs(s.recall - 60.0) < kHandTol;

  AnnotationStore store;
  store.images.push_back({1, "a.png", 32, 32});
  store.categories.push_back({1, "fruit"});
  Instance inst;
  inst.id = 1, inst.image_id = 1, inst.category_id = 1, inst.bbox = Box{0, 0, 10, 10};
  store.instances.push_back(inst);
  const std::vector<DetPrediction> p{{1, 1, Box{0, 0, 6, 10}, 0.9}};
  const DetScores d = map_report(p, store);
  ok &= std::abs(box_iou(p[0].bbox, *inst.bbox) - 0.6) < 1e-15;
  ok &= std::abs(d.map50 - 100.0) < kHandTol && std::abs(d.map - 30.0) < kHandTol;
  return {ok, "seg " + shown + ", mAP50 " + fmt("%.3f", d.map50) + " mAP " + fmt("%.3f", d.map)};
}

// ------------------------------------------------------------------ 3

Outcome geometry_laws() {
  std::mt19937_64 rng(1003);
  double worst = 0.0;
  bool shapes = true;
  for (int trial = 0; trial < 500; ++trial) {
    const int gh = ui(rng, 1, 12), gw = ui(rng, 1, 12);
    const double W = gw * 16.0, H = gh * 16.0;
    const double w = u(rng, 1.0, W), h = u(rng, 1.0, H);
    const Box b{u(rng, 0, W - w), u(rng, 0, H - h), w, h};
    const PatchOffsets o = encode_box(b, gh, gw);
    const Box r = decode_offsets(o.row, o.col, o.tx, o.ty, o.tw, o.th);
    worst = std::max({worst, std::abs(r.x - b.x), std::abs(r.y - b.y), std::abs(r.w - b.w), std::abs(r.h - b.h)});

    PatchFeatureMap map = fixtures::random_map(rng, trial, 6, gh, gw);
    ModelConfig mc;
    mc.stem.input_dim = 6;
    mc.stem.adapted_dim = 8;
    mc.seg.widths = {4, 4, 4, 4, 4};
    mc.task = Task::Seg;
    const DenseMask m = PatchModel(mc, trial).segment(map);
    shapes &= m.height == gh * 16 && m.width == gw * 16 && m.probabilities.size() == std::size_t(gh * 16 * gw * 16);
    mc.task = Task::Det;
    const DetGrid g = PatchModel(mc, trial).detect(map);
    shapes &= decode_boxes(g).size() == std::size_t(gh * gw);
  }
  return {worst < kRoundTripPx && shapes,
          "500 grids, max round-trip error " + fmt("%.3g", worst) + " px, shapes " + (shapes ? "ok" : "WRONG")};
}

// ------------------------------------------------------------------ 4

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t largest = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const auto& r : {gradcheck::detection_loss_logits(seed), gradcheck::segmentation_loss_logits(seed),
                          gradcheck::model_gradients(Task::Det, seed), gradcheck::model_gradients(Task::Seg, seed)}) {
      worst = std::max(worst, r.max_rel_error);
      largest = std::max(largest, r.checked);
    }
  }
  const double secs = seconds_since(t0);
  return {worst < kGradRelTol && largest <= kGradMaxParams && secs < kGradSeconds,
          "max rel error " + fmt("%.3g", worst) + ", largest instance " + std::to_string(largest) + " params, " +
              fmt("%.2f", secs) + " s"};
}

// ------------------------------------------------------------------ 5

double train_miou(const PatchModel& model, const std::vector<PatchFeatureMap>& maps, const AnnotationStore& store) {
  SegConfusion c(1);
  for (const auto& m : maps) c.add(predict_mask(model, m), foreground_mask(store, m.image_id, m.original_w, m.original_h));
  return seg_scores(c).miou;
}

double train_map50(const PatchModel& model, const std::vector<PatchFeatureMap>& maps, const AnnotationStore& store) {
  std::vector<DetPrediction> preds;
  for (const auto& m : maps) {
    auto p = predict_detections(model, m, store.categories);
    preds.insert(preds.end(), p.begin(), p.end());
  }
  return map_report(preds, store).map50;
}

Outcome overfit() {
  const auto t0 = Clock::now();
  const auto scene = fixtures::make_blob_scene(10, 96, 7);
  const auto maps = fixtures::encode_scene(scene);
  const FeatureSet set{maps, &scene.store};
  TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.seed = 1;
  cfg.epochs = static_cast<int>(kSegOverfitSteps);  // one step per epoch
  const TrainResult seg = train(set, Task::Seg, cfg, &set);
  const double miou = train_miou(seg.model, maps, scene.store);
  cfg.epochs = static_cast<int>(kDetOverfitSteps);
  const TrainResult det = train(set, Task::Det, cfg, &set);
  const double map50 = train_map50(det.model, maps, scene.store);
  const double secs = seconds_since(t0);
  const bool ok = miou >= kSegOverfitMiou && seg.steps <= kSegOverfitSteps && map50 >= kDetOverfitMap50 &&
                  det.steps <= kDetOverfitSteps && secs < kOverfitSeconds;
  return {ok, "seg mIoU " + fmt("%.2f", miou) + " (" + std::to_string(seg.steps) + " steps), det mAP50 " +
                  fmt("%.2f", map50) + " (" + std::to_string(det.steps) + " steps), " + fmt("%.1f", secs) + " s"};
}

// ------------------------------------------------------------------ 6

std::vector<double> full_run(const fs::path& dir, const fixtures::BlobScene& scene) {
  write_archive(dir / "train.ppf", fixtures::encode_scene(scene, true), EncoderSpec{"mock", 16, 64, Variant::Mock},
                "train");
  const ArchiveReader archive(dir / "train.ppf");
  const FeatureSet set = load_feature_set(archive, scene.store);
  std::vector<PatchFeatureMap> plain;
  for (const auto& m : set.maps) {
    if (!m.flipped) plain.push_back(m);
  }
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 4;
  cfg.seed = 99;
  cfg.flip_aug = true;
  std::vector<double> out;
  const TrainResult seg = train(set, Task::Seg, cfg);
  SegConfusion c(1);
  for (const auto& m : plain) c.add(predict_mask(seg.model, m), foreground_mask(scene.store, m.image_id, m.original_w, m.original_h));
  const SegScores s = seg_scores(c);
  out.insert(out.end(), {s.miou, s.dice, s.precision, s.recall, seg.curve.back().train_loss});
  const TrainResult det = train(set, Task::Det, cfg);
  std::vector<DetPrediction> preds;
  for (const auto& m : plain) {
    auto p = predict_detections(det.model, m, scene.store.categories);
    preds.insert(preds.end(), p.begin(), p.end());
  }
  const DetScores d = map_report(preds, scene.store);
  out.insert(out.end(), {d.map50, d.map, d.precision, d.recall, d.f1, det.curve.back().train_loss});
  return out;
}

Outcome determinism() {
  const auto scene = fixtures::make_blob_scene(8, 64, 1006);
  fixtures::TempDir a, b;
  const auto ra = full_run(a.path(), scene);
  const auto rb = full_run(b.path(), scene);
  double worst = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) worst = std::max(worst, std::abs(ra[i] - rb[i]));
  return {ra.size() == rb.size() && worst <= kDeterminismTol,
          std::to_string(ra.size()) + " report values, max |diff| " + fmt("%.3g", worst)};
}

// ------------------------------------------------------------------ 7

Outcome nms_properties() {
  std::mt19937_64 rng(1007);
  std::size_t failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Detection> d;
    const int n = ui(rng, 0, 30);
    for (int i = 0; i < n; ++i) {
      d.push_back({Box{u(rng, 0, 80), u(rng, 0, 80), u(rng, 2, 40), u(rng, 2, 40)}, ui(rng, 0, 10) / 10.0,
                   ui(rng, 0, 2), std::size_t(i)});
    }
    const double thr = u(rng, 0.05, 0.95);
    const auto kept = nms(d, thr);
    const auto again = nms(kept, thr);
    bool ok = again.size() == kept.size();
    for (std::size_t i = 0; ok && i < kept.size(); ++i) ok = again[i].patch == kept[i].patch;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      for (std::size_t j = i + 1; j < kept.size(); ++j) {
        if (kept[i].class_index == kept[j].class_index && box_iou(kept[i].box, kept[j].box) > thr) ok = false;
      }
    }
    std::size_t prev = 0;
    for (double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const std::size_t k = nms(d, t).size();
      if (k < prev) ok = false;
      prev = k;
    }
    failures += !ok;
  }
  return {failures == 0, "1000 box sets, " + std::to_string(failures) + " violations"};
}

// ------------------------------------------------------------------ 8

struct ClusterLayout {
  BinaryMask foreground{256, 256};
  std::vector<Box> fruits;
  std::vector<Box> clusters;
};

void fill_box(BinaryMask& m, const Box& b) {
  for (int y = int(b.y); y < int(b.y2()); ++y) {
    for (int x = int(b.x); x < int(b.x2()); ++x) m.at(x, y) = 1;
  }
}

// Two packed fruit groups in the upper left and upper right quadrants and
// one isolated fruit in the bottom half.
ClusterLayout sample_layout(std::mt19937_64& rng) {
  ClusterLayout l;
  for (int group = 0; group < 2; ++group) {
    const int rows = ui(rng, 1, 3), cols = ui(rng, 2, 3);
    const int d = ui(rng, 16, 22);
    const int step = d - ui(rng, 2, 5);  // overlapping neighbours keep the region connected
    const int x0 = group * 128 + ui(rng, 4, 128 - 4 - cols * step - d);
    const int y0 = ui(rng, 4, 120 - rows * step - d);
    double cx0 = 1e9, cy0 = 1e9, cx1 = -1e9, cy1 = -1e9;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const Box f{double(x0 + c * step), double(y0 + r * step), double(d), double(d)};
        l.fruits.push_back(f);
        fill_box(l.foreground, f);
        cx0 = std::min(cx0, f.x), cy0 = std::min(cy0, f.y), cx1 = std::max(cx1, f.x2()), cy1 = std::max(cy1, f.y2());
      }
    }
    l.clusters.push_back({cx0, cy0, cx1 - cx0, cy1 - cy0});
  }
  const int d = ui(rng, 17, 24);
  const Box lone{double(ui(rng, 4, 256 - 4 - d)), double(ui(rng, 150, 256 - 4 - d)), double(d), double(d)};
  l.fruits.push_back(lone);
  fill_box(l.foreground, lone);
  return l;
}

Outcome cluster_fixture() {
  std::mt19937_64 rng(1008);
  int precision_ok = 0;
  std::size_t singles = 0, singles_rejected = 0;
  double sum_a = 0.0, sum_b = 0.0;
  const VerifyConfig cfg{2, 0.6, 2.0};
  for (int layout = 0; layout < 100; ++layout) {
    const ClusterLayout l = sample_layout(rng);
    AnnotationStore gt;
    gt.images.push_back({1, "scene.png", 256, 256});
    gt.categories.push_back({1, "cluster"});
    for (std::size_t i = 0; i < l.clusters.size(); ++i) {
      Instance c;
      c.id = std::int64_t(i) + 1, c.image_id = 1, c.category_id = 1, c.bbox = l.clusters[i];
      gt.instances.push_back(c);
    }
    const PipelineOutput a = pipeline_A(l.foreground, evidence_from_boxes(l.fruits), cfg);
    std::vector<DetPrediction> out_a, out_b;
    for (const Box& b : a.boxes) out_a.push_back({1, 1, b, 1.0});
    for (const Box& b : pipeline_B(l.foreground)) out_b.push_back({1, 1, b, 1.0});
    const ABReport r = compare_AB(out_a, out_b, gt);
    precision_ok += r.a.precision >= r.b.precision;
    sum_a += r.a.precision;
    sum_b += r.b.precision;
    for (const auto& p : a.proposals) {
      if (p.members.size() == 1) {
        ++singles;
        singles_rejected += !p.accepted;
      }
    }
  }
  return {precision_ok == 100 && singles > 0 && singles_rejected == singles,
          std::to_string(precision_ok) + "/100 layouts with P(A) >= P(B) (mean " + fmt("%.1f", sum_a / 100) + " vs " +
              fmt("%.1f", sum_b / 100) + "), single-fruit proposals rejected " + std::to_string(singles_rejected) +
              "/" + std::to_string(singles)};
}

// ------------------------------------------------------------------ 9

Outcome archive_integrity() {
  std::mt19937_64 rng(1009);
  fixtures::TempDir dir;
  std::vector<PatchFeatureMap> maps;
  for (int i = 0; i < 100; ++i) {
    auto m = fixtures::random_map(rng, i + 1, 24, ui(rng, 1, 8), ui(rng, 1, 8));
    m.flipped = i % 3 == 0;
    // raw bit patterns, including denormals, signed zeros and large magnitudes
    for (float& v : m.data) {
      if (u(rng, 0, 1) < 0.05) {
        std::uint32_t bits = static_cast<std::uint32_t>(rng());
        if (((bits >> 23) & 0xFF) == 0xFF) bits &= ~(1u << 30);  // keep finite
        std::memcpy(&v, &bits, 4);
      }
    }
    maps.push_back(std::move(m));
  }
  const EncoderSpec spec{"mock", 16, 24, Variant::Mock};
  write_archive(dir / "a.ppf", maps, spec, "train");
  const auto back = read_archive(dir / "a.ppf");
  bool exact = back.size() == maps.size();
  for (std::size_t i = 0; exact && i < maps.size(); ++i) {
    exact = back[i].image_id == maps[i].image_id && back[i].flipped == maps[i].flipped &&
            back[i].data.size() == maps[i].data.size() &&
            std::memcmp(back[i].data.data(), maps[i].data.data(), maps[i].data.size() * 4) == 0;
  }

  std::ifstream in(dir / "a.ppf", std::ios::binary);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  std::size_t trials = 0, detected = 0;
  auto try_bytes = [&](const std::vector<char>& b) {
    std::ofstream(dir / "bad.ppf", std::ios::binary).write(b.data(), std::streamsize(b.size()));
    ++trials;
    try {
      ArchiveReader r(dir / "bad.ppf");
    } catch (const CorruptArchiveError&) {
      ++detected;
    }
  };
  for (int t = 0; t < 300; ++t) {
    auto b = bytes;
    b[std::size_t(ui(rng, 0, int(b.size()) - 1))] ^= static_cast<char>(ui(rng, 1, 255));
    try_bytes(b);
  }
  for (std::size_t cut : {std::size_t(0), std::size_t(7), bytes.size() / 2, bytes.size() - 1}) {
    try_bytes(std::vector<char>(bytes.begin(), bytes.begin() + std::ptrdiff_t(cut)));
  }
  return {exact && detected == trials, std::string("100 maps ") + (exact ? "bit-exact" : "MISMATCH") +
                                           ", corruption detected " + std::to_string(detected) + "/" +
                                           std::to_string(trials)};
}

// ------------------------------------------------------------------ 10

Outcome pca_correctness() {
  std::mt19937_64 rng(1010);
  std::normal_distribution<double> g;
  double ortho = 0.0;
  bool sorted = true;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<PatchFeatureMap> maps;
    for (int i = 0; i < 3; ++i) maps.push_back(fixtures::random_map(rng, i, 10, 5, 6));
    const PcaModel m = fit_pca(maps, 5);
    ortho = std::max(ortho, (m.components * m.components.transpose() - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff());
    for (std::size_t k = 1; k < m.explained.size(); ++k) sorted &= m.explained[k - 1] >= m.explained[k];
  }

  // Patch vectors on a line plus small isotropic noise.
  const int C = 16;
  Eigen::VectorXd dir(C);
  for (int c = 0; c < C; ++c) dir[c] = g(rng);
  dir.normalize();
  PatchFeatureMap map;
  map.channels = C, map.grid_h = 12, map.grid_w = 12, map.image_h = map.image_w = 192;
  map.data.resize(std::size_t(C) * 144);
  Eigen::MatrixXd rows(144, C);
  for (int p = 0; p < 144; ++p) {
    const double t = 4.0 * g(rng);
    for (int c = 0; c < C; ++c) {
      const float v = static_cast<float>(t * dir[c] + 0.02 * g(rng));
      map.data[std::size_t(c) * 144 + p] = v;
      rows(p, c) = v;
    }
  }
  const PcaModel m = fit_pca(std::span(&map, 1), 3);
  // Oracle: singular values of the centered data.
  const Eigen::MatrixXd centered = rows.rowwise() - rows.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd s2 = svd.singularValues().array().square();
  const double oracle_fraction = s2[0] / s2.sum();
  const double align = std::abs(m.components.row(0).dot(svd.matrixV().col(0)));
  const bool ok = ortho < kOrthoTol && sorted && m.explained[0] > kOneDimFraction &&
                  std::abs(m.explained[0] - oracle_fraction) < 1e-9 && align > 1.0 - 1e-9;
  return {ok, "max |QQ^T - I| " + fmt("%.3g", ortho) + ", sorted " + (sorted ? "yes" : "NO") + ", 1-D fraction " +
                  fmt("%.5f", m.explained[0]) + " (oracle " + fmt("%.5f", oracle_fraction) + ")"};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"metric oracle equivalence", metric_oracle},
      {"hand-computed metric cases", hand_cases},
      {"geometry laws", geometry_laws},
      {"gradient checks", gradient_checks},
      {"overfit fixture", overfit},
      {"pipeline determinism", determinism},
      {"NMS/postprocess properties", nms_properties},
      {"cluster pipeline fixture", cluster_fixture},
      {"archive integrity", archive_integrity},
      {"PCA correctness", pca_correctness},
  };
  int failed = 0;
  int index = 0;
  for (const auto& [name, check] : criteria) {
    ++index;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << index << " " << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
