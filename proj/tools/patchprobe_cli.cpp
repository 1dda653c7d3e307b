// patchprobe command line: normalize, extract, train, predict, eval, cluster,
// viz pca, viz overlay, report.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "patchprobe/archive.hpp"
#include "patchprobe/cluster.hpp"
#include "patchprobe/dataset.hpp"
#include "patchprobe/decoders.hpp"
#include "patchprobe/encoder.hpp"
#include "patchprobe/errors.hpp"
#include "patchprobe/metrics.hpp"
#include "patchprobe/pca.hpp"
#include "patchprobe/postprocess.hpp"
#include "patchprobe/render.hpp"
#include "patchprobe/tables.hpp"
#include "patchprobe/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace patchprobe;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

fs::path mask_path(const fs::path& dir, std::int64_t id) { return dir / (std::to_string(id) + ".png"); }

std::vector<std::int64_t> select_images(const AnnotationStore& store, const std::string& split) {
  if (split.empty() || split == "all" || store.splits.empty()) return store.image_ids();
  return store.image_ids(parse_split(split));
}

std::vector<std::int64_t> parse_id_list(const std::string& text) {
  std::vector<std::int64_t> ids;
  std::string token;
  std::istringstream in(fs::exists(text) ? std::string() : text);
  if (fs::exists(text)) {
    std::ifstream f(text);
    std::ostringstream all;
    all << f.rdbuf();
    in.str(all.str());
  }
  while (in >> std::ws && std::getline(in, token, ',')) {
    std::istringstream words(token);
    std::string w;
    while (words >> w) ids.push_back(std::stoll(w));
  }
  return ids;
}

// ---------------------------------------------------------------- normalize

struct NormalizeArgs {
  std::string src, dst, ratios = "7:2:1", splits;
  std::uint64_t seed = 42;
};

int run_normalize(const NormalizeArgs& a) {
  SplitPolicy policy = parse_ratios(a.ratios);
  policy.seed = a.seed;
  if (!a.splits.empty()) {
    policy.mode = SplitPolicy::Mode::Predefined;
    for (const auto& [key, value] : read_json(a.splits).items()) {
      policy.predefined[std::stoll(key)] = parse_split(value.get<std::string>());
    }
  }
  AnnotationStore store = split_dataset(derive_bboxes(load_source(a.src)), policy);
  for (const auto& v : validate(store)) {
    throw SchemaError(v.record_kind, v.record_id, v.message);
  }
  write_coco(store, a.dst);
  const SplitSizes n = count_splits(store);
  std::cout << "images " << store.images.size() << "  instances " << store.instances.size() << "  train "
            << n.train << "  val " << n.val << "  test " << n.test << '\n';
  return 0;
}

// ------------------------------------------------------------------ extract

struct ExtractArgs {
  std::string coco, images, encoder = "mock", out, split;
  bool flip = false;
  int target_long_side = 640;
};

int run_extract(const ExtractArgs& a) {
  const AnnotationStore store = load_source(a.coco);
  const Variant variant = parse_variant(a.encoder);
  auto backend = default_registry().create(variant);
  const EncoderSpec spec = default_registry().spec(variant);
  PreprocessConfig pre;
  pre.target_long_side = a.target_long_side;

  ArchiveWriter writer(a.out, ArchiveHeader{spec, a.split.empty() ? "all" : a.split});
  std::size_t n = 0;
  for (std::int64_t id : select_images(store, a.split)) {
    const ImageRecord* rec = store.find_image(id);
    const RgbImage image = read_rgb(fs::path(a.images) / rec->file_name);
    writer.add(extract(*backend, preprocess(image, pre), id, image.width, image.height));
    if (a.flip) {
      PatchFeatureMap f = extract(*backend, preprocess(flip_horizontal(image), pre), id, image.width, image.height);
      f.flipped = true;
      writer.add(f);
    }
    ++n;
  }
  writer.finalize();
  std::cout << "encoded " << n << " images with " << spec.name << " (" << spec.embed_dim << " channels)\n";
  return 0;
}

// -------------------------------------------------------------------- train

struct TrainArgs {
  std::string archive, val_archive, coco, task = "seg", out, loss_csv;
  TrainConfig cfg;
};

int run_train(TrainArgs a) {
  const AnnotationStore store = load_source(a.coco);
  const ArchiveReader archive(a.archive);
  const FeatureSet train_set = load_feature_set(archive, store);
  std::optional<Split> split;
  const std::string& hs = archive.header().split;
  if (hs == "train" || hs == "val" || hs == "test") split = parse_split(hs);

  std::optional<FeatureSet> val_set;
  if (!a.val_archive.empty()) {
    val_set = load_feature_set(ArchiveReader(a.val_archive), store);
  }
  const Task task = parse_task(a.task);
  const TrainResult r = train(train_set, task, a.cfg, val_set ? &*val_set : nullptr, split);
  save_checkpoint(r.model, a.out);
  write_loss_curve(r.curve, a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv);
  const EpochRecord& last = r.curve.back();
  std::cout << "steps " << r.steps << "  final loss " << last.train_loss << "  kept epoch " << r.best_epoch << '\n';
  return 0;
}

// ------------------------------------------------------------------ predict

struct PredictArgs {
  std::string archive, ckpt, out, coco;
  PostprocessConfig post;
};

int run_predict(const PredictArgs& a) {
  a.post.validate();
  const PatchModel model = load_checkpoint(a.ckpt);
  const ArchiveReader archive(a.archive);
  std::vector<Category> categories;
  if (!a.coco.empty()) categories = load_source(a.coco).categories;

  std::size_t n = 0;
  if (model.config().task == Task::Det) {
    std::vector<DetPrediction> preds;
    for (const auto& e : archive.entries()) {
      if (e.flipped) continue;
      auto p = predict_detections(model, archive.get(e.image_id), categories, a.post);
      preds.insert(preds.end(), p.begin(), p.end());
      ++n;
    }
    write_json(a.out, predictions_to_json(preds));
    std::cout << preds.size() << " detections over " << n << " images\n";
  } else {
    fs::create_directories(a.out);
    for (const auto& e : archive.entries()) {
      if (e.flipped) continue;
      write_mask_png(mask_path(a.out, e.image_id), predict_mask(model, archive.get(e.image_id), a.post.mask_threshold));
      ++n;
    }
    std::cout << n << " masks written to " << a.out << '\n';
  }
  return 0;
}

// --------------------------------------------------------------------- eval

struct EvalArgs {
  std::string task = "seg", pred, gt, out, split, dataset, model;
  double conf = 0.25;
};

SegScores eval_masks(const AnnotationStore& gt, const fs::path& dir, const std::vector<std::int64_t>& ids) {
  SegConfusion confusion(1);
  for (std::int64_t id : ids) {
    const ImageRecord* rec = gt.find_image(id);
    const fs::path p = mask_path(dir, id);
    if (!fs::exists(p)) throw NotFoundError("no predicted mask for image " + std::to_string(id));
    confusion.add(read_mask(p), foreground_mask(gt, id, rec->width, rec->height));
  }
  return seg_scores(confusion);
}

int run_eval(const EvalArgs& a) {
  const AnnotationStore gt = derive_bboxes(load_source(a.gt));
  const auto ids = select_images(gt, a.split);
  MetricReport report;
  if (parse_task(a.task) == Task::Seg) {
    report = seg_report(eval_masks(gt, a.pred, ids), a.dataset, a.model);
  } else {
    const auto preds = predictions_from_json(read_json(a.pred));
    report = det_report(map_report(preds, gt, a.conf, ids), a.dataset, a.model);
  }
  write_json(a.out, report_to_json(report));
  std::cout << format_text(build_table({report}));
  return 0;
}

// ------------------------------------------------------------------ cluster

struct ClusterArgs {
  std::string fg_dir, fruit_pred, gt, out;
  VerifyConfig verify;
  double fruit_conf = 0.0;
};

json box_json(const Box& b) { return json::array({b.x, b.y, b.w, b.h}); }

int run_cluster(const ClusterArgs& a) {
  a.verify.validate();
  const AnnotationStore gt = derive_bboxes(load_source(a.gt));
  if (gt.categories.empty()) throw SchemaError("cluster annotations have no category");
  const std::int64_t cat = gt.categories.front().id;

  std::map<std::int64_t, std::vector<Box>> fruit_boxes;
  const bool from_detector = !a.fruit_pred.empty();
  if (from_detector) {
    for (const auto& p : predictions_from_json(read_json(a.fruit_pred))) {
      if (p.score >= a.fruit_conf) fruit_boxes[p.image_id].push_back(p.bbox);
    }
  }

  std::vector<DetPrediction> out_a, out_b;
  json per_image = json::array();
  for (std::int64_t id : gt.image_ids()) {
    const fs::path p = mask_path(a.fg_dir, id);
    if (!fs::exists(p)) throw NotFoundError("no foreground mask for image " + std::to_string(id));
    const BinaryMask fg = read_mask(p);
    const FruitEvidence ev = from_detector ? evidence_from_boxes(fruit_boxes[id]) : evidence_from_mask(fg);
    const PipelineOutput res = pipeline_A(fg, ev, a.verify);
    json proposals = json::array();
    for (const auto& pr : res.proposals) {
      out_b.push_back({id, cat, pr.roi, 1.0});
      proposals.push_back({{"roi", box_json(pr.roi)},
                           {"members", pr.members.size()},
                           {"compactness", pr.compactness},
                           {"connected", pr.connected},
                           {"verdict", pr.accepted ? "accepted" : "rejected:" + pr.reason}});
    }
    for (const Box& b : res.boxes) out_a.push_back({id, cat, b, 1.0});
    per_image.push_back({{"image_id", id}, {"proposals", proposals}});
  }
  const ABReport r = compare_AB(out_a, out_b, gt);
  const MetricReport ra = det_report(r.a, "Cluster", "Output A");
  const MetricReport rb = det_report(r.b, "Cluster", "Output B");
  write_json(a.out, {{"output_a", report_to_json(ra)},
                     {"output_b", report_to_json(rb)},
                     {"boxes_a", r.boxes_a},
                     {"boxes_b", r.boxes_b},
                     {"images", per_image}});
  std::cout << format_text(build_table({ra, rb}));
  return 0;
}

// ---------------------------------------------------------------------- viz

struct PcaArgs {
  std::string archive, images, out;
  int components = 3;
};

int run_viz_pca(const PcaArgs& a) {
  const ArchiveReader archive(a.archive);
  std::vector<PatchFeatureMap> maps;
  if (a.images.empty()) {
    for (const auto& e : archive.entries()) {
      if (!e.flipped) maps.push_back(archive.get(e.image_id));
    }
  } else {
    for (std::int64_t id : parse_id_list(a.images)) maps.push_back(archive.get(id));
  }
  PcaModel model;
  try {
    model = fit_pca(maps, a.components);
  } catch (const ZeroVarianceError& e) {
    std::cerr << "warning: " << e.what() << "; rendering gray\n";
    model = e.fallback();
  }
  fs::create_directories(a.out);
  for (const auto& m : maps) write_png(fs::path(a.out) / ("pca_" + std::to_string(m.image_id) + ".png"), to_image(project_rgb(m, model)));
  json fractions = model.explained;
  write_json(fs::path(a.out) / "pca.json", {{"explained_variance", fractions}, {"patches_from", maps.size()}});
  std::cout << "explained variance:";
  for (double f : model.explained) std::cout << ' ' << f;
  std::cout << '\n';
  return 0;
}

struct OverlayArgs {
  std::string pred, gt, images, out, split;
  double conf = 0.25;
};

int run_viz_overlay(const OverlayArgs& a) {
  const AnnotationStore gt = derive_bboxes(load_source(a.gt));
  const bool mask_mode = fs::is_directory(a.pred);
  std::map<std::int64_t, std::vector<Box>> pred_boxes;
  if (!mask_mode) {
    for (const auto& p : predictions_from_json(read_json(a.pred))) {
      if (p.score >= a.conf) pred_boxes[p.image_id].push_back(p.bbox);
    }
  }
  fs::create_directories(a.out);
  std::size_t n = 0;
  for (std::int64_t id : select_images(gt, a.split)) {
    const ImageRecord* rec = gt.find_image(id);
    RgbImage image = a.images.empty() ? RgbImage(rec->width, rec->height)
                                      : read_rgb(fs::path(a.images) / rec->file_name);
    OverlayLayer pl, gl;
    if (mask_mode) {
      const fs::path p = mask_path(a.pred, id);
      pl.mask = fs::exists(p) ? read_mask(p) : BinaryMask(image.width, image.height);
      gl.mask = foreground_mask(gt, id, image.width, image.height);
    } else {
      pl.boxes = pred_boxes[id];
      for (const Instance* inst : gt.instances_of(id)) gl.boxes.push_back(*inst->bbox);
    }
    write_png(fs::path(a.out) / ("overlay_" + std::to_string(id) + ".png"), render_overlay(image, pl, gl));
    ++n;
  }
  std::cout << n << " overlays written to " << a.out << '\n';
  return 0;
}

// ------------------------------------------------------------------- report

int run_report(const std::string& in, const std::string& out) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<MetricReport> reports;
  for (const auto& f : files) reports.push_back(report_from_json(read_json(f)));
  if (reports.empty()) throw NotFoundError("no reports in " + in);
  emit_tables(reports, out, reports.front().task == "seg" ? "segmentation" : "detection");
  std::cout << format_text(build_table(reports));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"patchprobe: frozen patch-feature probing for segmentation and detection"};
  app.require_subcommand(1);

  NormalizeArgs na;
  auto* normalize = app.add_subcommand("normalize", "Convert annotations to COCO JSON with a split manifest");
  normalize->add_option("--src", na.src, "COCO file, directory, or mask layout")->required();
  normalize->add_option("--dst", na.dst, "Output COCO JSON")->required();
  normalize->add_option("--ratios", na.ratios, "train:val:test");
  normalize->add_option("--seed", na.seed);
  normalize->add_option("--splits", na.splits, "JSON map image id -> train|val|test");

  ExtractArgs ea;
  auto* extract_cmd = app.add_subcommand("extract", "Encode images into a feature archive");
  extract_cmd->add_option("--coco", ea.coco)->required();
  extract_cmd->add_option("--images", ea.images)->required();
  extract_cmd->add_option("--encoder", ea.encoder, "s, s+, b, l or mock");
  extract_cmd->add_option("--out", ea.out)->required();
  extract_cmd->add_flag("--flip-aug", ea.flip, "Also store horizontally flipped entries");
  extract_cmd->add_option("--target-long-side", ea.target_long_side);
  extract_cmd->add_option("--split", ea.split, "Only images of this split");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train the stem and one head on cached features");
  train_cmd->add_option("--archive", ta.archive)->required();
  train_cmd->add_option("--coco", ta.coco)->required();
  train_cmd->add_option("--task", ta.task)->check(CLI::IsMember({"seg", "det"}));
  train_cmd->add_option("--epochs", ta.cfg.epochs);
  train_cmd->add_option("--lr", ta.cfg.lr);
  train_cmd->add_option("--seed", ta.cfg.seed);
  train_cmd->add_option("--batch-size", ta.cfg.batch_size);
  train_cmd->add_flag("--flip-aug", ta.cfg.flip_aug);
  train_cmd->add_option("--val-archive", ta.val_archive, "Features of the validation split");
  train_cmd->add_option("--out", ta.out)->required();
  train_cmd->add_option("--loss-csv", ta.loss_csv, "Default: <out>.loss.csv");

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Run a checkpoint over an archive");
  predict->add_option("--archive", pa.archive)->required();
  predict->add_option("--ckpt", pa.ckpt)->required();
  predict->add_option("--conf", pa.post.conf_threshold);
  predict->add_option("--nms", pa.post.nms_threshold);
  predict->add_option("--max-det", pa.post.max_detections);
  predict->add_option("--mask-threshold", pa.post.mask_threshold);
  predict->add_option("--coco", pa.coco, "Category ids for detections");
  predict->add_option("--out", pa.out, "Results JSON (det) or mask directory (seg)")->required();

  EvalArgs va;
  auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
  eval->add_option("--task", va.task)->check(CLI::IsMember({"seg", "det"}));
  eval->add_option("--pred", va.pred, "Results JSON or mask directory")->required();
  eval->add_option("--gt", va.gt)->required();
  eval->add_option("--out", va.out)->required();
  eval->add_option("--split", va.split);
  eval->add_option("--conf", va.conf, "Score threshold for P/R/F1");
  eval->add_option("--dataset", va.dataset);
  eval->add_option("--model", va.model);

  ClusterArgs ca;
  auto* cluster = app.add_subcommand("cluster", "Cluster proposals with and without fruit-level verification");
  cluster->add_option("--fg-mask-dir", ca.fg_dir)->required();
  cluster->add_option("--fruit-pred", ca.fruit_pred, "Fruit detections; mask components when omitted");
  cluster->add_option("--fruit-conf", ca.fruit_conf);
  cluster->add_option("--gt", ca.gt)->required();
  cluster->add_option("--min-fruits", ca.verify.min_fruits);
  cluster->add_option("--compact", ca.verify.compactness);
  cluster->add_option("--rho", ca.verify.rho);
  cluster->add_option("--out", ca.out)->required();

  auto* viz = app.add_subcommand("viz", "Diagnostic figures");
  viz->require_subcommand(1);
  PcaArgs pca_args;
  auto* viz_pca = viz->add_subcommand("pca", "PCA color maps of patch features");
  viz_pca->add_option("--archive", pca_args.archive)->required();
  viz_pca->add_option("--images", pca_args.images, "Comma-separated ids or a file of ids");
  viz_pca->add_option("--components", pca_args.components);
  viz_pca->add_option("--out", pca_args.out)->required();
  OverlayArgs oa;
  auto* viz_overlay = viz->add_subcommand("overlay", "Prediction overlays");
  viz_overlay->add_option("--pred", oa.pred, "Results JSON or mask directory")->required();
  viz_overlay->add_option("--gt", oa.gt)->required();
  viz_overlay->add_option("--images", oa.images, "Image directory; black canvas when omitted");
  viz_overlay->add_option("--split", oa.split);
  viz_overlay->add_option("--conf", oa.conf);
  viz_overlay->add_option("--out", oa.out)->required();

  std::string report_in, report_out;
  auto* report = app.add_subcommand("report", "Tables from metric reports");
  report->add_option("--in", report_in)->required();
  report->add_option("--out", report_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*normalize) return run_normalize(na);
    if (*extract_cmd) return run_extract(ea);
    if (*train_cmd) return run_train(ta);
    if (*predict) return run_predict(pa);
    if (*eval) return run_eval(va);
    if (*cluster) return run_cluster(ca);
    if (*viz_pca) return run_viz_pca(pca_args);
    if (*viz_overlay) return run_viz_overlay(oa);
    if (*report) return run_report(report_in, report_out);
  } catch (const patchprobe::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
