#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "wccn/cam.hpp"
#include "wccn/cascade.hpp"
#include "wccn/data.hpp"
#include "wccn/eval.hpp"
#include "wccn/proposals.hpp"
#include "wccn/serialize.hpp"
#include "wccn/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace wccn;

namespace {

constexpr const char* kCliVersion = "1.0.0";

void apply_threads() {
  int threads = 1;
  if (const char* env = std::getenv("WCCN_THREADS")) {
    threads = std::atoi(env);
    if (threads < 1) threads = 1;
  }
#ifdef _OPENMP
  omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const json& resolved, std::uint64_t seed, double wall_seconds) {
  if (out_dir.empty()) return;
  fs::create_directories(out_dir);
  json m = {{"command", command},
            {"config", resolved},
            {"seed", seed},
            {"versions",
             {{"cli", kCliVersion}, {"checkpoint_format", 1}, {"tensor_format", 1}}},
            {"wall_seconds", wall_seconds}};
  std::ofstream(fs::path(out_dir) / "run_manifest.json") << m.dump(2) << "\n";
}

// Merges a JSON config file into CLI defaults before flags are parsed, giving
// the chain: built-in defaults < config file < explicit flags.
json load_config_file(int argc, char** argv) {
  for (int i = 1; i < argc - 1; ++i)
    if (std::string(argv[i]) == "--config") {
      std::ifstream in(argv[i + 1]);
      if (!in) throw std::runtime_error(std::string("cannot open config: ") + argv[i + 1]);
      json j;
      in >> j;
      return j;
    }
  return json::object();
}

template <typename T>
void cfg_get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::vector<ProposalSet> proposals_for(const Dataset& ds, const std::string& path) {
  if (!path.empty()) return load_proposals(path);
  std::vector<ProposalSet> out;
  ProposalConfig cfg;
  for (const Sample& s : ds.samples) out.push_back(generate_proposals(s, cfg));
  return out;
}

const ProposalSet& find_set(const std::vector<ProposalSet>& sets, int id) {
  for (const auto& p : sets)
    if (p.image_id == id) return p;
  throw std::runtime_error("no proposals for image " + std::to_string(id));
}

Stages parse_stages(const std::string& s) {
  if (s == "two") return Stages::Two;
  if (s == "three") return Stages::Three;
  throw CLI::ValidationError("--stages", "must be 'two' or 'three'");
}

GlobalPool parse_pooling(const std::string& s) {
  if (s == "gap") return GlobalPool::GAP;
  if (s == "gmp") return GlobalPool::GMP;
  throw CLI::ValidationError("--pooling", "must be 'gap' or 'gmp'");
}

ApMode parse_ap_mode(const std::string& s) {
  if (s == "allpoint") return ApMode::AllPoint;
  if (s == "voc11") return ApMode::Voc11;
  throw CLI::ValidationError("--ap-mode", "must be 'allpoint' or 'voc11'");
}

struct TrainFlags {
  std::string data, out, resume, proposals;
  std::string stages = "two", pooling = "gap";
  int epochs = 30, batch = 16, checkpoint_every = 0, seg_warmup = 0;
  double lr = 0.01, momentum = 0.9, wd = 5e-4;
  double lambda_gap = 1.0, lambda_mil = 1.0, lambda_seg = 1.0;
  int candidate_k = 10;
  double cam_threshold = 0.2;
  bool no_seg_candidates = false;
  std::uint64_t seed = 0;
  std::vector<int> scales = {64};

  void from_config(const json& j) {
    cfg_get(j, "stages", stages);
    cfg_get(j, "pooling", pooling);
    cfg_get(j, "epochs", epochs);
    cfg_get(j, "batch_size", batch);
    cfg_get(j, "learning_rate", lr);
    cfg_get(j, "momentum", momentum);
    cfg_get(j, "weight_decay", wd);
    cfg_get(j, "lambda_gap", lambda_gap);
    cfg_get(j, "lambda_mil", lambda_mil);
    cfg_get(j, "lambda_seg", lambda_seg);
    cfg_get(j, "candidate_k", candidate_k);
    cfg_get(j, "cam_threshold", cam_threshold);
    cfg_get(j, "seed", seed);
    cfg_get(j, "scales", scales);
    cfg_get(j, "checkpoint_every", checkpoint_every);
    cfg_get(j, "seg_warmup_epochs", seg_warmup);
  }

  void add_options(CLI::App* cmd, bool require_out = true) {
    cmd->add_option("--data", data, "dataset root")->required();
    auto* o = cmd->add_option("--out", out, "output directory");
    if (require_out) o->required();
    cmd->add_option("--stages", stages, "cascade stages: two|three");
    cmd->add_option("--pooling", pooling, "global pooling: gap|gmp");
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--batch", batch);
    cmd->add_option("--lr", lr);
    cmd->add_option("--momentum", momentum);
    cmd->add_option("--wd", wd);
    cmd->add_option("--lambda-gap", lambda_gap);
    cmd->add_option("--lambda-mil", lambda_mil);
    cmd->add_option("--lambda-seg", lambda_seg);
    cmd->add_option("--candidate-k", candidate_k);
    cmd->add_option("--cam-threshold", cam_threshold);
    cmd->add_flag("--no-seg-candidates", no_seg_candidates,
                  "disable seg-based candidate refinement");
    cmd->add_option("--seed", seed);
    cmd->add_option("--scales", scales, "training scales (min image side)");
    cmd->add_option("--checkpoint-every", checkpoint_every);
    cmd->add_option("--seg-warmup", seg_warmup,
                    "three-stage: epochs to train as two-stage first");
    cmd->add_option("--resume", resume, "checkpoint to resume from");
    cmd->add_option("--proposals", proposals, "precomputed proposals file");
  }

  TrainConfig to_train_config(int num_classes) const {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch;
    cfg.learning_rate = lr;
    cfg.momentum = momentum;
    cfg.weight_decay = wd;
    cfg.rng_seed = seed;
    cfg.scales = scales;
    cfg.checkpoint_every = checkpoint_every;
    cfg.seg_warmup_epochs = seg_warmup;
    cfg.cascade.num_classes = num_classes;
    cfg.cascade.stages = parse_stages(stages);
    cfg.cascade.pooling = parse_pooling(pooling);
    cfg.cascade.candidate_k = candidate_k;
    cfg.cascade.cam_threshold = cam_threshold;
    cfg.cascade.loss_weights = {lambda_gap, lambda_mil, lambda_seg};
    cfg.cascade.seg_candidates = !no_seg_candidates;
    return cfg;
  }

  json resolved(int num_classes) const {
    return json::parse(to_train_config(num_classes).to_json());
  }
};

void draw_box(std::vector<std::uint8_t>& rgb, int w, int h, const Box& b,
              const std::array<std::uint8_t, 3>& color) {
  auto put = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    std::size_t i = ((std::size_t)y * w + x) * 3;
    rgb[i] = color[0];
    rgb[i + 1] = color[1];
    rgb[i + 2] = color[2];
  };
  for (int x = b.x0; x < b.x1; ++x) {
    put(x, b.y0);
    put(x, b.y1 - 1);
  }
  for (int y = b.y0; y < b.y1; ++y) {
    put(b.x0, y);
    put(b.x1 - 1, y);
  }
}

EvalReport run_eval(CascadeModel& model, const Dataset& ds,
                    const std::vector<ProposalSet>& proposals,
                    const std::vector<int>& scales, ApMode mode, const HiddenGT& gt,
                    double nms_iou, double score_min) {
  EvalReport rep;
  rep.class_names = ds.class_names;

  // classification + detection on the test split
  auto test = ds.split("test");
  std::vector<std::vector<double>> logits;
  std::vector<LabelVector> labels;
  DetectionSet dets;
  for (const Sample* s : test) {
    logits.push_back(classify(model, *s, scales));
    labels.push_back(s->labels);
    dets[s->image_id] =
        detect(model, *s, find_set(proposals, s->image_id), scales, nms_iou, score_min);
  }
  rep.classification_ap = classification_ap(logits, labels, mode);
  rep.mean_classification_ap = mean_of(rep.classification_ap);
  HiddenGT test_gt;
  for (const Sample* s : test) {
    auto it = gt.find(s->image_id);
    if (it != gt.end()) test_gt[s->image_id] = it->second;
  }
  rep.detection_ap = detection_ap(dets, test_gt, ds.num_classes, 0.5, mode);
  rep.map = mean_of(rep.detection_ap);

  // CorLoc + top-1 errors on trainval
  std::vector<CorLocEntry> entries;
  std::vector<Top1Prediction> top1;
  std::map<int, LabelVector> label_map;
  HiddenGT tv_gt;
  for (const std::string& split : {std::string("train"), std::string("val")}) {
    for (const Sample* s : ds.split(split)) {
      BatchItem item{s, &find_set(proposals, s->image_id),
                     scale_sample(*s, std::min(s->width, s->height))};
      ForwardResult fr = forward_cascade(model, {item}, false);
      const ImageRecord& rec = fr.records[0];
      for (const auto& [c, cr] : rec.per_class)
        entries.push_back({s->image_id, c, cr.top_box});
      int best_c = 1;
      for (int c = 2; c <= ds.num_classes; ++c)
        if (rec.logits[c - 1] > rec.logits[best_c - 1]) best_c = c;
      std::optional<Box> best_box;
      if (auto it = rec.per_class.find(best_c); it != rec.per_class.end())
        best_box = it->second.top_box;
      top1.push_back({s->image_id, best_c, best_box});
      label_map[s->image_id] = s->labels;
      if (auto it = gt.find(s->image_id); it != gt.end())
        tv_gt[s->image_id] = it->second;
    }
  }
  rep.corloc = corloc(entries, tv_gt, ds.num_classes);
  rep.mean_corloc = mean_of(rep.corloc);
  auto [ce, le] = top1_errors(top1, tv_gt, label_map);
  rep.top1_cls_error = ce;
  rep.top1_loc_error = le;
  return rep;
}

std::string format_cell(const std::optional<double>& v) {
  if (!v) return "   -  ";
  char buf[16];
  std::snprintf(buf, sizeof buf, "%6.3f", *v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  apply_threads();
  CLI::App app{"weakly supervised cascaded convolutional networks"};
  app.require_subcommand(1);

  json file_cfg;
  try {
    file_cfg = load_config_file(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (defaults < file < flags)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  gen->add_option("--config", config_path, "JSON config file");
  DatasetConfig dcfg;
  std::string gen_out;
  cfg_get(file_cfg, "num_classes", dcfg.num_classes);
  cfg_get(file_cfg, "image_size", dcfg.image_size);
  cfg_get(file_cfg, "num_train", dcfg.num_train);
  cfg_get(file_cfg, "num_val", dcfg.num_val);
  cfg_get(file_cfg, "num_test", dcfg.num_test);
  cfg_get(file_cfg, "clutter_level", dcfg.clutter_level);
  std::uint64_t gen_seed = 0;
  cfg_get(file_cfg, "seed", gen_seed);
  bool weak_only = false;
  gen->add_option("--out", gen_out, "dataset root to create")->required();
  gen->add_option("--seed", gen_seed);
  gen->add_option("--num-classes", dcfg.num_classes);
  gen->add_option("--image-size", dcfg.image_size);
  gen->add_option("--train", dcfg.num_train);
  gen->add_option("--val", dcfg.num_val);
  gen->add_option("--test", dcfg.num_test);
  gen->add_option("--objects-min", dcfg.objects_min);
  gen->add_option("--objects-max", dcfg.objects_max);
  gen->add_option("--clutter", dcfg.clutter_level);
  gen->add_flag("--weak-only", weak_only, "omit the hidden GT boxes file");

  // train
  auto* tr = app.add_subcommand("train", "train a cascade end to end");
  tr->add_option("--config", config_path, "JSON config file");
  TrainFlags tf;
  tf.from_config(file_cfg);
  tf.add_options(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a trained cascade");
  ev->add_option("--config", config_path, "JSON config file");
  std::string ev_data, ev_ckpt, ev_out, ev_props, ev_ap_mode = "allpoint";
  std::vector<int> ev_scales;
  double ev_nms = 0.3, ev_score_min = 0.1;
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--out", ev_out)->required();
  ev->add_option("--proposals", ev_props);
  ev->add_option("--ap-mode", ev_ap_mode, "allpoint|voc11");
  ev->add_option("--scales", ev_scales, "inference scales (default: training scales)");
  ev->add_option("--nms-iou", ev_nms);
  ev->add_option("--score-min", ev_score_min);

  // cam
  auto* cm = app.add_subcommand("cam", "dump CAM heatmaps and a candidate overlay");
  cm->add_option("--config", config_path, "JSON config file");
  std::string cm_data, cm_ckpt, cm_out;
  int cm_image = -1;
  cm->add_option("--data", cm_data)->required();
  cm->add_option("--checkpoint", cm_ckpt)->required();
  cm->add_option("--out", cm_out)->required();
  cm->add_option("--image-id", cm_image, "image to visualize")->required();

  // detect
  auto* dt = app.add_subcommand("detect", "run detection over a split");
  dt->add_option("--config", config_path, "JSON config file");
  std::string dt_data, dt_ckpt, dt_out, dt_split = "test", dt_props, dt_detector;
  std::vector<int> dt_scales;
  double dt_nms = 0.3, dt_score_min = 0.1;
  dt->add_option("--data", dt_data)->required();
  dt->add_option("--checkpoint", dt_ckpt, "cascade checkpoint");
  dt->add_option("--detector", dt_detector, "retrained detector checkpoint");
  dt->add_option("--out", dt_out)->required();
  dt->add_option("--split", dt_split, "train|val|test");
  dt->add_option("--proposals", dt_props);
  dt->add_option("--scales", dt_scales);
  dt->add_option("--nms-iou", dt_nms);
  dt->add_option("--score-min", dt_score_min);

  // export-pseudo-gt
  auto* px = app.add_subcommand("export-pseudo-gt",
                                "emit MIL argmax boxes for the train split");
  px->add_option("--config", config_path, "JSON config file");
  std::string px_data, px_ckpt, px_out, px_props;
  px->add_option("--data", px_data)->required();
  px->add_option("--checkpoint", px_ckpt)->required();
  px->add_option("--out", px_out)->required();
  px->add_option("--proposals", px_props);

  // retrain-detector
  auto* rt = app.add_subcommand("retrain-detector",
                                "train a supervised detector on pseudo GT");
  rt->add_option("--config", config_path, "JSON config file");
  TrainFlags rf;
  rf.epochs = 10;
  rf.from_config(file_cfg);
  rf.add_options(rt);
  std::string rt_pseudo;
  bool rt_leak = false;
  rt->add_option("--pseudo-gt", rt_pseudo, "pseudo GT file from export-pseudo-gt");
  rt->add_flag("--leak-true-gt", rt_leak,
               "upper baseline: train on the hidden GT instead of pseudo GT");

  // compare
  auto* cp = app.add_subcommand("compare", "diff two eval reports");
  cp->add_option("--config", config_path, "JSON config file");
  std::vector<std::string> cp_runs;
  std::string cp_out;
  cp->add_option("--runs", cp_runs, "two run directories containing report.json")
      ->required()
      ->expected(2)
      ->delimiter(',');
  cp->add_option("--out", cp_out, "directory for the comparison report")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  try {
    if (gen->parsed()) {
      dcfg.rng_seed = gen_seed;
      auto [ds, gt] = generate_dataset(dcfg);
      save_dataset(gen_out, ds, gt);
      if (weak_only) fs::remove(fs::path(gen_out) / "gt_boxes.jsonl");
      json resolved = {{"num_classes", dcfg.num_classes},
                       {"image_size", dcfg.image_size},
                       {"num_train", dcfg.num_train},
                       {"num_val", dcfg.num_val},
                       {"num_test", dcfg.num_test},
                       {"objects_min", dcfg.objects_min},
                       {"objects_max", dcfg.objects_max},
                       {"clutter_level", dcfg.clutter_level},
                       {"weak_only", weak_only}};
      write_manifest(gen_out, "gen-data", resolved, gen_seed, wall());
      std::cout << "wrote " << ds.samples.size() << " images under " << gen_out << "\n";
    } else if (tr->parsed()) {
      Dataset ds = load_dataset(tf.data);
      auto props = proposals_for(ds, tf.proposals);
      TrainConfig cfg = tf.to_train_config(ds.num_classes);
      fs::create_directories(tf.out);
      if (tf.proposals.empty())
        save_proposals((fs::path(tf.out) / "proposals.jsonl").string(), props);
      train(ds, props, cfg, tf.out, tf.resume);
      write_manifest(tf.out, "train", tf.resolved(ds.num_classes), tf.seed, wall());
      std::cout << "checkpoint written to " << (fs::path(tf.out) / "checkpoint.wckp").string()
                << "\n";
    } else if (ev->parsed()) {
      Dataset ds = load_dataset(ev_data);
      TrainConfig tcfg;
      auto model = load_cascade(ev_ckpt, &tcfg);
      auto props = proposals_for(ds, ev_props);
      if (ev_scales.empty()) ev_scales = tcfg.scales;
      HiddenGT gt = load_hidden_gt(ev_data);
      EvalReport rep = run_eval(*model, ds, props, ev_scales, parse_ap_mode(ev_ap_mode),
                                gt, ev_nms, ev_score_min);
      rep.config_echo = tcfg.to_json();
      fs::create_directories(ev_out);
      std::ofstream(fs::path(ev_out) / "report.json") << rep.to_json() << "\n";
      std::ofstream(fs::path(ev_out) / "report.txt") << rep.to_table();
      std::cout << rep.to_table();
      json resolved = {{"checkpoint", ev_ckpt},
                       {"ap_mode", ev_ap_mode},
                       {"scales", ev_scales},
                       {"nms_iou", ev_nms},
                       {"score_min", ev_score_min}};
      write_manifest(ev_out, "eval", resolved, tcfg.rng_seed, wall());
    } else if (cm->parsed()) {
      Dataset ds = load_dataset(cm_data);
      auto model = load_cascade(cm_ckpt);
      const Sample& s = ds.by_id(cm_image);
      ScaledImage si = scale_sample(s, std::min(s.width, s.height));
      Tensor feats = model->trunk.forward(si.image);
      auto lo = model->loc.forward(feats);
      CAM cam = extract_cam(lo.cam, s.width, s.height);
      fs::create_directories(cm_out);
      std::vector<std::uint8_t> overlay = s.pixels;
      const std::array<std::array<std::uint8_t, 3>, 4> palette = {
          {{255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {255, 255, 0}}};
      ProposalSet props = generate_proposals(s, {});
      for (int c = 1; c <= ds.num_classes; ++c) {
        write_cam_pgm(cam, c,
                      (fs::path(cm_out) / ("cam_class" + std::to_string(c) + ".pgm"))
                          .string());
        if (!s.labels[c - 1]) continue;
        auto cam_boxes = cam_to_boxes(cam, c, model->cfg.cam_threshold);
        for (Box b :
             select_candidates(cam_boxes, props.boxes, model->cfg.candidate_k))
          draw_box(overlay, s.width, s.height, b, palette[(c - 1) % palette.size()]);
      }
      write_ppm((fs::path(cm_out) / "overlay.ppm").string(), s.width, s.height, overlay);
      write_manifest(cm_out, "cam", {{"image_id", cm_image}, {"checkpoint", cm_ckpt}}, 0,
                     wall());
      std::cout << "wrote CAM dumps under " << cm_out << "\n";
    } else if (dt->parsed()) {
      if (dt_ckpt.empty() == dt_detector.empty())
        throw CLI::ValidationError("detect",
                                   "exactly one of --checkpoint / --detector required");
      Dataset ds = load_dataset(dt_data);
      auto props = proposals_for(ds, dt_props);
      std::unique_ptr<CascadeModel> cascade;
      std::unique_ptr<DetectorModel> detector;
      if (!dt_ckpt.empty()) {
        TrainConfig tcfg;
        cascade = load_cascade(dt_ckpt, &tcfg);
        if (dt_scales.empty()) dt_scales = tcfg.scales;
      } else {
        detector = load_detector(dt_detector);
        if (dt_scales.empty()) dt_scales = {ds.image_size};
      }
      fs::create_directories(dt_out);
      std::ofstream out(fs::path(dt_out) / "detections.jsonl");
      for (const Sample* s : ds.split(dt_split)) {
        auto boxes = cascade ? detect(*cascade, *s, find_set(props, s->image_id),
                                      dt_scales, dt_nms, dt_score_min)
                             : detector_detect(*detector, *s,
                                               find_set(props, s->image_id), dt_scales,
                                               dt_nms, dt_score_min);
        json arr = json::array();
        for (const Box& b : boxes) arr.push_back(json::parse(box_to_json(b)));
        out << json{{"image_id", s->image_id}, {"detections", arr}}.dump() << "\n";
      }
      json resolved = {{"split", dt_split},
                       {"scales", dt_scales},
                       {"nms_iou", dt_nms},
                       {"score_min", dt_score_min}};
      write_manifest(dt_out, "detect", resolved, 0, wall());
      std::cout << "wrote " << (fs::path(dt_out) / "detections.jsonl").string() << "\n";
    } else if (px->parsed()) {
      Dataset ds = load_dataset(px_data);
      auto model = load_cascade(px_ckpt);
      auto props = proposals_for(ds, px_props);
      fs::create_directories(px_out);
      const std::string path = (fs::path(px_out) / "pseudo_gt.jsonl").string();
      HiddenGT pseudo = export_pseudo_gt(*model, ds, props, path);
      write_manifest(px_out, "export-pseudo-gt", {{"checkpoint", px_ckpt}}, 0, wall());
      std::cout << "wrote pseudo GT for " << pseudo.size() << " images to " << path
                << "\n";
    } else if (rt->parsed()) {
      Dataset ds = load_dataset(rf.data);
      auto props = proposals_for(ds, rf.proposals);
      HiddenGT pseudo;
      if (rt_leak)
        pseudo = load_hidden_gt(rf.data);
      else if (!rt_pseudo.empty())
        pseudo = load_pseudo_gt(rt_pseudo);
      else
        throw CLI::ValidationError("retrain-detector",
                                   "--pseudo-gt or --leak-true-gt required");
      TrainConfig cfg = rf.to_train_config(ds.num_classes);
      retrain_supervised(ds, pseudo, props, cfg, rf.out);
      json resolved = rf.resolved(ds.num_classes);
      resolved["leak_true_gt"] = rt_leak;
      write_manifest(rf.out, "retrain-detector", resolved, rf.seed, wall());
      std::cout << "detector written to " << (fs::path(rf.out) / "detector.wckp").string()
                << "\n";
    } else if (cp->parsed()) {
      EvalReport a = EvalReport::from_json_file(
          (fs::path(cp_runs[0]) / "report.json").string());
      EvalReport b = EvalReport::from_json_file(
          (fs::path(cp_runs[1]) / "report.json").string());
      if (a.class_names != b.class_names)
        throw std::runtime_error("compare: reports cover different class sets");

      std::ostringstream table;
      table << "metric               class      " << cp_runs[0] << "  " << cp_runs[1]
            << "  delta\n";
      auto row = [&](const std::string& metric, const std::string& cls,
                     const std::optional<double>& va, const std::optional<double>& vb) {
        table << metric;
        table << std::string(metric.size() < 21 ? 21 - metric.size() : 1, ' ');
        table << cls << std::string(cls.size() < 11 ? 11 - cls.size() : 1, ' ');
        table << format_cell(va) << "  " << format_cell(vb) << "  ";
        if (va && vb)
          table << format_cell(*vb - *va);
        else
          table << "   -  ";
        table << "\n";
      };
      for (std::size_t c = 0; c < a.class_names.size(); ++c) {
        row("detection_ap", a.class_names[c], a.detection_ap[c], b.detection_ap[c]);
        row("corloc", a.class_names[c], a.corloc[c], b.corloc[c]);
        row("classification_ap", a.class_names[c], a.classification_ap[c],
            b.classification_ap[c]);
      }
      row("detection_map", "mean", a.map, b.map);
      row("mean_corloc", "mean", a.mean_corloc, b.mean_corloc);
      row("mean_cls_ap", "mean", a.mean_classification_ap, b.mean_classification_ap);

      fs::create_directories(cp_out);
      std::ofstream(fs::path(cp_out) / "compare.txt") << table.str();
      json cj = {{"runs", cp_runs},
                 {"map", {a.map, b.map, b.map - a.map}},
                 {"mean_corloc",
                  {a.mean_corloc, b.mean_corloc, b.mean_corloc - a.mean_corloc}},
                 {"mean_classification_ap",
                  {a.mean_classification_ap, b.mean_classification_ap,
                   b.mean_classification_ap - a.mean_classification_ap}}};
      std::ofstream(fs::path(cp_out) / "compare.json") << cj.dump(2) << "\n";
      std::cout << table.str();
      write_manifest(cp_out, "compare", {{"runs", cp_runs}}, 0, wall());
    }
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
