#include "wccn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace wccn {

namespace {

// AP from a ranked TP/FP sequence. All-point: area under the monotone
// precision envelope; Voc11: mean of max precision at the 11 recall points.
double ap_from_ranked(const std::vector<int>& tp, std::size_t npos, ApMode mode) {
  if (npos == 0) return 0.0;
  std::vector<double> prec(tp.size()), rec(tp.size());
  std::size_t cum_tp = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    cum_tp += tp[i];
    prec[i] = (double)cum_tp / (double)(i + 1);
    rec[i] = (double)cum_tp / (double)npos;
  }
  if (mode == ApMode::Voc11) {
    double ap = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double r = k / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < tp.size(); ++i)
        if (rec[i] >= r) p = std::max(p, prec[i]);
      ap += p / 11.0;
    }
    return ap;
  }
  // Monotone envelope from the right, integrate over recall steps.
  double ap = 0.0, pmax = 0.0, rprev = 0.0;
  std::vector<std::pair<double, double>> pts(tp.size());
  for (std::size_t i = 0; i < tp.size(); ++i) pts[i] = {rec[i], prec[i]};
  for (std::size_t i = pts.size(); i-- > 0;) {
    pmax = std::max(pmax, pts[i].second);
    pts[i].second = pmax;
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ap += (pts[i].first - rprev) * pts[i].second;
    rprev = pts[i].first;
  }
  return ap;
}

}  // namespace

double mean_of(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  int n = 0;
  for (const auto& x : v)
    if (x) {
      s += *x;
      ++n;
    }
  return n ? s / n : 0.0;
}

std::vector<std::optional<double>> detection_ap(const DetectionSet& detections,
                                                const HiddenGT& gt, int num_classes,
                                                double iou_min, ApMode mode) {
  std::vector<std::optional<double>> out(num_classes);
  for (int c = 1; c <= num_classes; ++c) {
    // GT boxes of this class, per image.
    std::map<int, std::vector<const Box*>> gtc;
    std::size_t npos = 0;
    for (const auto& [id, boxes] : gt)
      for (const auto& b : boxes)
        if (b.class_id == c) {
          gtc[id].push_back(&b);
          ++npos;
        }
    if (npos == 0) continue;  // AP undefined, excluded from mAP

    struct Det {
      double score;
      int image_id;
      const Box* box;
    };
    std::vector<Det> dets;
    for (const auto& [id, boxes] : detections)
      for (const auto& b : boxes)
        if (b.class_id == c) dets.push_back({b.score.value_or(0.0), id, &b});
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Det& a, const Det& b) { return a.score > b.score; });

    std::map<int, std::vector<int>> matched;  // image -> per-GT matched flag
    std::vector<int> tp(dets.size(), 0);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      auto it = gtc.find(dets[i].image_id);
      if (it == gtc.end()) continue;
      auto& flags = matched[dets[i].image_id];
      flags.resize(it->second.size(), 0);
      int best = -1;
      double best_iou = 0.0;
      for (std::size_t g = 0; g < it->second.size(); ++g) {
        if (flags[g]) continue;
        const double v = iou(*dets[i].box, *it->second[g]);
        if (v >= iou_min && v > best_iou) {
          best_iou = v;
          best = (int)g;
        }
      }
      if (best >= 0) {
        flags[best] = 1;
        tp[i] = 1;
      }
    }
    out[c - 1] = ap_from_ranked(tp, npos, mode);
  }
  return out;
}

std::vector<std::optional<double>> corloc(const std::vector<CorLocEntry>& entries,
                                          const HiddenGT& gt, int num_classes,
                                          double iou_min) {
  std::vector<int> hits(num_classes, 0), total(num_classes, 0);
  for (const auto& e : entries) {
    if (e.class_id < 1 || e.class_id > num_classes)
      throw std::runtime_error("corloc: class id out of range");
    ++total[e.class_id - 1];
    if (!e.box) continue;
    auto it = gt.find(e.image_id);
    if (it == gt.end()) continue;
    for (const auto& g : it->second)
      if (g.class_id == e.class_id && iou(*e.box, g) >= iou_min) {
        ++hits[e.class_id - 1];
        break;
      }
  }
  std::vector<std::optional<double>> out(num_classes);
  for (int c = 0; c < num_classes; ++c)
    if (total[c]) out[c] = (double)hits[c] / total[c];
  return out;
}

std::vector<std::optional<double>> classification_ap(
    const std::vector<std::vector<double>>& logits,
    const std::vector<LabelVector>& labels, ApMode mode) {
  if (logits.size() != labels.size())
    throw std::runtime_error("classification_ap: logits/labels size mismatch");
  if (logits.empty()) return {};
  const std::size_t C = logits[0].size();
  std::vector<std::optional<double>> out(C);
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<std::size_t> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return logits[a][c] > logits[b][c];
    });
    std::vector<int> tp(order.size());
    std::size_t npos = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      tp[i] = labels[order[i]][c];
      npos += labels[order[i]][c];
    }
    if (npos == 0) continue;
    out[c] = ap_from_ranked(tp, npos, mode);
  }
  return out;
}

std::pair<double, double> top1_errors(const std::vector<Top1Prediction>& preds,
                                      const HiddenGT& gt,
                                      const std::map<int, LabelVector>& labels,
                                      double iou_min) {
  if (preds.empty()) return {0.0, 0.0};
  int cls_wrong = 0, loc_wrong = 0;
  for (const auto& p : preds) {
    const auto& y = labels.at(p.image_id);
    const bool cls_ok = p.class_id >= 1 && p.class_id <= (int)y.size() &&
                        y[p.class_id - 1] == 1;
    bool loc_ok = false;
    if (cls_ok && p.box) {
      auto it = gt.find(p.image_id);
      if (it != gt.end())
        for (const auto& g : it->second)
          if (g.class_id == p.class_id && iou(*p.box, g) >= iou_min) {
            loc_ok = true;
            break;
          }
    }
    cls_wrong += !cls_ok;
    loc_wrong += !loc_ok;
  }
  return {(double)cls_wrong / preds.size(), (double)loc_wrong / preds.size()};
}

std::string EvalReport::to_json() const {
  auto opt_arr = [](const std::vector<std::optional<double>>& v) {
    json a = json::array();
    for (const auto& x : v)
      a.push_back(x ? json(*x) : json(nullptr));
    return a;
  };
  json j = {{"class_names", class_names},
            {"detection_ap", opt_arr(detection_ap)},
            {"map", map},
            {"corloc", opt_arr(corloc)},
            {"mean_corloc", mean_corloc},
            {"classification_ap", opt_arr(classification_ap)},
            {"mean_classification_ap", mean_classification_ap},
            {"top1_cls_error", top1_cls_error},
            {"top1_loc_error", top1_loc_error},
            {"config", config_echo}};
  return j.dump(2);
}

EvalReport EvalReport::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  json j;
  is >> j;
  EvalReport r;
  r.class_names = j.at("class_names").get<std::vector<std::string>>();
  auto opt_vec = [&](const char* key) {
    std::vector<std::optional<double>> v;
    for (const auto& x : j.at(key))
      v.push_back(x.is_null() ? std::optional<double>{} : std::optional<double>(x.get<double>()));
    return v;
  };
  r.detection_ap = opt_vec("detection_ap");
  r.map = j.at("map").get<double>();
  r.corloc = opt_vec("corloc");
  r.mean_corloc = j.at("mean_corloc").get<double>();
  r.classification_ap = opt_vec("classification_ap");
  r.mean_classification_ap = j.at("mean_classification_ap").get<double>();
  r.top1_cls_error = j.at("top1_cls_error").get<double>();
  r.top1_loc_error = j.at("top1_loc_error").get<double>();
  r.config_echo = j.value("config", "");
  return r;
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  auto cell = [&](std::optional<double> v) {
    char buf[16];
    if (v)
      std::snprintf(buf, sizeof buf, "%7.3f", *v);
    else
      std::snprintf(buf, sizeof buf, "%7s", "-");
    return std::string(buf);
  };
  os << "metric          ";
  for (const auto& n : class_names) os << " " << n.substr(0, 7);
  os << "    mean\n";
  auto row = [&](const char* name, const std::vector<std::optional<double>>& v,
                 double mean) {
    os << name;
    for (const auto& x : v) os << " " << cell(x);
    os << " " << cell(mean) << "\n";
  };
  row("detection AP    ", detection_ap, map);
  row("CorLoc          ", corloc, mean_corloc);
  row("classification  ", classification_ap, mean_classification_ap);
  os << "top-1 cls error " << cell(top1_cls_error) << "\n";
  os << "top-1 loc error " << cell(top1_loc_error) << "\n";
  return os.str();
}

HiddenGT load_hidden_gt(const std::string& dataset_root) {
  const auto path = fs::path(dataset_root) / "gt_boxes.jsonl";
  std::ifstream is(path);
  if (!is)
    throw std::runtime_error("hidden GT unavailable (weak-only dataset): " +
                             path.string());
  HiddenGT gt;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + " line " + std::to_string(lineno) +
                               ": " + e.what());
    }
    const int id = rec.at("image_id").get<int>();
    for (const auto& jb : rec.at("boxes")) {
      Box b{jb.at("x0").get<int>(), jb.at("y0").get<int>(), jb.at("x1").get<int>(),
            jb.at("y1").get<int>(), jb.at("class").get<int>(), {}};
      gt[id].push_back(b);
    }
  }
  return gt;
}

}  // namespace wccn
