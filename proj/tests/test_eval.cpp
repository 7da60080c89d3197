#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "wccn/eval.hpp"

using namespace wccn;

namespace {

// All-point interpolated AP from a ranked relevance list (independent of the
// library's implementation).
double ap_oracle(const std::vector<int>& relevant, int total_pos) {
  if (total_pos == 0) return 0.0;
  std::vector<double> prec, rec;
  int tp = 0;
  for (std::size_t i = 0; i < relevant.size(); ++i) {
    tp += relevant[i];
    prec.push_back((double)tp / (double)(i + 1));
    rec.push_back((double)tp / total_pos);
  }
  // monotone envelope from the right
  for (int i = (int)prec.size() - 2; i >= 0; --i) prec[i] = std::max(prec[i], prec[i + 1]);
  double ap = 0.0, prev_r = 0.0;
  for (std::size_t i = 0; i < prec.size(); ++i) {
    ap += (rec[i] - prev_r) * prec[i];
    prev_r = rec[i];
  }
  return ap;
}

// Literal restatement of the detection AP definition.
std::vector<std::optional<double>> detection_ap_oracle(const DetectionSet& dets,
                                                       const HiddenGT& gt, int C,
                                                       double iou_min) {
  std::vector<std::optional<double>> out(C);
  for (int c = 1; c <= C; ++c) {
    int total_gt = 0;
    for (const auto& [id, boxes] : gt)
      for (const Box& b : boxes)
        if (*b.class_id == c) ++total_gt;
    if (total_gt == 0) continue;

    struct Det {
      int image_id;
      std::size_t idx;
      Box box;
    };
    std::vector<Det> all;
    for (const auto& [id, boxes] : dets)
      for (std::size_t i = 0; i < boxes.size(); ++i)
        if (boxes[i].class_id && *boxes[i].class_id == c) all.push_back({id, i, boxes[i]});
    std::stable_sort(all.begin(), all.end(),
                     [](const Det& a, const Det& b) { return *a.box.score > *b.box.score; });

    std::map<int, std::vector<bool>> used;
    std::vector<int> rel;
    for (const Det& d : all) {
      const auto it = gt.find(d.image_id);
      int best = -1;
      double best_iou = 0.0;
      if (it != gt.end()) {
        auto& flags = used[d.image_id];
        flags.resize(it->second.size(), false);
        for (std::size_t g = 0; g < it->second.size(); ++g) {
          if (flags[g] || *it->second[g].class_id != c) continue;
          double v = iou(d.box, it->second[g]);
          if (v >= iou_min && v > best_iou) {
            best_iou = v;
            best = (int)g;
          }
        }
      }
      if (best >= 0) {
        used[d.image_id][best] = true;
        rel.push_back(1);
      } else {
        rel.push_back(0);
      }
    }
    out[c - 1] = ap_oracle(rel, total_gt);
  }
  return out;
}

Box rbox(std::mt19937_64& rng, int span = 24) {
  std::uniform_int_distribution<int> c(0, span - 2);
  std::uniform_int_distribution<int> len(2, span / 2);
  Box b;
  b.x0 = c(rng);
  b.y0 = c(rng);
  b.x1 = b.x0 + len(rng);
  b.y1 = b.y0 + len(rng);
  return b;
}

}  // namespace

TEST_CASE("detection_ap examples") {
  HiddenGT gt;
  gt[1] = {Box{0, 0, 10, 10, 1, {}}, Box{20, 20, 30, 30, 2, {}}};
  gt[2] = {Box{5, 5, 15, 15, 1, {}}};

  // detections == GT with score 1 -> AP 1 per class
  DetectionSet perfect;
  for (const auto& [id, boxes] : gt)
    for (Box b : boxes) {
      b.score = 1.0;
      perfect[id].push_back(b);
    }
  auto ap = detection_ap(perfect, gt, 3);
  CHECK(*ap[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(*ap[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(!ap[2].has_value());  // zero-GT class excluded

  // no detections -> AP 0
  auto zero = detection_ap({}, gt, 2);
  CHECK(*zero[0] == 0.0);
  CHECK(*zero[1] == 0.0);

  // duplicate matches count as false positives
  DetectionSet dup;
  dup[1] = {Box{0, 0, 10, 10, 1, 0.9}, Box{0, 0, 10, 10, 1, 0.8}};
  auto dap = detection_ap(dup, gt, 1);
  auto want = detection_ap_oracle(dup, gt, 1, 0.5);
  CHECK(std::abs(*dap[0] - *want[0]) < 1e-9);
}

TEST_CASE("detection_ap matches brute-force oracle on 1000 random instances") {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<int> nimg(1, 4), nbox(0, 6), cls(1, 3);
  std::uniform_real_distribution<double> sc(0, 1);
  for (int it = 0; it < 1000; ++it) {
    HiddenGT gt;
    DetectionSet dets;
    int imgs = nimg(rng);
    for (int id = 1; id <= imgs; ++id) {
      int g = nbox(rng);
      for (int i = 0; i < g; ++i) {
        Box b = rbox(rng);
        b.class_id = cls(rng);
        gt[id].push_back(b);
      }
      int d = nbox(rng);
      for (int i = 0; i < d; ++i) {
        Box b = rbox(rng);
        b.class_id = cls(rng);
        b.score = sc(rng);
        dets[id].push_back(b);
      }
    }
    auto got = detection_ap(dets, gt, 3);
    auto want = detection_ap_oracle(dets, gt, 3, 0.5);
    for (int c = 0; c < 3; ++c) {
      CHECK(got[c].has_value() == want[c].has_value());
      if (got[c]) CHECK(std::abs(*got[c] - *want[c]) < 1e-9);
    }
  }
}

TEST_CASE("corloc examples and oracle") {
  HiddenGT gt;
  gt[1] = {Box{0, 0, 10, 10, 1, {}}};
  gt[2] = {Box{0, 0, 10, 10, 1, {}}};
  gt[3] = {Box{0, 0, 10, 10, 1, {}}};
  gt[4] = {Box{0, 0, 10, 10, 1, {}}};

  std::vector<CorLocEntry> hits = {{1, 1, Box{0, 0, 10, 10}},
                                   {2, 1, Box{1, 1, 11, 11}},
                                   {3, 1, Box{0, 0, 9, 9}},
                                   {4, 1, Box{30, 30, 40, 40}}};
  auto r = corloc(hits, gt, 1);
  CHECK(*r[0] == doctest::Approx(0.75).epsilon(1e-12));

  std::vector<CorLocEntry> none = {{1, 1, Box{50, 50, 60, 60}}};
  CHECK(*corloc(none, gt, 1)[0] == 0.0);

  // missing box counts as a miss
  std::vector<CorLocEntry> missing = {{1, 1, std::nullopt}, {2, 1, Box{0, 0, 10, 10}}};
  CHECK(*corloc(missing, gt, 1)[0] == doctest::Approx(0.5).epsilon(1e-12));

  // random instances vs direct counting
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> cls(1, 2);
  for (int it = 0; it < 1000; ++it) {
    HiddenGT g;
    std::vector<CorLocEntry> entries;
    int imgs = 1 + (int)(rng() % 5);
    for (int id = 1; id <= imgs; ++id) {
      int n = 1 + (int)(rng() % 3);
      std::vector<int> present;
      for (int i = 0; i < n; ++i) {
        Box b = rbox(rng);
        b.class_id = cls(rng);
        g[id].push_back(b);
        present.push_back(*b.class_id);
      }
      std::sort(present.begin(), present.end());
      present.erase(std::unique(present.begin(), present.end()), present.end());
      for (int c : present) entries.push_back({id, c, rbox(rng)});
    }
    auto got = corloc(entries, g, 2);
    for (int c = 1; c <= 2; ++c) {
      int pos = 0, hit = 0;
      for (const auto& e : entries) {
        if (e.class_id != c) continue;
        ++pos;
        bool ok = false;
        for (const Box& b : g.at(e.image_id))
          if (*b.class_id == c && e.box && iou(*e.box, b) >= 0.5) ok = true;
        hit += ok;
      }
      if (pos == 0) {
        CHECK(!got[c - 1].has_value());
      } else {
        CHECK(std::abs(*got[c - 1] - (double)hit / pos) < 1e-9);
      }
    }
  }
}

TEST_CASE("classification_ap examples and oracle") {
  // perfect ranking -> 1.0
  std::vector<std::vector<double>> logits = {{3.0}, {2.0}, {-1.0}, {-2.0}};
  std::vector<LabelVector> labels = {{1}, {1}, {0}, {0}};
  CHECK(*classification_ap(logits, labels)[0] == doctest::Approx(1.0).epsilon(1e-12));

  // inverted ranking, 2 positives of 4: hits at ranks 3 and 4
  std::vector<std::vector<double>> inv = {{-2.0}, {-1.0}, {2.0}, {3.0}};
  double worst = ap_oracle({0, 0, 1, 1}, 2);
  CHECK(std::abs(*classification_ap(inv, labels)[0] - worst) < 1e-9);

  // class absent from split -> excluded
  std::vector<LabelVector> absent = {{0, 1}, {0, 1}, {0, 0}, {0, 0}};
  auto aps = classification_ap({{1, 2}, {0, 1}, {2, 0}, {1, 1}}, absent);
  CHECK(!aps[0].has_value());
  CHECK(aps[1].has_value());

  // random oracle check
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1, 1);
  std::bernoulli_distribution coin(0.4);
  for (int it = 0; it < 1000; ++it) {
    int n = 3 + (int)(rng() % 8);
    std::vector<std::vector<double>> lg(n, std::vector<double>(2));
    std::vector<LabelVector> lb(n, LabelVector(2));
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 2; ++c) {
        lg[i][c] = u(rng);
        lb[i][c] = coin(rng) ? 1 : 0;
      }
    auto got = classification_ap(lg, lb);
    for (int c = 0; c < 2; ++c) {
      std::vector<int> order(n);
      for (int i = 0; i < n; ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return lg[a][c] > lg[b][c]; });
      int pos = 0;
      std::vector<int> rel;
      for (int i : order) rel.push_back(lb[i][c]);
      for (int i = 0; i < n; ++i) pos += lb[i][c];
      if (pos == 0) {
        CHECK(!got[c].has_value());
      } else {
        CHECK(std::abs(*got[c] - ap_oracle(rel, pos)) < 1e-9);
      }
    }
  }
}

TEST_CASE("classification_ap monte-carlo mean approaches prevalence") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0, 1);
  double sum = 0;
  int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    // n large enough that the small-sample bias of AP under random ranking
    // stays well inside the 0.05 band around the prevalence
    int n = 400;
    std::vector<std::vector<double>> lg(n, std::vector<double>(1));
    std::vector<LabelVector> lb(n, LabelVector(1));
    for (int i = 0; i < n; ++i) {
      lg[i][0] = u(rng);
      lb[i][0] = i < 120 ? 1 : 0;  // prevalence 0.3
    }
    sum += *classification_ap(lg, lb)[0];
  }
  CHECK(std::abs(sum / trials - 0.3) < 0.05);
}

TEST_CASE("ap invariances") {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(-1, 1);
  std::bernoulli_distribution coin(0.5);
  for (int it = 0; it < 50; ++it) {
    int n = 10;
    std::vector<std::vector<double>> lg(n, std::vector<double>(1));
    std::vector<LabelVector> lb(n, LabelVector(1));
    for (int i = 0; i < n; ++i) {
      lg[i][0] = u(rng);
      lb[i][0] = coin(rng) ? 1 : 0;
    }
    auto base = classification_ap(lg, lb);
    auto mono = lg;
    for (auto& v : mono) v[0] = std::exp(3 * v[0]) + 1;  // strictly monotone
    auto after = classification_ap(mono, lb);
    if (base[0])
      CHECK(std::abs(*base[0] - *after[0]) < 1e-12);
  }

  // a false positive below all true positives never raises AP
  HiddenGT gt;
  gt[1] = {Box{0, 0, 10, 10, 1, {}}};
  DetectionSet d;
  d[1] = {Box{0, 0, 10, 10, 1, 0.9}};
  double before = *detection_ap(d, gt, 1)[0];
  d[1].push_back(Box{40, 40, 50, 50, 1, 0.1});
  CHECK(*detection_ap(d, gt, 1)[0] <= before + 1e-12);
}

TEST_CASE("top1_errors") {
  HiddenGT gt;
  gt[1] = {Box{0, 0, 10, 10, 1, {}}};
  gt[2] = {Box{0, 0, 10, 10, 2, {}}};
  std::map<int, LabelVector> labels = {{1, {1, 0}}, {2, {0, 1}}};

  // perfect
  std::vector<Top1Prediction> good = {{1, 1, Box{0, 0, 10, 10}}, {2, 2, Box{0, 0, 10, 10}}};
  auto [ce, le] = top1_errors(good, gt, labels);
  CHECK(ce == 0.0);
  CHECK(le == 0.0);

  // right class, wrong box: only loc error
  std::vector<Top1Prediction> wrongbox = {{1, 1, Box{40, 40, 50, 50}},
                                          {2, 2, Box{0, 0, 10, 10}}};
  auto [ce2, le2] = top1_errors(wrongbox, gt, labels);
  CHECK(ce2 == 0.0);
  CHECK(le2 == doctest::Approx(0.5).epsilon(1e-12));

  // wrong class counts in both; loc >= cls always
  std::vector<Top1Prediction> wrongcls = {{1, 2, Box{0, 0, 10, 10}},
                                          {2, 2, Box{0, 0, 10, 10}}};
  auto [ce3, le3] = top1_errors(wrongcls, gt, labels);
  CHECK(ce3 == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(le3 >= ce3);
}

TEST_CASE("eval report json round trip and table") {
  namespace fs = std::filesystem;
  EvalReport r;
  r.class_names = {"a", "b"};
  r.detection_ap = {0.5, std::nullopt};
  r.map = 0.5;
  r.corloc = {0.25, 0.75};
  r.mean_corloc = 0.5;
  r.classification_ap = {0.9, 1.0};
  r.mean_classification_ap = 0.95;
  r.top1_cls_error = 0.1;
  r.top1_loc_error = 0.2;
  r.config_echo = "{}";

  fs::path dir = fs::temp_directory_path() / "wccn_eval_test";
  fs::create_directories(dir);
  std::string path = (dir / "report.json").string();
  {
    std::ofstream out(path);
    out << r.to_json();
  }
  EvalReport back = EvalReport::from_json_file(path);
  CHECK(back.map == doctest::Approx(r.map).epsilon(1e-12));
  CHECK(back.mean_corloc == doctest::Approx(r.mean_corloc).epsilon(1e-12));
  CHECK(back.class_names == r.class_names);
  CHECK(!back.detection_ap[1].has_value());
  CHECK(r.to_table().find("a") != std::string::npos);
  fs::remove_all(dir);
  CHECK(mean_of({0.5, std::nullopt, 1.0}) == doctest::Approx(0.75).epsilon(1e-12));
}
