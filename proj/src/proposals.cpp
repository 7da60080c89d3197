#include "wccn/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace wccn {

namespace {

// Sobel gradient magnitude of the grayscale image.
std::vector<double> edge_map(const Sample& s) {
  const int w = s.width, h = s.height;
  std::vector<double> gray((std::size_t)w * h);
  for (std::size_t i = 0; i < gray.size(); ++i)
    gray[i] = (s.pixels[i * 3] + s.pixels[i * 3 + 1] + s.pixels[i * 3 + 2]) / 3.0;
  std::vector<double> mag((std::size_t)w * h, 0.0);
  for (int y = 1; y + 1 < h; ++y)
    for (int x = 1; x + 1 < w; ++x) {
      auto g = [&](int yy, int xx) { return gray[(std::size_t)yy * w + xx]; };
      const double gx = g(y - 1, x + 1) + 2 * g(y, x + 1) + g(y + 1, x + 1) -
                        g(y - 1, x - 1) - 2 * g(y, x - 1) - g(y + 1, x - 1);
      const double gy = g(y + 1, x - 1) + 2 * g(y + 1, x) + g(y + 1, x + 1) -
                        g(y - 1, x - 1) - 2 * g(y - 1, x) - g(y - 1, x + 1);
      mag[(std::size_t)y * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  return mag;
}

struct Integral {
  int w, h;
  std::vector<double> s;  // (w+1)*(h+1)

  explicit Integral(const std::vector<double>& m, int w_, int h_) : w(w_), h(h_) {
    s.assign((std::size_t)(w + 1) * (h + 1), 0.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        s[(std::size_t)(y + 1) * (w + 1) + x + 1] =
            m[(std::size_t)y * w + x] + s[(std::size_t)y * (w + 1) + x + 1] +
            s[(std::size_t)(y + 1) * (w + 1) + x] - s[(std::size_t)y * (w + 1) + x];
  }
  double sum(int x0, int y0, int x1, int y1) const {  // half-open
    return s[(std::size_t)y1 * (w + 1) + x1] - s[(std::size_t)y0 * (w + 1) + x1] -
           s[(std::size_t)y1 * (w + 1) + x0] + s[(std::size_t)y0 * (w + 1) + x0];
  }
};

}  // namespace

ProposalSet generate_proposals(const Sample& image, const ProposalConfig& cfg) {
  if (image.width < 4 || image.height < 4)
    throw std::runtime_error("generate_proposals: image too small");
  const int W = image.width, H = image.height;
  const Integral integ(edge_map(image), W, H);

  std::vector<Box> windows;
  std::set<std::tuple<int, int, int, int>> seen;
  const int min_side = std::min(W, H);
  for (double sc : cfg.scales)
    for (double ar : cfg.aspect_ratios) {
      const double base = sc * min_side;
      int bw = std::clamp((int)std::lround(base * std::sqrt(ar)), 4, W);
      int bh = std::clamp((int)std::lround(base / std::sqrt(ar)), 4, H);
      const int sx = std::max(1, (int)std::lround(cfg.stride_frac * bw));
      const int sy = std::max(1, (int)std::lround(cfg.stride_frac * bh));
      for (int y0 = 0;; y0 += sy) {
        if (y0 > H - bh) break;
        for (int x0 = 0;; x0 += sx) {
          if (x0 > W - bw) break;
          if (seen.emplace(x0, y0, bw, bh).second)
            windows.push_back(Box{x0, y0, x0 + bw, y0 + bh, {}, {}});
          if (x0 == W - bw) break;
          if (x0 + sx > W - bw) x0 = W - bw - sx;  // flush final column
        }
        if (y0 == H - bh) break;
        if (y0 + sy > H - bh) y0 = H - bh - sy;
      }
    }

  std::vector<double> raw(windows.size(), 0.0);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const Box& b = windows[i];
    const double total = integ.sum(b.x0, b.y0, b.x1, b.y1);
    if (total <= 0.0) continue;
    // 1-px band just inside the boundary carries the straddling edge mass.
    const double inner =
        (b.x1 - b.x0 > 2 && b.y1 - b.y0 > 2)
            ? integ.sum(b.x0 + 1, b.y0 + 1, b.x1 - 1, b.y1 - 1)
            : 0.0;
    const double ring = total - inner;
    const double density = total / (double)b.area();
    raw[i] = density * (1.0 - ring / total);
  }
  double mn = raw.empty() ? 0.0 : *std::min_element(raw.begin(), raw.end());
  double mx = raw.empty() ? 0.0 : *std::max_element(raw.begin(), raw.end());
  for (auto& v : raw) v = mx > mn ? (v - mn) / (mx - mn) : 0.0;

  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return raw[a] > raw[b]; });

  // Greedy IoU diversification while applying the cap: score order alone
  // piles the budget onto near-duplicates of the most textured region, so
  // skip windows too close to an already kept one and backfill by score if
  // the diversified pass leaves budget unused.
  ProposalSet out;
  out.image_id = image.image_id;
  const std::size_t cap = std::min((std::size_t)cfg.cap, windows.size());
  std::vector<char> taken(windows.size(), 0);
  for (std::size_t i = 0; i < order.size() && out.boxes.size() < cap; ++i) {
    const Box& cand = windows[order[i]];
    bool close = false;
    for (const Box& kept : out.boxes)
      if (iou(cand, kept) > cfg.dedup_iou) {
        close = true;
        break;
      }
    if (close) continue;
    taken[i] = 1;
    Box b = cand;
    b.score = raw[order[i]];
    out.boxes.push_back(b);
  }
  for (std::size_t i = 0; i < order.size() && out.boxes.size() < cap; ++i) {
    if (taken[i]) continue;
    Box b = windows[order[i]];
    b.score = raw[order[i]];
    out.boxes.push_back(b);
  }
  std::stable_sort(out.boxes.begin(), out.boxes.end(),
                   [](const Box& a, const Box& b) { return *a.score > *b.score; });
  return out;
}

double recall_at_iou(const ProposalSet& proposals, const std::vector<Box>& gt,
                     double iou_min) {
  if (gt.empty()) throw std::runtime_error("recall_at_iou: empty GT");
  int hit = 0;
  for (const Box& g : gt)
    for (const Box& p : proposals.boxes)
      if (iou(g, p) >= iou_min) {
        ++hit;
        break;
      }
  return (double)hit / (double)gt.size();
}

void save_proposals(const std::string& path, const std::vector<ProposalSet>& sets) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  for (const auto& ps : sets) {
    json arr = json::array();
    for (const auto& b : ps.boxes)
      arr.push_back({{"x0", b.x0}, {"y0", b.y0}, {"x1", b.x1}, {"y1", b.y1},
                     {"score", b.score.value_or(0.0)}});
    json rec = {{"image_id", ps.image_id}, {"generator", ps.generator_tag},
                {"boxes", arr}};
    os << rec.dump() << "\n";
  }
}

std::vector<ProposalSet> load_proposals(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::vector<ProposalSet> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    ProposalSet ps;
    ps.image_id = rec.at("image_id").get<int>();
    if (rec.contains("generator")) ps.generator_tag = rec["generator"].get<std::string>();
    for (const auto& jb : rec.at("boxes")) {
      Box b{jb.at("x0").get<int>(), jb.at("y0").get<int>(), jb.at("x1").get<int>(),
            jb.at("y1").get<int>(), {}, jb.value("score", 0.0)};
      ps.boxes.push_back(b);
    }
    out.push_back(std::move(ps));
  }
  return out;
}

}  // namespace wccn
