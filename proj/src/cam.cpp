#include "wccn/cam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace wccn {

CAM extract_cam(const Tensor& activations, int out_w, int out_h) {
  std::vector<std::size_t> s = activations.shape();
  if (s.size() == 4) {
    if (s[0] != 1)
      detail::shape_fail("extract_cam", "batch of 1", s);
    s.erase(s.begin());
  }
  if (s.size() != 3) detail::shape_fail("extract_cam", "[C,h,w]", activations.shape());
  const int C = (int)s[0], h = (int)s[1], w = (int)s[2];
  CAM cam;
  cam.num_classes = C;
  cam.width = out_w;
  cam.height = out_h;
  cam.maps.resize((std::size_t)C * out_w * out_h);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < out_h; ++y) {
      const int sy = (int)((long long)y * h / out_h);
      for (int x = 0; x < out_w; ++x) {
        const int sx = (int)((long long)x * w / out_w);
        cam.maps[((std::size_t)c * out_h + y) * out_w + x] =
            activations.data()[((std::size_t)c * h + sy) * w + sx];
      }
    }
  return cam;
}

std::vector<Box> cam_to_boxes(const CAM& cam, int class_id, double threshold_frac) {
  if (threshold_frac <= 0.0 || threshold_frac >= 1.0)
    throw std::runtime_error("cam_to_boxes: threshold_frac must be in (0,1)");
  const int w = cam.width, h = cam.height;
  const double* ch = cam.channel(class_id);
  double mx = ch[0];
  for (int i = 1; i < w * h; ++i) mx = std::max(mx, ch[i]);
  if (mx <= 0.0) return {};
  const double thr = threshold_frac * mx;

  std::vector<int> comp(w * h, -1);
  struct CompInfo {
    Box box;
    double peak;
  };
  std::vector<CompInfo> comps;
  std::vector<int> stack;
  for (int start = 0; start < w * h; ++start) {
    if (comp[start] != -1 || !(ch[start] > thr)) continue;
    const int id = (int)comps.size();
    CompInfo info{{start % w, start / w, start % w + 1, start / w + 1, {}, {}},
                  ch[start]};
    stack.push_back(start);
    comp[start] = id;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int px = p % w, py = p / w;
      info.box.x0 = std::min(info.box.x0, px);
      info.box.y0 = std::min(info.box.y0, py);
      info.box.x1 = std::max(info.box.x1, px + 1);
      info.box.y1 = std::max(info.box.y1, py + 1);
      info.peak = std::max(info.peak, ch[p]);
      const int nx[4] = {px - 1, px + 1, px, px};
      const int ny[4] = {py, py, py - 1, py + 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || nx[k] >= w || ny[k] < 0 || ny[k] >= h) continue;
        const int q = ny[k] * w + nx[k];
        if (comp[q] == -1 && ch[q] > thr) {
          comp[q] = id;
          stack.push_back(q);
        }
      }
    }
    comps.push_back(info);
  }
  std::stable_sort(comps.begin(), comps.end(),
                   [](const CompInfo& a, const CompInfo& b) { return a.peak > b.peak; });
  std::vector<Box> out;
  out.reserve(comps.size());
  for (auto& c : comps) {
    c.box.class_id = class_id;
    c.box.score = c.peak;
    out.push_back(c.box);
  }
  return out;
}

std::vector<Box> select_candidates(const std::vector<Box>& cam_boxes,
                                   const std::vector<Box>& proposals, int k) {
  if (k < 1) throw std::runtime_error("select_candidates: k must be >= 1");
  if (proposals.empty()) throw std::runtime_error("select_candidates: no proposals");
  std::vector<Box> out;
  for (const Box& cb : cam_boxes) {
    std::vector<std::size_t> order(proposals.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> ious(proposals.size());
    for (std::size_t i = 0; i < proposals.size(); ++i) ious[i] = iou(cb, proposals[i]);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return ious[a] > ious[b]; });
    const std::size_t take = std::min((std::size_t)k, proposals.size());
    for (std::size_t i = 0; i < take; ++i) {
      const Box& p = proposals[order[i]];
      bool dup = false;
      for (const Box& q : out)
        if (q.same_rect(p)) {
          dup = true;
          break;
        }
      if (!dup) out.push_back(p);
    }
  }
  return out;
}

double RefinedBox::iou(const Box& b) const {
  const double ix = std::min(x1, (double)b.x1) - std::max(x0, (double)b.x0);
  const double iy = std::min(y1, (double)b.y1) - std::max(y0, (double)b.y0);
  const double inter = std::max(ix, 0.0) * std::max(iy, 0.0);
  const double uni = (x1 - x0) * (y1 - y0) + (double)b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::optional<RefinedBox> cam_moment_box(const CAM& cam, int class_id,
                                         const Box& component, double peak,
                                         double base_frac, double kstd,
                                         int out_w, int out_h) {
  const int w = cam.width, h = cam.height;
  const double* ch = cam.channel(class_id);
  const double floor_v = base_frac * peak;
  double wsum = 0.0, mx = 0.0, my = 0.0;
  for (int y = component.y0; y < component.y1; ++y)
    for (int x = component.x0; x < component.x1; ++x) {
      const double v = std::max(ch[y * w + x] - floor_v, 0.0);
      wsum += v;
      mx += v * (x + 0.5);
      my += v * (y + 0.5);
    }
  if (wsum <= 0.0) return std::nullopt;
  mx /= wsum;
  my /= wsum;
  double vx = 0.0, vy = 0.0;
  for (int y = component.y0; y < component.y1; ++y)
    for (int x = component.x0; x < component.x1; ++x) {
      const double v = std::max(ch[y * w + x] - floor_v, 0.0);
      vx += v * (x + 0.5 - mx) * (x + 0.5 - mx);
      vy += v * (y + 0.5 - my) * (y + 0.5 - my);
    }
  vx = std::sqrt(vx / wsum);
  vy = std::sqrt(vy / wsum);
  const double sx = (double)out_w / w, sy = (double)out_h / h;
  return RefinedBox{(mx - kstd * vx) * sx, (my - kstd * vy) * sy,
                    (mx + kstd * vx) * sx, (my + kstd * vy) * sy};
}

PseudoSegGT build_pseudo_seg_gt(const CAM& cam, const LabelVector& labels,
                                double threshold_frac) {
  const int w = cam.width, h = cam.height;
  const std::size_t hw = (std::size_t)w * h;
  PseudoSegGT gt;
  gt.width = w;
  gt.height = h;
  gt.G.assign(hw, (int)labels.size() + 1);  // background
  gt.alpha.assign(hw, 0.0);
  bool any = false;
  for (int c = 1; c <= (int)labels.size(); ++c) {
    if (!labels[c - 1]) continue;
    any = true;
    const double* ch = cam.channel(c);
    std::size_t peak = 0;
    double mx = ch[0];
    for (std::size_t i = 1; i < hw; ++i)
      if (ch[i] > mx) {
        mx = ch[i];
        peak = i;
      }
    const double thr = threshold_frac * mx;
    double fmin = mx, fmax = mx;
    std::vector<std::size_t> fg;
    for (std::size_t i = 0; i < hw; ++i)
      if (mx > 0.0 && ch[i] > thr) {
        fg.push_back(i);
        fmin = std::min(fmin, ch[i]);
        fmax = std::max(fmax, ch[i]);
      }
    if (fg.empty()) fg.push_back(peak);
    for (std::size_t i : fg) {
      gt.G[i] = c;
      gt.alpha[i] = fmax > fmin ? (ch[i] - fmin) / (fmax - fmin) : 1.0;
    }
    gt.present.push_back(c);
    gt.peaks.push_back(peak);
  }
  if (!any) throw std::runtime_error("build_pseudo_seg_gt: no present class");

  const int bg = (int)labels.size() + 1;
  std::size_t bg_seen = 0;
  for (std::size_t i = 0; i < hw; ++i) {
    if (gt.G[i] != bg) {
      gt.labeled.push_back(i);
    } else {
      if (bg_seen % 16 == 0) {
        gt.labeled.push_back(i);
        gt.alpha[i] = 1.0;
      }
      ++bg_seen;
    }
  }
  return gt;
}

void write_cam_pgm(const CAM& cam, int class_id, const std::string& path) {
  const int w = cam.width, h = cam.height;
  const double* ch = cam.channel(class_id);
  double mn = ch[0], mx = ch[0];
  for (int i = 1; i < w * h; ++i) {
    mn = std::min(mn, ch[i]);
    mx = std::max(mx, ch[i]);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  for (int i = 0; i < w * h; ++i) {
    const double v = mx > mn ? (ch[i] - mn) / (mx - mn) : 0.0;
    os.put((char)(unsigned char)std::lround(v * 255.0));
  }
  std::ofstream sidecar(path + ".json");
  sidecar.precision(17);
  sidecar << "{\"class\":" << class_id << ",\"min\":" << mn << ",\"max\":" << mx
          << ",\"width\":" << w << ",\"height\":" << h << "}\n";
}

}  // namespace wccn
