#include "wccn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace wccn {

std::vector<const Sample*> Dataset::split(const std::string& name) const {
  std::vector<const Sample*> out;
  for (const auto& s : samples)
    if (s.split == name) out.push_back(&s);
  return out;
}

const Sample& Dataset::by_id(int image_id) const {
  for (const auto& s : samples)
    if (s.image_id == image_id) return s;
  throw std::runtime_error("no sample with image_id " + std::to_string(image_id));
}

namespace {

struct Rgb {
  int r, g, b;
};

// Base colors per shape kind; classes beyond 4 cycle shapes with new hues.
const Rgb kPalette[] = {{205, 65, 60},  {60, 185, 70},  {70, 95, 215},
                        {220, 200, 60}, {190, 70, 200}, {60, 200, 200},
                        {235, 140, 50}, {120, 120, 220}};

struct Painter {
  int w, h;
  std::vector<std::uint8_t>& px;
  int minx, miny, maxx, maxy;
  bool touched = false;

  void plot(int x, int y, Rgb c) {
    if (x < 0 || x >= w || y < 0 || y >= h) return;
    auto* p = &px[((std::size_t)y * w + x) * 3];
    p[0] = (std::uint8_t)std::clamp(c.r, 0, 255);
    p[1] = (std::uint8_t)std::clamp(c.g, 0, 255);
    p[2] = (std::uint8_t)std::clamp(c.b, 0, 255);
    minx = touched ? std::min(minx, x) : x;
    maxx = touched ? std::max(maxx, x) : x;
    miny = touched ? std::min(miny, y) : y;
    maxy = touched ? std::max(maxy, y) : y;
    touched = true;
  }
};

// kind: 0 square, 1 disk, 2 triangle, 3 cross
void draw_shape(Painter& p, int kind, int x0, int y0, int s, Rgb c) {
  switch (kind & 3) {
    case 0:
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) p.plot(x0 + x, y0 + y, c);
      break;
    case 1: {
      const double r = s / 2.0, cx = x0 + r - 0.5, cy = y0 + r - 0.5;
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const double dx = x0 + x - cx, dy = y0 + y - cy;
          if (dx * dx + dy * dy <= r * r) p.plot(x0 + x, y0 + y, c);
        }
      break;
    }
    case 2:
      for (int y = 0; y < s; ++y) {
        const int half = (int)std::lround((y + 1) * (s / 2.0) / s);
        for (int x = s / 2 - half; x <= s / 2 + half; ++x) p.plot(x0 + x, y0 + y, c);
      }
      break;
    case 3: {
      const int t = std::max(2, s / 3);
      const int off = (s - t) / 2;
      for (int y = 0; y < t; ++y)
        for (int x = 0; x < s; ++x) p.plot(x0 + x, y0 + off + y, c);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < t; ++x) p.plot(x0 + off + x, y0 + y, c);
      break;
    }
  }
}

void draw_stroke(Painter& p, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coord(0, p.w - 1), gray(50, 180);
  const int x0 = coord(rng), y0 = coord(rng), x1 = coord(rng), y1 = coord(rng);
  const Rgb c{gray(rng), gray(rng), gray(rng)};
  const int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0)) + 1;
  const bool track = p.touched;  // strokes must not extend GT extents
  for (int i = 0; i < steps; ++i) {
    const int x = x0 + (x1 - x0) * i / steps;
    const int y = y0 + (y1 - y0) * i / steps;
    if (x >= 0 && x < p.w && y >= 0 && y < p.h) {
      auto* q = &p.px[((std::size_t)y * p.w + x) * 3];
      q[0] = (std::uint8_t)c.r;
      q[1] = (std::uint8_t)c.g;
      q[2] = (std::uint8_t)c.b;
    }
  }
  (void)track;
}

}  // namespace

std::pair<Dataset, HiddenGT> generate_dataset(const DatasetConfig& cfg) {
  if (cfg.num_classes < 2) throw std::runtime_error("generate_dataset: need >= 2 classes");
  if (cfg.image_size < 32) throw std::runtime_error("generate_dataset: image_size must be >= 32");
  static const char* kKindNames[] = {"square", "disk", "triangle", "cross"};
  Dataset ds;
  ds.num_classes = cfg.num_classes;
  ds.image_size = cfg.image_size;
  ds.seed = cfg.rng_seed;
  for (int c = 0; c < cfg.num_classes; ++c)
    ds.class_names.push_back(std::string(kKindNames[c & 3]) +
                             (c >= 4 ? "_" + std::to_string(c / 4) : ""));
  HiddenGT gt;

  const int total = cfg.num_train + cfg.num_val + cfg.num_test;
  const int W = cfg.image_size;
  for (int id = 0; id < total; ++id) {
    std::mt19937_64 rng(cfg.rng_seed ^ ((std::uint64_t)(id + 1) * 0x9E3779B97F4A7C15ull));
    Sample s;
    s.image_id = id;
    s.width = s.height = W;
    s.split = id < cfg.num_train ? "train"
              : id < cfg.num_train + cfg.num_val ? "val" : "test";
    s.labels.assign(cfg.num_classes, 0);
    s.pixels.resize((std::size_t)W * W * 3);

    std::uniform_int_distribution<int> noise(-18, 18);
    for (std::size_t i = 0; i < (std::size_t)W * W; ++i) {
      const int g = 112 + noise(rng);
      s.pixels[i * 3 + 0] = (std::uint8_t)std::clamp(g + noise(rng) / 3, 0, 255);
      s.pixels[i * 3 + 1] = (std::uint8_t)std::clamp(g + noise(rng) / 3, 0, 255);
      s.pixels[i * 3 + 2] = (std::uint8_t)std::clamp(g + noise(rng) / 3, 0, 255);
    }
    Painter p{W, W, s.pixels, 0, 0, 0, 0};
    const int strokes = (int)std::lround(3.0 * cfg.clutter_level);
    for (int k = 0; k < strokes; ++k) draw_stroke(p, rng);

    std::uniform_int_distribution<int> nobj(cfg.objects_min, cfg.objects_max);
    std::uniform_int_distribution<int> cls(1, cfg.num_classes);
    const int smin = std::max(8, (int)std::lround(0.22 * W));
    const int smax = std::max(smin + 1, (int)std::lround(0.40 * W));
    std::uniform_int_distribution<int> size_d(smin, smax);
    std::uniform_int_distribution<int> jit(-30, 30);

    const int n = nobj(rng);
    std::vector<Box> placed;
    for (int k = 0; k < n; ++k) {
      bool ok = false;
      for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
        const int c = cls(rng);
        const int sz = size_d(rng);
        std::uniform_int_distribution<int> pos(1, W - sz - 1);
        const int x0 = pos(rng), y0 = pos(rng);
        Box cand{x0, y0, x0 + sz, y0 + sz, c, {}};
        bool clash = false;
        for (const auto& q : placed)
          if (iou(cand, q) > 0.2) {
            clash = true;
            break;
          }
        if (clash) continue;
        const Rgb base = kPalette[(c - 1) % 8];
        const Rgb col{base.r + jit(rng), base.g + jit(rng), base.b + jit(rng)};
        p.touched = false;
        draw_shape(p, (c - 1) & 3, x0, y0, sz, col);
        Box tight{p.minx, p.miny, p.maxx + 1, p.maxy + 1, c, {}};
        placed.push_back(cand);
        gt[id].push_back(tight);
        s.labels[c - 1] = 1;
        ok = true;
      }
      if (!ok)
        throw std::runtime_error("generate_dataset: placement failed for image " +
                                 std::to_string(id));
    }
    ds.samples.push_back(std::move(s));
  }
  return {std::move(ds), std::move(gt)};
}

void write_ppm(const std::string& path, int w, int h,
               const std::vector<std::uint8_t>& rgb) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os << "P6\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()), (std::streamsize)rgb.size());
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<std::uint8_t> read_ppm(const std::string& path, int& w, int& h) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  int maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0)
    throw std::runtime_error("bad PPM header: " + path);
  is.get();  // single whitespace after header
  std::vector<std::uint8_t> rgb((std::size_t)w * h * 3);
  is.read(reinterpret_cast<char*>(rgb.data()), (std::streamsize)rgb.size());
  if (!is) throw std::runtime_error("truncated PPM: " + path);
  return rgb;
}

void save_dataset(const std::string& root, const Dataset& ds, const HiddenGT& gt) {
  fs::create_directories(fs::path(root) / "images");
  json manifest = {{"num_classes", ds.num_classes},
                   {"image_size", ds.image_size},
                   {"seed", ds.seed},
                   {"class_names", ds.class_names},
                   {"num_samples", ds.samples.size()}};
  std::ofstream(fs::path(root) / "manifest.json") << manifest.dump(2) << "\n";

  std::ofstream labels(fs::path(root) / "labels.jsonl");
  for (const auto& s : ds.samples) {
    write_ppm((fs::path(root) / "images" / ("img_" + std::to_string(s.image_id) + ".ppm"))
                  .string(),
              s.width, s.height, s.pixels);
    json rec = {{"image_id", s.image_id}, {"labels", s.labels}, {"split", s.split}};
    labels << rec.dump() << "\n";
  }

  std::ofstream gts(fs::path(root) / "gt_boxes.jsonl");
  for (const auto& [id, boxes] : gt) {
    json arr = json::array();
    for (const auto& b : boxes)
      arr.push_back({{"x0", b.x0}, {"y0", b.y0}, {"x1", b.x1}, {"y1", b.y1},
                     {"class", b.class_id.value()}});
    json rec = {{"image_id", id}, {"boxes", arr}};
    gts << rec.dump() << "\n";
  }
}

Dataset load_dataset(const std::string& root) {
  const auto mpath = fs::path(root) / "manifest.json";
  std::ifstream mf(mpath);
  if (!mf) throw std::runtime_error("missing file: " + mpath.string());
  json manifest;
  try {
    mf >> manifest;
  } catch (const std::exception& e) {
    throw std::runtime_error("corrupt file " + mpath.string() + ": " + e.what());
  }
  Dataset ds;
  ds.num_classes = manifest.at("num_classes").get<int>();
  ds.image_size = manifest.at("image_size").get<int>();
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  ds.class_names = manifest.at("class_names").get<std::vector<std::string>>();

  const auto lpath = fs::path(root) / "labels.jsonl";
  std::ifstream lf(lpath);
  if (!lf) throw std::runtime_error("missing file: " + lpath.string());
  std::string line;
  int lineno = 0;
  while (std::getline(lf, line)) {
    ++lineno;
    if (line.empty()) continue;
    Sample s;
    try {
      json rec = json::parse(line);
      s.image_id = rec.at("image_id").get<int>();
      s.labels = rec.at("labels").get<LabelVector>();
      s.split = rec.at("split").get<std::string>();
      if ((int)s.labels.size() != ds.num_classes)
        throw std::runtime_error("label length does not match num_classes");
      for (int v : s.labels)
        if (v != 0 && v != 1) throw std::runtime_error("labels must be 0/1");
    } catch (const std::exception& e) {
      throw std::runtime_error(lpath.string() + " line " + std::to_string(lineno) +
                               ": " + e.what());
    }
    const auto ipath =
        fs::path(root) / "images" / ("img_" + std::to_string(s.image_id) + ".ppm");
    s.pixels = read_ppm(ipath.string(), s.width, s.height);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

ScaledImage scale_sample(const Sample& s, int scale) {
  if (scale < 1) throw std::runtime_error("scale_sample: scale must be positive");
  const int ow = s.width, oh = s.height;
  int nw, nh;
  if (ow <= oh) {
    nw = scale;
    nh = (int)std::lround((double)oh * scale / ow);
  } else {
    nh = scale;
    nw = (int)std::lround((double)ow * scale / oh);
  }
  Tensor t = Tensor::zeros({1, 3, (std::size_t)nh, (std::size_t)nw});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < nh; ++y) {
      const double sy = nh == 1 ? 0.0 : (double)y * (oh - 1) / (nh - 1);
      const int y0 = (int)sy, y1 = std::min(y0 + 1, oh - 1);
      const double fy = sy - y0;
      for (int x = 0; x < nw; ++x) {
        const double sx = nw == 1 ? 0.0 : (double)x * (ow - 1) / (nw - 1);
        const int x0 = (int)sx, x1 = std::min(x0 + 1, ow - 1);
        const double fx = sx - x0;
        auto px = [&](int yy, int xx) {
          return (double)s.pixels[((std::size_t)yy * ow + xx) * 3 + c] / 255.0;
        };
        const double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) +
                         fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
        t.data()[((std::size_t)c * nh + y) * nw + x] = v;
      }
    }
  ScaledImage out;
  out.image = t;
  out.width = nw;
  out.height = nh;
  out.orig_width = ow;
  out.orig_height = oh;
  return out;
}

std::vector<ScaledImage> multi_scale_batch(const std::vector<const Sample*>& samples,
                                           const std::vector<int>& scales,
                                           std::uint64_t rng_seed) {
  if (scales.empty()) throw std::runtime_error("multi_scale_batch: no scales");
  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, scales.size() - 1);
  std::vector<ScaledImage> out;
  out.reserve(samples.size());
  for (const Sample* s : samples) out.push_back(scale_sample(*s, scales[pick(rng)]));
  return out;
}

}  // namespace wccn
