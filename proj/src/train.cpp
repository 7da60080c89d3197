#include "wccn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "wccn/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace wccn {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw std::runtime_error("train: learning_rate must be > 0");
  if (epochs < 1) throw std::runtime_error("train: epochs must be >= 1");
  if (batch_size < 1) throw std::runtime_error("train: batch_size must be >= 1");
  if (seg_warmup_epochs < 0)
    throw std::runtime_error("train: seg_warmup_epochs must be >= 0");
  cascade.validate();
}

std::string TrainConfig::to_json() const {
  json j = {{"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"momentum", momentum},
            {"weight_decay", weight_decay},
            {"rng_seed", rng_seed},
            {"scales", scales},
            {"checkpoint_every", checkpoint_every},
            {"seg_warmup_epochs", seg_warmup_epochs},
            {"cascade",
             {{"num_classes", cascade.num_classes},
              {"stages", cascade.stages == Stages::Three ? "three" : "two"},
              {"pooling", cascade.pooling == GlobalPool::GAP ? "gap" : "gmp"},
              {"candidate_k", cascade.candidate_k},
              {"candidate_cap", cascade.candidate_cap},
              {"cam_threshold", cascade.cam_threshold},
              {"refine_base", cascade.refine_base},
              {"refine_kstd", cascade.refine_kstd},
              {"lambda_gap", cascade.loss_weights.gap},
              {"lambda_mil", cascade.loss_weights.mil},
              {"lambda_seg", cascade.loss_weights.seg},
              {"seg_candidates", cascade.seg_candidates}}}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  if (j.contains("scales")) c.scales = j["scales"].get<std::vector<int>>();
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.seg_warmup_epochs = j.value("seg_warmup_epochs", c.seg_warmup_epochs);
  if (j.contains("cascade")) {
    const auto& k = j["cascade"];
    c.cascade.num_classes = k.value("num_classes", c.cascade.num_classes);
    c.cascade.stages = k.value("stages", "two") == std::string("three") ? Stages::Three
                                                                        : Stages::Two;
    c.cascade.pooling = k.value("pooling", "gap") == std::string("gmp")
                            ? GlobalPool::GMP
                            : GlobalPool::GAP;
    c.cascade.candidate_k = k.value("candidate_k", c.cascade.candidate_k);
    c.cascade.candidate_cap = k.value("candidate_cap", c.cascade.candidate_cap);
    c.cascade.cam_threshold = k.value("cam_threshold", c.cascade.cam_threshold);
    c.cascade.refine_base = k.value("refine_base", c.cascade.refine_base);
    c.cascade.refine_kstd = k.value("refine_kstd", c.cascade.refine_kstd);
    c.cascade.loss_weights.gap = k.value("lambda_gap", 1.0);
    c.cascade.loss_weights.mil = k.value("lambda_mil", 1.0);
    c.cascade.loss_weights.seg = k.value("lambda_seg", 1.0);
    c.cascade.seg_candidates = k.value("seg_candidates", true);
  }
  return c;
}

Sgd::Sgd(ParamRegistry& reg, double lr_, double momentum_, double weight_decay_)
    : lr(lr_), momentum(momentum_), weight_decay(weight_decay_) {
  for (auto& [name, t] : reg.items) velocity.push_back(Tensor::zeros(t.shape()));
}

void Sgd::step(ParamRegistry& reg) {
  for (std::size_t i = 0; i < reg.items.size(); ++i) {
    Tensor& p = reg.items[i].second;
    if (p.grad().size() != p.size()) continue;  // never touched this step
    auto& v = velocity[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = p.grad()[k] + weight_decay * p.data()[k];
      v[k] = momentum * v[k] + g;
      p.data()[k] -= lr * v[k];
    }
  }
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write("WCKP", 4);
  put_u32(os, ck.version);
  json meta = {{"config", json::parse(ck.config_json)},
               {"step", ck.step},
               {"rng_state", ck.rng_state}};
  const std::string mtext = meta.dump();
  put_u32(os, (std::uint32_t)mtext.size());
  os.write(mtext.data(), (std::streamsize)mtext.size());
  write_tensors(os, ck.tensors);
  if (!os) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "WCKP", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  Checkpoint ck;
  ck.version = get_u32(is);
  if (ck.version != 1)
    throw std::runtime_error("checkpoint: unsupported version");
  const std::uint32_t mlen = get_u32(is);
  std::string mtext(mlen, '\0');
  is.read(mtext.data(), mlen);
  json meta = json::parse(mtext);
  ck.config_json = meta.at("config").dump();
  ck.step = meta.at("step").get<int>();
  ck.rng_state = meta.at("rng_state").get<std::string>();
  ck.tensors = read_tensors(is);
  return ck;
}

namespace {

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
}

Checkpoint make_checkpoint(CascadeModel& model, const Sgd& opt, const TrainConfig& cfg,
                           int step, const std::mt19937_64& rng) {
  Checkpoint ck;
  ck.config_json = cfg.to_json();
  ck.step = step;
  ck.rng_state = rng_to_string(rng);
  for (auto& [name, t] : model.params.items) ck.tensors.emplace_back(name, t);
  for (std::size_t i = 0; i < opt.velocity.size(); ++i)
    ck.tensors.emplace_back("opt/" + model.params.items[i].first + "/velocity",
                            opt.velocity[i]);
  return ck;
}

const ProposalSet* find_proposals(const std::vector<ProposalSet>& proposals, int id) {
  for (const auto& p : proposals)
    if (p.image_id == id) return &p;
  return nullptr;
}

}  // namespace

TrainResult train(const Dataset& ds, const std::vector<ProposalSet>& proposals,
                  const TrainConfig& cfg, const std::string& out_dir,
                  const std::string& resume_path) {
  cfg.validate();
  auto train_split = ds.split("train");
  if (train_split.empty()) throw std::runtime_error("train: no training samples");
  for (const Sample* s : train_split)
    if (!find_proposals(proposals, s->image_id))
      throw std::runtime_error("train: missing proposals for image " +
                               std::to_string(s->image_id));

  TrainResult res;
  res.model = std::make_unique<CascadeModel>(cfg.cascade);
  Sgd opt(res.model->params, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  std::mt19937_64 rng(cfg.rng_seed);
  int start_epoch = 0;

  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    res.model->params.load_values(ck.tensors);
    for (std::size_t i = 0; i < opt.velocity.size(); ++i) {
      const std::string vn = "opt/" + res.model->params.items[i].first + "/velocity";
      for (const auto& [n, t] : ck.tensors)
        if (n == vn) opt.velocity[i].data() = t.data();
    }
    rng_from_string(rng, ck.rng_state);
    start_epoch = ck.step;
  } else {
    res.model->init(cfg.rng_seed);
  }

  std::ofstream csv;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    csv.open(fs::path(out_dir) / "metrics.csv",
             resume_path.empty() ? std::ios::out : std::ios::app);
    if (resume_path.empty())
      csv << "epoch,loss_gap,loss_mil,loss_seg,loss_total,seconds\n";
  }

  std::vector<std::size_t> order(train_split.size());
  std::uniform_int_distribution<std::size_t> scale_pick(0, cfg.scales.size() - 1);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const bool seg_warm = epoch < cfg.seg_warmup_epochs;
    res.model->cfg.loss_weights.seg = seg_warm ? 0.0 : cfg.cascade.loss_weights.seg;
    res.model->cfg.seg_candidates = !seg_warm && cfg.cascade.seg_candidates;
    // Reset before shuffling so the epoch permutation depends only on the RNG
    // state, keeping resumed runs identical to uninterrupted ones.
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats st;
    st.epoch = epoch + 1;
    std::size_t batches = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
      const std::size_t end = std::min(pos + cfg.batch_size, order.size());
      std::vector<BatchItem> batch;
      for (std::size_t i = pos; i < end; ++i) {
        const Sample* s = train_split[order[i]];
        BatchItem item;
        item.sample = s;
        item.proposals = find_proposals(proposals, s->image_id);
        item.scaled = scale_sample(*s, cfg.scales[scale_pick(rng)]);
        batch.push_back(std::move(item));
      }
      res.model->params.zero_grads();
      ForwardResult fr = forward_cascade(*res.model, batch, true);
      const double total = fr.total.item();
      if (!std::isfinite(total) || !std::isfinite(fr.mean_gap) ||
          !std::isfinite(fr.mean_mil) || !std::isfinite(fr.mean_seg)) {
        std::string ids;
        for (const auto& it : batch) ids += std::to_string(it.sample->image_id) + " ";
        throw std::runtime_error("train: non-finite loss on images: " + ids);
      }
      backward(fr.total);
      opt.step(res.model->params);
      st.gap += fr.mean_gap;
      st.mil += fr.mean_mil;
      st.seg += fr.mean_seg;
      st.total += total;
      ++batches;
    }
    st.gap /= batches;
    st.mil /= batches;
    st.seg /= batches;
    st.total /= batches;
    st.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(st);
    std::ostringstream line;
    line.precision(17);
    line << st.epoch << "," << st.gap << "," << st.mil << "," << st.seg << ","
         << st.total;
    std::cerr << "epoch " << st.epoch << " total " << st.total << " (gap " << st.gap
              << " mil " << st.mil << " seg " << st.seg << ") " << st.seconds << "s\n";
    if (csv.is_open()) csv << line.str() << "," << st.seconds << "\n";
    if (!out_dir.empty() && cfg.checkpoint_every > 0 &&
        (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs) {
      Checkpoint ck = make_checkpoint(*res.model, opt, cfg, epoch + 1, rng);
      save_checkpoint((fs::path(out_dir) / ("checkpoint_epoch" +
                                            std::to_string(epoch + 1) + ".wckp"))
                          .string(),
                      ck);
    }
  }
  res.model->cfg.loss_weights.seg = cfg.cascade.loss_weights.seg;
  res.model->cfg.seg_candidates = cfg.cascade.seg_candidates;
  if (!out_dir.empty()) {
    Checkpoint ck = make_checkpoint(*res.model, opt, cfg, cfg.epochs, rng);
    save_checkpoint((fs::path(out_dir) / "checkpoint.wckp").string(), ck);
  }
  return res;
}

std::unique_ptr<CascadeModel> load_cascade(const std::string& checkpoint_path,
                                           TrainConfig* out_cfg) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  TrainConfig cfg = TrainConfig::from_json(ck.config_json);
  auto model = std::make_unique<CascadeModel>(cfg.cascade);
  model->params.load_values(ck.tensors);
  if (out_cfg) *out_cfg = cfg;
  return model;
}

HiddenGT export_pseudo_gt(CascadeModel& model, const Dataset& ds,
                          const std::vector<ProposalSet>& proposals,
                          const std::string& out_path) {
  HiddenGT out;
  for (const Sample* s : ds.split("train")) {
    const ProposalSet* ps = find_proposals(proposals, s->image_id);
    if (!ps) continue;
    BatchItem item{s, ps, scale_sample(*s, std::min(s->width, s->height))};
    ForwardResult fr = forward_cascade(model, {item}, false);
    for (const auto& [c, cr] : fr.records[0].per_class) {
      if (!cr.top_box) {
        std::cerr << "pseudo-gt: image " << s->image_id << " class " << c
                  << " has no candidates, omitted\n";
        continue;
      }
      out[s->image_id].push_back(*cr.top_box);
    }
  }
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    if (!os) throw std::runtime_error("cannot open for write: " + out_path);
    for (const auto& [id, boxes] : out) {
      json arr = json::array();
      for (const auto& b : boxes)
        arr.push_back({{"x0", b.x0}, {"y0", b.y0}, {"x1", b.x1}, {"y1", b.y1},
                       {"class", b.class_id.value()}});
      os << json{{"image_id", id}, {"boxes", arr}}.dump() << "\n";
    }
  }
  return out;
}

HiddenGT load_pseudo_gt(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  HiddenGT gt;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    const int id = rec.at("image_id").get<int>();
    for (const auto& jb : rec.at("boxes"))
      gt[id].push_back(Box{jb.at("x0").get<int>(), jb.at("y0").get<int>(),
                           jb.at("x1").get<int>(), jb.at("y1").get<int>(),
                           jb.at("class").get<int>(), {}});
  }
  return gt;
}

DetectorModel::DetectorModel(int num_classes_) : num_classes(num_classes_) {
  trunk = Trunk(params, "trunk");
  head = MilHead(params, "det", num_classes + 1);
}

std::unique_ptr<DetectorModel> retrain_supervised(const Dataset& ds,
                                                  const HiddenGT& pseudo_gt,
                                                  const std::vector<ProposalSet>& proposals,
                                                  const TrainConfig& cfg,
                                                  const std::string& out_dir) {
  cfg.validate();
  const int C = cfg.cascade.num_classes;
  auto model = std::make_unique<DetectorModel>(C);
  init_params(model->params, cfg.rng_seed);
  Sgd opt(model->params, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  std::mt19937_64 rng(cfg.rng_seed);

  // Per-proposal labels: positive >= 0.5 IoU to a pseudo box, background
  // < 0.3; in-between ignored.
  struct RoiLabel {
    Box box;
    int cls;  // 1..C, or C+1 background
  };
  struct ImageRois {
    const Sample* sample;
    std::vector<RoiLabel> pos, neg;
  };
  std::vector<ImageRois> images;
  for (const Sample* s : ds.split("train")) {
    auto git = pseudo_gt.find(s->image_id);
    const ProposalSet* ps = find_proposals(proposals, s->image_id);
    if (!ps || git == pseudo_gt.end()) continue;
    ImageRois ir;
    ir.sample = s;
    for (const Box& p : ps->boxes) {
      double best = 0.0;
      int best_cls = 0;
      for (const Box& g : git->second) {
        const double v = iou(p, g);
        if (v > best) {
          best = v;
          best_cls = g.class_id.value();
        }
      }
      if (best >= 0.5)
        ir.pos.push_back({p, best_cls});
      else if (best < 0.3)
        ir.neg.push_back({p, C + 1});
    }
    if (!ir.pos.empty() || !ir.neg.empty()) images.push_back(std::move(ir));
  }
  if (images.empty()) throw std::runtime_error("retrain: no usable training rois");

  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t idx : order) {
      const ImageRois& ir = images[idx];
      // Up to 8 positives and 24 negatives per image, sampled per epoch.
      std::vector<RoiLabel> chosen;
      auto sample_from = [&](const std::vector<RoiLabel>& src, std::size_t cap) {
        std::vector<std::size_t> ids(src.size());
        std::iota(ids.begin(), ids.end(), 0);
        std::shuffle(ids.begin(), ids.end(), rng);
        for (std::size_t i = 0; i < std::min(cap, ids.size()); ++i)
          chosen.push_back(src[ids[i]]);
      };
      sample_from(ir.pos, 8);
      sample_from(ir.neg, 24);
      if (chosen.empty()) continue;

      const Sample& s = *ir.sample;
      ScaledImage si = scale_sample(s, std::min(s.width, s.height));
      model->params.zero_grads();
      Tensor feats = model->trunk.forward(si.image);
      const int fh = (int)feats.shape()[2], fw = (int)feats.shape()[3];
      std::vector<Roi> rois;
      Tensor onehot = Tensor::zeros({chosen.size(), (std::size_t)C + 1});
      for (std::size_t i = 0; i < chosen.size(); ++i) {
        rois.push_back(to_feature_roi(chosen[i].box, s.width, s.height, fw, fh));
        onehot.data()[i * (C + 1) + (chosen[i].cls - 1)] = 1.0;
      }
      Tensor f = model->head.forward(feats, rois);
      Tensor logp = log_op(softmax_axis(f, 1));
      Tensor loss = scale(sum_all(mul(logp, onehot)), -1.0 / (double)chosen.size());
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw std::runtime_error("retrain: non-finite loss on image " +
                                 std::to_string(s.image_id));
      backward(loss);
      opt.step(model->params);
      loss_sum += lv;
      ++count;
    }
    std::cerr << "retrain epoch " << epoch + 1 << " ce "
              << (count ? loss_sum / count : 0.0) << "\n";
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    save_detector((fs::path(out_dir) / "detector.wckp").string(), *model);
  }
  return model;
}

std::vector<Box> detector_detect(DetectorModel& model, const Sample& sample,
                                 const ProposalSet& proposals,
                                 const std::vector<int>& scales, double nms_iou,
                                 double score_min) {
  const int C = model.num_classes;
  if (proposals.boxes.empty()) return {};
  std::vector<std::vector<double>> probs(proposals.boxes.size(),
                                         std::vector<double>(C + 1, 0.0));
  for (int sc : scales) {
    ScaledImage si = scale_sample(sample, sc);
    Tensor feats = model.trunk.forward(si.image);
    const int fh = (int)feats.shape()[2], fw = (int)feats.shape()[3];
    std::vector<Roi> rois;
    for (const Box& b : proposals.boxes)
      rois.push_back(to_feature_roi(b, sample.width, sample.height, fw, fh));
    Tensor f = model.head.forward(feats, rois);
    for (std::size_t j = 0; j < rois.size(); ++j) {
      double m = f.data()[j * (C + 1)];
      for (int c = 1; c <= C; ++c) m = std::max(m, f.data()[j * (C + 1) + c]);
      double sum = 0.0;
      std::vector<double> e(C + 1);
      for (int c = 0; c <= C; ++c) {
        e[c] = std::exp(f.data()[j * (C + 1) + c] - m);
        sum += e[c];
      }
      for (int c = 0; c <= C; ++c) probs[j][c] += e[c] / sum;
    }
  }
  std::vector<Box> out;
  for (int c = 1; c <= C; ++c) {
    std::vector<Box> cand;
    for (std::size_t j = 0; j < proposals.boxes.size(); ++j) {
      const double p = probs[j][c - 1] / (double)scales.size();
      if (p < score_min) continue;
      Box b = proposals.boxes[j];
      b.class_id = c;
      b.score = p;
      cand.push_back(b);
    }
    for (const Box& b : nms(cand, nms_iou)) out.push_back(b);
  }
  return out;
}

void save_detector(const std::string& path, DetectorModel& model) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.emplace_back("__num_classes",
                       Tensor::scalar((double)model.num_classes));
  for (auto& [name, t] : model.params.items) tensors.emplace_back(name, t);
  save_tensors(path, tensors);
}

std::unique_ptr<DetectorModel> load_detector(const std::string& path) {
  auto tensors = load_tensors(path);
  int C = 0;
  for (const auto& [n, t] : tensors)
    if (n == "__num_classes") C = (int)t.data()[0];
  if (C < 1) throw std::runtime_error("detector checkpoint missing class count");
  auto model = std::make_unique<DetectorModel>(C);
  model->params.load_values(tensors);
  return model;
}

}  // namespace wccn
