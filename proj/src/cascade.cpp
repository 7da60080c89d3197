#include "wccn/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace wccn {

void CascadeConfig::validate() const {
  if (num_classes < 1) throw std::runtime_error("cascade: num_classes must be >= 1");
  if (candidate_k < 1) throw std::runtime_error("cascade: candidate_k must be >= 1");
  if (candidate_cap < 1) throw std::runtime_error("cascade: candidate_cap must be >= 1");
  if (cam_threshold <= 0.0 || cam_threshold >= 1.0)
    throw std::runtime_error("cascade: cam_threshold must be in (0,1)");
  if (refine_base < 0.0 || refine_base >= 1.0)
    throw std::runtime_error("cascade: refine_base must be in [0,1)");
  if (refine_kstd <= 0.0) throw std::runtime_error("cascade: refine_kstd must be > 0");
}

CascadeModel::CascadeModel(const CascadeConfig& cfg_) : cfg(cfg_) {
  cfg.validate();
  trunk = Trunk(params, "trunk");
  loc = LocationHead(params, "loc", cfg.num_classes, cfg.pooling);
  mil = MilHead(params, "mil", cfg.num_classes);
  if (cfg.stages == Stages::Three) seg.emplace(params, "seg", cfg.num_classes);
}

Roi to_feature_roi(const Box& b, int orig_w, int orig_h, int fw, int fh,
                   int batch_index) {
  auto lo = [](long long v, long long num, long long den) {
    return (int)(v * num / den);
  };
  auto hi = [](long long v, long long num, long long den) {
    return (int)((v * num + den - 1) / den);
  };
  int x0 = std::clamp(lo(b.x0, fw, orig_w), 0, fw - 1);
  int y0 = std::clamp(lo(b.y0, fh, orig_h), 0, fh - 1);
  int x1 = std::clamp(hi(b.x1, fw, orig_w), x0 + 1, fw);
  int y1 = std::clamp(hi(b.y1, fh, orig_h), y0 + 1, fh);
  return Roi{batch_index, x0, y0, x1, y1};
}

namespace {

// Connected components of argmax(S) == class on the feature grid, boxed and
// sorted by component peak probability. Mirrors cam_to_boxes but on the
// segmentation posterior.
std::vector<Box> seg_class_boxes(const std::vector<double>& S, int channels, int fh,
                                 int fw, int class_id) {
  const std::size_t hw = (std::size_t)fh * fw;
  std::vector<char> mask(hw, 0);
  const double* ch = S.data() + (std::size_t)(class_id - 1) * hw;
  for (std::size_t i = 0; i < hw; ++i) {
    int best = 0;
    double bv = S[i];
    for (int c = 1; c < channels; ++c)
      if (S[(std::size_t)c * hw + i] > bv) {
        bv = S[(std::size_t)c * hw + i];
        best = c;
      }
    mask[i] = best == class_id - 1;
  }
  std::vector<int> comp(hw, -1);
  struct Info {
    Box box;
    double peak;
  };
  std::vector<Info> comps;
  std::vector<int> stack;
  for (std::size_t start = 0; start < hw; ++start) {
    if (!mask[start] || comp[start] != -1) continue;
    const int id = (int)comps.size();
    Info info{{(int)(start % fw), (int)(start / fw), (int)(start % fw) + 1,
               (int)(start / fw) + 1, {}, {}},
              ch[start]};
    comp[start] = id;
    stack.push_back((int)start);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int px = p % fw, py = p / fw;
      info.box.x0 = std::min(info.box.x0, px);
      info.box.y0 = std::min(info.box.y0, py);
      info.box.x1 = std::max(info.box.x1, px + 1);
      info.box.y1 = std::max(info.box.y1, py + 1);
      info.peak = std::max(info.peak, ch[p]);
      const int nx[4] = {px - 1, px + 1, px, px};
      const int ny[4] = {py, py, py - 1, py + 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || nx[k] >= fw || ny[k] < 0 || ny[k] >= fh) continue;
        const int q = ny[k] * fw + nx[k];
        if (mask[q] && comp[q] == -1) {
          comp[q] = id;
          stack.push_back(q);
        }
      }
    }
    comps.push_back(info);
  }
  std::stable_sort(comps.begin(), comps.end(),
                   [](const Info& a, const Info& b) { return a.peak > b.peak; });
  std::vector<Box> out;
  for (const auto& c : comps) {
    Box b = c.box;
    b.score = c.peak;
    out.push_back(b);
  }
  return out;
}

}  // namespace

ForwardResult forward_cascade(CascadeModel& model, const std::vector<BatchItem>& batch,
                              bool with_loss) {
  if (batch.empty()) throw std::runtime_error("forward_cascade: empty batch");
  const auto& cfg = model.cfg;
  const int C = cfg.num_classes;
  const bool three = cfg.stages == Stages::Three;
  const bool seg_loss_on = three && cfg.loss_weights.seg > 0.0;
  const bool seg_refine = three && cfg.seg_candidates;
  const bool seg_active = seg_loss_on || seg_refine;

  ForwardResult res;
  Tensor gap_sum, mil_sum, seg_sum;
  std::size_t mil_terms = 0, seg_terms = 0;

  for (const auto& item : batch) {
    const Sample& s = *item.sample;
    const ScaledImage& si = item.scaled;
    ImageRecord rec;
    rec.image_id = s.image_id;

    Tensor feats = model.trunk.forward(si.image);
    const int fh = (int)feats.shape()[2], fw = (int)feats.shape()[3];
    auto head = model.loc.forward(feats);
    rec.logits = head.logits.data();

    if (with_loss) {
      Tensor g = gap_loss(head.logits, {s.labels});
      rec.loss_gap = g.item();
      gap_sum = gap_sum ? add(gap_sum, g) : g;
    }

    // CAM at feature resolution; boxes reported in original image coords.
    CAM cam_feat = extract_cam(head.cam, fw, fh);

    // Segmentation stage (three-stage only).
    std::vector<double> seg_post;  // (C+1) x fh x fw posterior
    if (seg_active) {
      // The seg head learns from pseudo GT derived from this same trunk's
      // CAM, so its gradient into the shared trunk is feedback noise until
      // the head itself is trained; it measurably corrupts the gap/mil
      // signal. Train the head on frozen features instead.
      Tensor seg_scores = model.seg->forward(detach(feats));
      Tensor S = pixel_softmax(
          reshape(seg_scores, {(std::size_t)C + 1, (std::size_t)fh, (std::size_t)fw}));
      seg_post = S.data();
      if (with_loss && seg_loss_on) {
        PseudoSegGT pseudo = build_pseudo_seg_gt(cam_feat, s.labels, cfg.cam_threshold);
        // The seg loss sums over labeled pixels; normalize per pixel so its
        // scale is comparable to the gap/mil terms at any feature resolution.
        Tensor sl = scale(weak_seg_loss(S, s.labels, pseudo),
                          1.0 / (double)pseudo.labeled.size());
        rec.loss_seg = sl.item();
        seg_sum = seg_sum ? add(seg_sum, sl) : sl;
        ++seg_terms;
      }
    }

    bool any_candidates = false;
    for (int c = 1; c <= C; ++c) {
      if (!s.labels[c - 1]) continue;
      ClassResult cr;
      cr.class_id = c;

      // MIL bags always come from the CAM boxes so the MIL stage trains on
      // the same candidate distribution in two- and three-stage configs; the
      // seg posterior only refines the localization target below.
      std::vector<Box> cam_boxes = cam_to_boxes(cam_feat, c, cfg.cam_threshold);
      std::vector<Box> refine_boxes = cam_boxes;
      bool from_seg = false;
      if (seg_refine) {
        std::vector<Box> refined = seg_class_boxes(seg_post, C + 1, fh, fw, c);
        if (!refined.empty()) {
          refine_boxes = std::move(refined);
          from_seg = true;
        } else {
          cr.seg_fallback = true;
        }
      }
      // Feature-grid boxes -> original image coordinates.
      std::vector<Box> img_boxes;
      for (const Box& fb : cam_boxes) {
        try {
          img_boxes.push_back(rescale_box(fb, fw, fh, s.width, s.height));
        } catch (const std::runtime_error&) {
          // degenerate after rounding; skip
        }
      }
      if (!img_boxes.empty() && !item.proposals->boxes.empty()) {
        cr.candidates =
            select_candidates(img_boxes, item.proposals->boxes, cfg.candidate_k);
        if ((int)cr.candidates.size() > cfg.candidate_cap)
          cr.candidates.resize(cfg.candidate_cap);
      }

      if (!cr.candidates.empty()) {
        any_candidates = true;
        std::vector<Roi> rois;
        for (const Box& b : cr.candidates)
          rois.push_back(to_feature_roi(b, s.width, s.height, fw, fh));
        Tensor f = model.mil.forward(feats, rois);  // [n, C]
        const std::size_t n = rois.size();
        cr.bag_scores.resize(n);
        for (std::size_t j = 0; j < n; ++j)
          cr.bag_scores[j] = f.data()[j * C + (c - 1)];

        // Localization: candidates are ranked against the moment-refined
        // strongest stage box, with the MIL score as tie-break. Component
        // boxes alone carry the feature grid's quantization and the heads'
        // receptive-field dilation; the moment box cancels most of both.
        std::optional<RefinedBox> target;
        if (!refine_boxes.empty() && refine_boxes[0].score) {
          CAM src;
          if (from_seg) {
            src.num_classes = C + 1;
            src.width = fw;
            src.height = fh;
            src.maps = seg_post;
          }
          target = cam_moment_box(from_seg ? src : cam_feat, c, refine_boxes[0],
                                  *refine_boxes[0].score, cfg.refine_base,
                                  cfg.refine_kstd, s.width, s.height);
        }
        std::size_t best = 0;
        if (target) {
          double bestv = -1e300;
          for (std::size_t j = 0; j < n; ++j) {
            const double sig = 1.0 / (1.0 + std::exp(-cr.bag_scores[j]));
            const double v = target->iou(cr.candidates[j]) + 0.01 * sig;
            if (v > bestv) {
              bestv = v;
              best = j;
            }
          }
        } else {
          for (std::size_t j = 1; j < n; ++j)
            if (cr.bag_scores[j] > cr.bag_scores[best]) best = j;
        }
        cr.top_box = cr.candidates[best];
        cr.top_box->class_id = c;
        cr.top_box->score = cr.bag_scores[best];
        if (with_loss) {
          Tensor ml = mil_loss_class(f, (std::size_t)c - 1);
          rec.loss_mil += ml.item();
          mil_sum = mil_sum ? add(mil_sum, ml) : ml;
          ++mil_terms;
        }
      }
      rec.per_class.emplace(c, std::move(cr));
    }
    if (!any_candidates) {
      rec.no_candidates = true;
      if (with_loss)
        std::cerr << "warning: image " << s.image_id
                  << " has no MIL candidates; gap loss only\n";
    }
    res.records.push_back(std::move(rec));
  }

  if (with_loss) {
    const double invN = 1.0 / (double)batch.size();
    LossParts parts;
    parts.gap = scale(gap_sum, invN);
    if (mil_sum) parts.mil = scale(mil_sum, invN);
    if (three && seg_sum) parts.seg = scale(seg_sum, invN);
    res.total = total_loss(parts, cfg.loss_weights);
    res.mean_gap = parts.gap.item();
    res.mean_mil = parts.mil ? parts.mil.item() : 0.0;
    res.mean_seg = parts.seg ? parts.seg.item() : 0.0;
    (void)mil_terms;
    (void)seg_terms;
  }
  return res;
}

std::vector<double> classify(CascadeModel& model, const Sample& sample,
                             const std::vector<int>& scales) {
  std::vector<double> logits(model.cfg.num_classes, 0.0);
  for (int sc : scales) {
    ScaledImage si = scale_sample(sample, sc);
    Tensor feats = model.trunk.forward(si.image);
    auto head = model.loc.forward(feats);
    for (int c = 0; c < model.cfg.num_classes; ++c) logits[c] += head.logits.data()[c];
  }
  for (auto& v : logits) v /= (double)scales.size();
  return logits;
}

std::vector<Box> detect(CascadeModel& model, const Sample& sample,
                        const ProposalSet& proposals, const std::vector<int>& scales,
                        double nms_iou, double score_min) {
  const int C = model.cfg.num_classes;
  if (proposals.boxes.empty()) return {};
  std::vector<std::vector<double>> probs(proposals.boxes.size(),
                                         std::vector<double>(C, 0.0));
  for (int sc : scales) {
    ScaledImage si = scale_sample(sample, sc);
    Tensor feats = model.trunk.forward(si.image);
    const int fh = (int)feats.shape()[2], fw = (int)feats.shape()[3];
    std::vector<Roi> rois;
    for (const Box& b : proposals.boxes)
      rois.push_back(to_feature_roi(b, sample.width, sample.height, fw, fh));
    Tensor f = model.mil.forward(feats, rois);
    for (std::size_t j = 0; j < rois.size(); ++j) {
      double m = f.data()[j * C];
      for (int c = 1; c < C; ++c) m = std::max(m, f.data()[j * C + c]);
      double sum = 0.0;
      std::vector<double> e(C);
      for (int c = 0; c < C; ++c) {
        e[c] = std::exp(f.data()[j * C + c] - m);
        sum += e[c];
      }
      for (int c = 0; c < C; ++c) probs[j][c] += e[c] / sum;
    }
  }
  for (auto& p : probs)
    for (auto& v : p) v /= (double)scales.size();

  std::vector<Box> out;
  for (int c = 1; c <= C; ++c) {
    std::vector<Box> cand;
    for (std::size_t j = 0; j < proposals.boxes.size(); ++j) {
      if (probs[j][c - 1] < score_min) continue;
      Box b = proposals.boxes[j];
      b.class_id = c;
      b.score = probs[j][c - 1];
      cand.push_back(b);
    }
    for (const Box& b : nms(cand, nms_iou)) out.push_back(b);
  }
  return out;
}

}  // namespace wccn
