#pragma once

#include <cstdint>
#include <vector>

#include "wccn/tensor.hpp"

namespace wccn {

// Image-level label vector y in {0,1}^C.
using LabelVector = std::vector<int>;

// Per-box per-class scores f, C x n row-major.
struct BagScores {
  std::size_t num_classes = 0;
  std::size_t num_boxes = 0;
  std::vector<double> f;  // f[c * num_boxes + j]

  double at(std::size_t c, std::size_t j) const { return f[c * num_boxes + j]; }
};

struct MilScore {
  std::vector<double> scores;        // per class max over boxes
  std::vector<std::size_t> argmax;   // box index per class (lowest on ties)
};

struct LossWeights {
  double gap = 1.0;
  double mil = 1.0;
  double seg = 1.0;
};

// Pixel-level pseudo ground truth for the segmentation stage. Class ids are
// 1..C+1 with C+1 = background.
struct PseudoSegGT {
  int width = 0, height = 0;
  std::vector<int> G;              // h*w class ids, 1..C+1
  std::vector<double> alpha;       // h*w importance weights in [0,1]
  std::vector<std::size_t> labeled;  // I_s: linear pixel indices
  std::vector<std::size_t> peaks;  // per present class (aligned to present list)
  std::vector<int> present;        // class ids with y_c = 1
};

// Sum of C binary logistic regression losses, mean over the batch.
// logits: [N, C]; labels: N vectors of length C.
Tensor gap_loss(const Tensor& logits, const std::vector<LabelVector>& labels);

// Per-class max over boxes with argmax (ties to lowest box index).
MilScore mil_score(const BagScores& bag);

// MIL loss for a one-hot bag label: softmax over per-class max scores,
// negative log-probability of the bag's class. f: [n_boxes, C].
Tensor mil_loss(const Tensor& f, const LabelVector& y);
Tensor mil_loss_class(const Tensor& f, std::size_t class_index);

// Per-pixel softmax over the class axis of [C, h, w].
Tensor pixel_softmax(const Tensor& scores);

// Point + pseudo-label supervised segmentation loss on the softmax output S
// [(C+1), h, w]: cross-entropy at each present class's peak pixel
// (t_c = argmax of channel c of S) plus alpha-weighted per-pixel
// cross-entropy against G over the labeled set.
Tensor weak_seg_loss(const Tensor& S, const LabelVector& labels,
                     const PseudoSegGT& pseudo);

struct LossParts {
  Tensor gap;  // required
  Tensor mil;  // may be empty
  Tensor seg;  // may be empty (2-stage)
};

Tensor total_loss(const LossParts& parts, const LossWeights& w);

}  // namespace wccn
