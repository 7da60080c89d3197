#include "wccn/losses.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace wccn {

namespace {

using detail::Node;

Tensor make_loss_node(const Tensor& input, const char* op,
                      std::function<void(Node&)> bwd) {
  auto n = detail::make_node({1}, op);
  n->inputs.push_back(input.node());
  n->requires_grad = input.requires_grad();
  if (n->requires_grad) n->backward_fn = std::move(bwd);
  return Tensor(std::move(n));
}

void acc_input(Node& self, const std::vector<double>& g) {
  Node& in = *self.inputs[0];
  if (!in.requires_grad) return;
  in.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) in.grad[i] += g[i];
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

Tensor gap_loss(const Tensor& logits, const std::vector<LabelVector>& labels) {
  if (logits.rank() != 2)
    detail::shape_fail("gap_loss", "rank-2 logits", logits.shape());
  const std::size_t N = logits.shape()[0], C = logits.shape()[1];
  if (labels.size() != N)
    throw std::runtime_error("gap_loss: label count " + std::to_string(labels.size()) +
                             " != batch size " + std::to_string(N));
  for (const auto& y : labels)
    if (y.size() != C) throw std::runtime_error("gap_loss: label vector length mismatch");

  auto ycopy = std::make_shared<std::vector<LabelVector>>(labels);
  Tensor out = make_loss_node(logits, "gap_loss", [N, C, ycopy](Node& self) {
    std::vector<double> g(N * C);
    const auto& z = self.inputs[0]->data;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        g[n * C + c] = self.grad[0] * (sigmoid(z[n * C + c]) - (*ycopy)[n][c]) / (double)N;
    acc_input(self, g);
  });
  double L = 0.0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double z = logits.data()[n * C + c];
      const int y = labels[n][c];
      // stable: max(z,0) - y*z + log1p(exp(-|z|))
      L += std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
    }
  out.data()[0] = L / (double)N;
  return out;
}

MilScore mil_score(const BagScores& bag) {
  if (bag.num_boxes < 1) throw std::runtime_error("mil_score: empty bag");
  MilScore out;
  out.scores.resize(bag.num_classes);
  out.argmax.resize(bag.num_classes);
  for (std::size_t c = 0; c < bag.num_classes; ++c) {
    std::size_t best = 0;
    double bv = bag.at(c, 0);
    for (std::size_t j = 1; j < bag.num_boxes; ++j)
      if (bag.at(c, j) > bv) {
        bv = bag.at(c, j);
        best = j;
      }
    out.scores[c] = bv;
    out.argmax[c] = best;
  }
  return out;
}

Tensor mil_loss_class(const Tensor& f, std::size_t class_index) {
  if (f.rank() != 2) detail::shape_fail("mil_loss", "rank-2 box scores", f.shape());
  const std::size_t n = f.shape()[0], C = f.shape()[1];
  if (n < 1) detail::shape_fail("mil_loss", "at least one box", f.shape());
  if (class_index >= C) throw std::runtime_error("mil_loss: class index out of range");

  // Per-class max over boxes, ties to the lowest box index.
  auto argmax = std::make_shared<std::vector<std::size_t>>(C);
  std::vector<double> score(C);
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t best = 0;
    double bv = f.data()[0 * C + c];
    for (std::size_t j = 1; j < n; ++j)
      if (f.data()[j * C + c] > bv) {
        bv = f.data()[j * C + c];
        best = j;
      }
    score[c] = bv;
    (*argmax)[c] = best;
  }
  double m = score[0];
  for (double s : score) m = std::max(m, s);
  std::vector<double> p(C);
  double sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    p[c] = std::exp(score[c] - m);
    sum += p[c];
  }
  for (auto& v : p) v /= sum;

  auto pcopy = std::make_shared<std::vector<double>>(p);
  Tensor out = make_loss_node(f, "mil_loss", [n, C, class_index, argmax, pcopy](Node& self) {
    std::vector<double> g(n * C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      double d = (*pcopy)[c] - (c == class_index ? 1.0 : 0.0);
      g[(*argmax)[c] * C + c] += self.grad[0] * d;
    }
    acc_input(self, g);
  });
  out.data()[0] = -std::log(p[class_index]);
  return out;
}

Tensor mil_loss(const Tensor& f, const LabelVector& y) {
  std::size_t ones = 0, idx = 0;
  for (std::size_t c = 0; c < y.size(); ++c)
    if (y[c]) {
      ++ones;
      idx = c;
    }
  if (ones != 1) throw std::runtime_error("mil_loss: bag label must be one-hot");
  return mil_loss_class(f, idx);
}

Tensor pixel_softmax(const Tensor& scores) {
  if (scores.rank() != 3)
    detail::shape_fail("pixel_softmax", "rank-3 [C,h,w]", scores.shape());
  return softmax_axis(scores, 0);
}

Tensor weak_seg_loss(const Tensor& S, const LabelVector& labels,
                     const PseudoSegGT& pseudo) {
  if (S.rank() != 3) detail::shape_fail("weak_seg_loss", "rank-3 [C+1,h,w]", S.shape());
  const std::size_t CH = S.shape()[0];  // C + 1
  const std::size_t h = S.shape()[1], w = S.shape()[2], hw = h * w;
  if (labels.size() + 1 != CH)
    throw std::runtime_error("weak_seg_loss: label length " + std::to_string(labels.size()) +
                             " does not match " + std::to_string(CH) + " channels");
  if ((std::size_t)pseudo.width * pseudo.height != hw)
    throw std::runtime_error("weak_seg_loss: pseudo GT size mismatch");
  for (std::size_t i : pseudo.labeled) {
    if (i >= hw) throw std::runtime_error("weak_seg_loss: labeled pixel out of range");
    if (pseudo.G[i] < 1 || (std::size_t)pseudo.G[i] > CH)
      throw std::runtime_error("weak_seg_loss: G value out of [1,C+1] at pixel " +
                               std::to_string(i));
    if (pseudo.alpha[i] < 0.0)
      throw std::runtime_error("weak_seg_loss: negative alpha at pixel " + std::to_string(i));
  }

  // t_c = argmax over pixels of channel c (lowest linear index on ties).
  auto peaks = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>();
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (!labels[c]) continue;
    std::size_t best = 0;
    double bv = S.data()[c * hw];
    for (std::size_t i = 1; i < hw; ++i)
      if (S.data()[c * hw + i] > bv) {
        bv = S.data()[c * hw + i];
        best = i;
      }
    peaks->emplace_back(c, best);
  }
  auto pg = std::make_shared<PseudoSegGT>(pseudo);
  Tensor out = make_loss_node(S, "weak_seg_loss", [hw, peaks, pg](Node& self) {
    std::vector<double> g(self.inputs[0]->size(), 0.0);
    const auto& s = self.inputs[0]->data;
    for (auto [c, t] : *peaks) g[c * hw + t] -= self.grad[0] / s[c * hw + t];
    for (std::size_t i : pg->labeled) {
      std::size_t idx = (std::size_t)(pg->G[i] - 1) * hw + i;
      g[idx] -= self.grad[0] * pg->alpha[i] / s[idx];
    }
    acc_input(self, g);
  });
  double L = 0.0;
  for (auto [c, t] : *peaks) L -= std::log(S.data()[c * hw + t]);
  for (std::size_t i : pseudo.labeled)
    L -= pseudo.alpha[i] * std::log(S.data()[(std::size_t)(pseudo.G[i] - 1) * hw + i]);
  out.data()[0] = L;
  return out;
}

Tensor total_loss(const LossParts& parts, const LossWeights& w) {
  if (!parts.gap) throw std::runtime_error("total_loss: gap part is required");
  Tensor out = scale(parts.gap, w.gap);
  if (parts.mil) out = add(out, scale(parts.mil, w.mil));
  if (parts.seg) out = add(out, scale(parts.seg, w.seg));
  return out;
}

}  // namespace wccn
