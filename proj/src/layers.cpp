#include "wccn/layers.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace wccn {

Tensor ParamRegistry::add(const std::string& name, Tensor t) {
  if (find(name)) throw std::runtime_error("ParamRegistry: duplicate name " + name);
  items.emplace_back(name, t);
  return t;
}

Tensor* ParamRegistry::find(const std::string& name) {
  for (auto& [n, t] : items)
    if (n == name) return &t;
  return nullptr;
}

void ParamRegistry::zero_grads() {
  for (auto& [n, t] : items) t.zero_grad();
}

void ParamRegistry::load_values(const std::vector<std::pair<std::string, Tensor>>& src) {
  for (auto& [name, t] : items) {
    const Tensor* found = nullptr;
    for (const auto& [sn, st] : src)
      if (sn == name) {
        found = &st;
        break;
      }
    if (!found) throw std::runtime_error("checkpoint missing parameter: " + name);
    if (found->shape() != t.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    t.data() = found->data();
  }
}

namespace {

std::size_t fan_in_of(const Tensor& w) {
  const auto& s = w.shape();
  if (s.size() == 4) return s[1] * s[2] * s[3];
  if (s.size() == 2) return s[1];
  return w.size();
}

bool is_bias(const std::string& name) {
  return name.size() >= 5 && name.compare(name.size() - 5, 5, "/bias") == 0;
}

}  // namespace

void init_params(ParamRegistry& reg, std::uint64_t rng_seed) {
  std::mt19937_64 rng(rng_seed);
  for (auto& [name, t] : reg.items) {
    if (is_bias(name)) {
      std::fill(t.data().begin(), t.data().end(), 0.0);
      continue;
    }
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (double)fan_in_of(t)));
    for (auto& v : t.data()) v = dist(rng);
  }
}

ConvLayer::ConvLayer(ParamRegistry& reg, const std::string& path, int in_ch,
                     int out_ch, int k, int stride_, int pad_)
    : stride(stride_), pad(pad_) {
  w = reg.add(path + "/weight",
              Tensor::zeros({(std::size_t)out_ch, (std::size_t)in_ch,
                             (std::size_t)k, (std::size_t)k},
                            true));
  b = reg.add(path + "/bias", Tensor::zeros({(std::size_t)out_ch}, true));
}

LinearLayer::LinearLayer(ParamRegistry& reg, const std::string& path, int in, int out) {
  w = reg.add(path + "/weight",
              Tensor::zeros({(std::size_t)out, (std::size_t)in}, true));
  b = reg.add(path + "/bias", Tensor::zeros({(std::size_t)out}, true));
}

Trunk::Trunk(ParamRegistry& reg, const std::string& path)
    : c1(reg, path + "/conv1", 3, 16, 5, 2, 2),
      c2(reg, path + "/conv2", 16, 32, 3, 1, 1),
      c3(reg, path + "/conv3", 32, kOutChannels, 3, 1, 1) {}

Tensor Trunk::forward(const Tensor& image_batch) const {
  Tensor h = max_pool2d(relu(c1.forward(image_batch)), 2, 2);
  h = relu(c2.forward(h));
  return relu(c3.forward(h));
}

LocationHead::LocationHead(ParamRegistry& reg, const std::string& path,
                           int num_classes, GlobalPool pool_)
    : a(reg, path + "/conv_a", Trunk::kOutChannels, 64, 3, 1, 1),
      cls(reg, path + "/conv_cls", 64, num_classes, 1, 1, 0),
      pool(pool_) {}

LocationHead::Out LocationHead::forward(const Tensor& features) const {
  Tensor cam = cls.forward(relu(a.forward(features)));
  Tensor logits = pool == GlobalPool::GAP ? global_avg_pool(cam) : global_max_pool(cam);
  return {logits, cam};
}

MilHead::MilHead(ParamRegistry& reg, const std::string& path, int num_classes)
    : fc1(reg, path + "/fc1", Trunk::kOutChannels * kRoiSize * kRoiSize, 512),
      fc2(reg, path + "/fc2", 512, 512),
      out(reg, path + "/score", 512, num_classes) {}

Tensor MilHead::forward(const Tensor& features, const std::vector<Roi>& rois) const {
  Tensor pooled = roi_pool(features, rois, kRoiSize, kRoiSize);
  Tensor flat = reshape(pooled, {rois.size(),
                                 (std::size_t)(Trunk::kOutChannels * kRoiSize * kRoiSize)});
  Tensor h = relu(fc1.forward(flat));
  h = relu(fc2.forward(h));
  return out.forward(h);
}

SegHead::SegHead(ParamRegistry& reg, const std::string& path, int num_classes)
    : a(reg, path + "/conv_a", Trunk::kOutChannels, 32, 3, 1, 1),
      cls(reg, path + "/conv_cls", 32, num_classes + 1, 1, 1, 0) {}

Tensor SegHead::forward(const Tensor& features) const {
  return cls.forward(relu(a.forward(features)));
}

}  // namespace wccn
