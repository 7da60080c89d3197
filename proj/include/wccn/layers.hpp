#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wccn/tensor.hpp"

namespace wccn {

// Ordered name -> parameter map; names are slash-separated paths.
struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor add(const std::string& name, Tensor t);
  Tensor* find(const std::string& name);
  void zero_grads();
  // Copies values from a loaded tensor list; errors on missing or
  // shape-mismatched entries.
  void load_values(const std::vector<std::pair<std::string, Tensor>>& src);
};

// He initialization: weights ~ N(0, 2/fan_in), biases = 0. Deterministic per
// seed; parameters are visited in registry insertion order.
void init_params(ParamRegistry& reg, std::uint64_t rng_seed);

struct ConvLayer {
  Tensor w, b;
  int stride = 1, pad = 0;

  ConvLayer() = default;
  ConvLayer(ParamRegistry& reg, const std::string& path, int in_ch, int out_ch,
            int k, int stride, int pad);
  Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
};

struct LinearLayer {
  Tensor w, b;

  LinearLayer() = default;
  LinearLayer(ParamRegistry& reg, const std::string& path, int in, int out);
  Tensor forward(const Tensor& x) const { return linear(x, w, b); }
};

// Shared convolutional trunk (mini-Alexnet pattern):
//   conv 3->16 5x5 s2 p2, relu, maxpool 2 -> conv 16->32 3x3 p1, relu
//   -> conv 32->32 3x3 p1, relu.
// 64x64 input yields a 32x16x16 feature map.
struct Trunk {
  ConvLayer c1, c2, c3;
  static constexpr int kOutChannels = 32;
  static constexpr int kDownscale = 4;  // image px per feature cell

  Trunk() = default;
  Trunk(ParamRegistry& reg, const std::string& path);
  Tensor forward(const Tensor& image_batch) const;
};

enum class GlobalPool { GAP, GMP };

// Two conv layers and one global pooling layer; the pre-pooling C-channel map
// is the class activation map.
struct LocationHead {
  ConvLayer a, cls;
  GlobalPool pool = GlobalPool::GAP;

  LocationHead() = default;
  LocationHead(ParamRegistry& reg, const std::string& path, int num_classes,
               GlobalPool pool);
  struct Out {
    Tensor logits;  // [N, C]
    Tensor cam;     // [N, C, h, w]
  };
  Out forward(const Tensor& features) const;
};

// ROI pool to 4x4 over trunk features, then two FC layers and a score layer.
struct MilHead {
  static constexpr int kRoiSize = 4;
  LinearLayer fc1, fc2, out;

  MilHead() = default;
  MilHead(ParamRegistry& reg, const std::string& path, int num_classes);
  // rois in feature-map coordinates; returns per-box class scores [n, C].
  Tensor forward(const Tensor& features, const std::vector<Roi>& rois) const;
};

// Two conv layers producing a (C+1)-channel score map at trunk resolution.
struct SegHead {
  ConvLayer a, cls;

  SegHead() = default;
  SegHead(ParamRegistry& reg, const std::string& path, int num_classes);
  Tensor forward(const Tensor& features) const;  // [N, C+1, h, w]
};

}  // namespace wccn
