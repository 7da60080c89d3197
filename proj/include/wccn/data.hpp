#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wccn/boxes.hpp"
#include "wccn/losses.hpp"
#include "wccn/tensor.hpp"

namespace wccn {

struct Sample {
  int image_id = 0;
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // H*W*3, RGB
  LabelVector labels;                // length C, {0,1}
  std::string split;                 // train | val | test
};

// image_id -> class-tagged GT boxes. Written by the generator, read only by
// evaluation code (see eval.hpp); the training path never loads it.
using HiddenGT = std::map<int, std::vector<Box>>;

struct DatasetConfig {
  int num_classes = 4;
  int image_size = 64;
  int num_train = 500;
  int num_val = 100;
  int num_test = 200;
  int objects_min = 1;
  int objects_max = 3;
  double clutter_level = 1.0;
  std::uint64_t rng_seed = 0;
};

struct Dataset {
  int num_classes = 0;
  int image_size = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;
  std::vector<Sample> samples;

  std::vector<const Sample*> split(const std::string& name) const;
  const Sample& by_id(int image_id) const;
};

// Shapes (square, disk, triangle, cross, ...) with jittered color on a noisy
// background with distractor strokes. Labels are the set of present classes;
// GT boxes are the tight rendered extents. Deterministic per seed; pairwise
// object IoU <= 0.2 within an image.
std::pair<Dataset, HiddenGT> generate_dataset(const DatasetConfig& cfg);

// Layout: root/images/img_<id>.ppm, root/labels.jsonl, root/gt_boxes.jsonl,
// root/manifest.json.
void save_dataset(const std::string& root, const Dataset& ds, const HiddenGT& gt);
Dataset load_dataset(const std::string& root);

void write_ppm(const std::string& path, int w, int h, const std::vector<std::uint8_t>& rgb);
std::vector<std::uint8_t> read_ppm(const std::string& path, int& w, int& h);

// One sample as a [1,3,h,w] tensor in [0,1], bilinearly resized so the min
// side equals `scale` (aspect preserved).
struct ScaledImage {
  Tensor image;
  int width = 0, height = 0;      // resized dims
  int orig_width = 0, orig_height = 0;
};

ScaledImage scale_sample(const Sample& s, int scale);

// Random scale per sample, drawn from `scales` with the given seed.
std::vector<ScaledImage> multi_scale_batch(const std::vector<const Sample*>& samples,
                                           const std::vector<int>& scales,
                                           std::uint64_t rng_seed);

}  // namespace wccn
