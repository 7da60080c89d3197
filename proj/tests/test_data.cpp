#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "wccn/data.hpp"
#include "wccn/eval.hpp"

using namespace wccn;
namespace fs = std::filesystem;

namespace {

DatasetConfig small_cfg(std::uint64_t seed = 0) {
  DatasetConfig cfg;
  cfg.num_train = 12;
  cfg.num_val = 4;
  cfg.num_test = 4;
  cfg.rng_seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("generation basics and determinism") {
  auto [ds, gt] = generate_dataset(small_cfg());
  CHECK(ds.num_classes == 4);
  CHECK(ds.image_size == 64);
  CHECK(ds.samples.size() == 20);
  CHECK(ds.split("train").size() == 12);
  CHECK(ds.split("val").size() == 4);
  CHECK(ds.split("test").size() == 4);

  for (const Sample& s : ds.samples) {
    CHECK(s.width == 64);
    CHECK(s.height == 64);
    CHECK(s.pixels.size() == 64u * 64 * 3);
    int present = 0;
    for (int y : s.labels) present += y;
    CHECK(present >= 1);
    // every labeled class has at least one GT box, and vice versa
    REQUIRE(gt.count(s.image_id) == 1);
    LabelVector from_gt(4, 0);
    for (const Box& b : gt.at(s.image_id)) {
      REQUIRE(b.class_id.has_value());
      from_gt[*b.class_id - 1] = 1;
      CHECK(b.valid());
      CHECK(b.x0 >= 0);
      CHECK(b.y0 >= 0);
      CHECK(b.x1 <= 64);
      CHECK(b.y1 <= 64);
    }
    CHECK(from_gt == s.labels);
    // pairwise object overlap stays low
    const auto& boxes = gt.at(s.image_id);
    for (std::size_t i = 0; i < boxes.size(); ++i)
      for (std::size_t j = i + 1; j < boxes.size(); ++j)
        CHECK(iou(boxes[i], boxes[j]) <= 0.2);
  }

  auto [ds2, gt2] = generate_dataset(small_cfg());
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    CHECK(ds.samples[i].pixels == ds2.samples[i].pixels);

  auto [ds3, gt3] = generate_dataset(small_cfg(99));
  bool any_diff = false;
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    any_diff |= ds.samples[i].pixels != ds3.samples[i].pixels;
  CHECK(any_diff);
}

TEST_CASE("single object per image gives one-hot labels") {
  DatasetConfig cfg = small_cfg(5);
  cfg.objects_min = cfg.objects_max = 1;
  auto [ds, gt] = generate_dataset(cfg);
  for (const Sample& s : ds.samples) {
    int present = 0;
    for (int y : s.labels) present += y;
    CHECK(present == 1);
    CHECK(gt.at(s.image_id).size() == 1);
  }
}

TEST_CASE("class frequency roughly uniform over 1000 images") {
  DatasetConfig cfg;
  cfg.num_train = 1000;
  cfg.num_val = 0;
  cfg.num_test = 0;
  cfg.rng_seed = 17;
  auto [ds, gt] = generate_dataset(cfg);
  std::vector<int> counts(4, 0);
  int total = 0;
  for (const Sample& s : ds.samples)
    for (int c = 0; c < 4; ++c)
      if (s.labels[c]) {
        ++counts[c];
        ++total;
      }
  for (int c = 0; c < 4; ++c) {
    double frac = (double)counts[c] / total;
    CHECK(frac > 0.25 * 0.9 - 0.025);
    CHECK(frac < 0.25 * 1.1 + 0.025);
  }
}

TEST_CASE("save/load round trip") {
  auto [ds, gt] = generate_dataset(small_cfg(3));
  fs::path root = fs::temp_directory_path() / "wccn_data_test";
  fs::remove_all(root);
  save_dataset(root.string(), ds, gt);

  Dataset back = load_dataset(root.string());
  CHECK(back.num_classes == ds.num_classes);
  CHECK(back.image_size == ds.image_size);
  CHECK(back.class_names == ds.class_names);
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].image_id == ds.samples[i].image_id);
    CHECK(back.samples[i].pixels == ds.samples[i].pixels);
    CHECK(back.samples[i].labels == ds.samples[i].labels);
    CHECK(back.samples[i].split == ds.samples[i].split);
  }

  // GT loads through the eval-side loader only
  HiddenGT hg = load_hidden_gt(root.string());
  for (const auto& [id, boxes] : gt) {
    REQUIRE(hg.count(id) == 1);
    REQUIRE(hg.at(id).size() == boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      CHECK(hg.at(id)[i].same_rect(boxes[i]));
      CHECK(*hg.at(id)[i].class_id == *boxes[i].class_id);
    }
  }

  // weak-only mode: GT file deleted, labels still load, eval refuses clearly
  fs::remove(root / "gt_boxes.jsonl");
  Dataset weak = load_dataset(root.string());
  CHECK(weak.samples.size() == ds.samples.size());
  CHECK_THROWS_WITH(load_hidden_gt(root.string()), doctest::Contains("weak-only"));

  // corrupt labels line -> error naming the line
  {
    std::ofstream lbl(root / "labels.jsonl", std::ios::app);
    lbl << "{\"image_id\":9999,\"labels\":[0,0,0,9],\"split\":\"train\"}\n";
  }
  CHECK_THROWS_WITH(load_dataset(root.string()), doctest::Contains("line"));
  fs::remove_all(root);
}

TEST_CASE("ppm round trip") {
  fs::path dir = fs::temp_directory_path() / "wccn_ppm_test";
  fs::create_directories(dir);
  std::vector<std::uint8_t> rgb(5 * 3 * 3);
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = (std::uint8_t)(i * 7);
  std::string path = (dir / "x.ppm").string();
  write_ppm(path, 5, 3, rgb);
  int w = 0, h = 0;
  auto back = read_ppm(path, w, h);
  CHECK(w == 5);
  CHECK(h == 3);
  CHECK(back == rgb);
  fs::remove_all(dir);
}

TEST_CASE("scale_sample resizing and normalization") {
  Sample s;
  s.image_id = 1;
  s.width = 64;
  s.height = 128;
  s.pixels.assign(64 * 128 * 3, 255);
  s.labels = {1};

  ScaledImage img = scale_sample(s, 32);
  CHECK(img.width == 32);
  CHECK(img.height == 64);
  CHECK(img.orig_width == 64);
  CHECK(img.orig_height == 128);
  REQUIRE(img.image.shape() == std::vector<std::size_t>{1, 3, 64, 32});
  for (double v : img.image.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

  // single scale equal to image size is an identity resize
  Sample sq;
  sq.width = sq.height = 8;
  sq.pixels.resize(8 * 8 * 3);
  for (std::size_t i = 0; i < sq.pixels.size(); ++i) sq.pixels[i] = (std::uint8_t)i;
  ScaledImage id = scale_sample(sq, 8);
  CHECK(id.width == 8);
  CHECK(id.height == 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(id.image.data()[((std::size_t)c * 8 + y) * 8 + x] ==
              doctest::Approx(sq.pixels[((std::size_t)y * 8 + x) * 3 + c] / 255.0)
                  .epsilon(1e-12));
}

TEST_CASE("multi_scale_batch is seed-deterministic") {
  auto [ds, gt] = generate_dataset(small_cfg(2));
  auto train = ds.split("train");
  auto a = multi_scale_batch(train, {48, 64, 80}, 123);
  auto b = multi_scale_batch(train, {48, 64, 80}, 123);
  REQUIRE(a.size() == b.size());
  bool multiple_sizes = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].width == b[i].width);
    CHECK(a[i].image.data() == b[i].image.data());
    multiple_sizes |= a[i].width != a[0].width;
  }
  CHECK(multiple_sizes);
}
