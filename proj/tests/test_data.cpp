#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "patchnet/data.hpp"
#include "patchnet/errors.hpp"

using namespace patchnet;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

LabeledImage gradient_image(std::size_t h, std::size_t w) {
  LabeledImage img;
  img.pixels = Tensor({3, h, w});
  img.labels = LabelMap(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch)
        img.pixels.at(ch, r, c) =
            static_cast<float>((ch + 1) * (r * w + c)) / (3.0f * h * w);
  return img;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("extract_patch from a uniform image is uniform") {
  LabeledImage img;
  img.pixels = Tensor::full({3, 64, 64}, 0.3f);
  Tensor patch = extract_patch(img.pixels, 32, 32, 28);
  for (std::size_t i = 0; i < patch.size(); ++i) CHECK(patch[i] == 0.3f);
}

TEST_CASE("corner extraction duplicates the border by reflection") {
  // left column red: reflected columns to the left stay red
  LabeledImage img;
  img.pixels = Tensor({3, 32, 32});
  for (std::size_t r = 0; r < 32; ++r) {
    img.pixels.at(0, r, 0) = 1.0f;  // red channel of column 0
  }
  Tensor patch = extract_patch(img.pixels, 0, 0, 28);
  // window columns 0..13 map to source columns 13..0; all column-0 hits red
  CHECK(patch.at(0, 0, 14) == 1.0f);   // source column 0
  CHECK(patch.at(0, 0, 13) == 1.0f);   // source column -1 -> 0
  CHECK(patch.at(0, 0, 12) == 0.0f);   // source column -2 -> 1
}

TEST_CASE("interior extraction equals direct slicing") {
  LabeledImage img = gradient_image(40, 40);
  Tensor patch = extract_patch(img.pixels, 20, 21, 28);
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 28; ++y)
      for (int x = 0; x < 28; ++x)
        CHECK(patch.at(ch, y, x) ==
              img.pixels.at(ch, 20 - 14 + y, 21 - 14 + x));
}

TEST_CASE("extraction is translation-consistent in the interior") {
  LabeledImage img = gradient_image(48, 48);
  Tensor shifted({3, 48, 48});
  const int dy = 3, dx = 5;
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t r = 0; r + dy < 48; ++r)
      for (std::size_t c = 0; c + dx < 48; ++c)
        shifted.at(ch, r + dy, c + dx) = img.pixels.at(ch, r, c);
  Tensor a = extract_patch(img.pixels, 20, 20, 12);
  Tensor b = extract_patch(shifted, 20 + dy, 20 + dx, 12);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("extraction outside the image is a bounds error") {
  LabeledImage img = gradient_image(16, 16);
  CHECK_THROWS_AS(extract_patch(img.pixels, -1, 5), Error);
  CHECK_THROWS_AS(extract_patch(img.pixels, 5, 16), Error);
}

TEST_CASE("positions of the image corners") {
  CHECK(normalized_x(0, 100) == 0.0f);
  CHECK(normalized_y(0, 50) == 0.0f);
  CHECK(normalized_x(99, 100) == 1.0f);
  CHECK(normalized_y(49, 50) == 1.0f);
  CHECK(normalized_x(0, 1) == 0.0f);
}

TEST_CASE("fully unlabeled images contribute no samples") {
  auto images = std::make_shared<std::vector<LabeledImage>>();
  LabeledImage img = gradient_image(16, 16);
  img.labels = LabelMap(16, 16, kUnlabeled);
  images->push_back(std::move(img));
  LabeledImage good = gradient_image(16, 16);
  good.labels = LabelMap(16, 16, 1);
  images->push_back(std::move(good));
  Rng rng(1);
  TrainingPool pool = build_training_pool(images, 50, Weighting::None, rng, 8);
  CHECK(pool.size() == 50);
  for (std::size_t i = 0; i < pool.size(); ++i)
    CHECK(pool.entry(i).image == 1);
}

TEST_CASE("unlabeled pixels are never sampled") {
  auto images = std::make_shared<std::vector<LabeledImage>>();
  LabeledImage img = gradient_image(20, 20);
  Rng noise(2);
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t c = 0; c < 20; ++c)
      img.labels.at(r, c) = noise.bernoulli(0.5) ? kUnlabeled
                                                 : (noise.bernoulli(0.5) ? 1
                                                                         : 0);
  images->push_back(std::move(img));
  Rng rng(3);
  TrainingPool pool =
      build_training_pool(images, 500, Weighting::None, rng, 8);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    CHECK(pool.entry(i).label != kUnlabeled);
    CHECK(pool.sample(i).label != kUnlabeled);
  }
}

TEST_CASE("inverse class frequency weights over the pool") {
  auto images = std::make_shared<std::vector<LabeledImage>>();
  LabeledImage img = gradient_image(20, 20);
  // 300 pixels of class 0, 100 of class 1
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t c = 0; c < 20; ++c)
      img.labels.at(r, c) = (r * 20 + c) < 100 ? 1 : 0;
  images->push_back(std::move(img));
  Rng rng(4);
  TrainingPool pool = build_training_pool(
      images, 4000, Weighting::InverseClassFrequency, rng, 8);
  auto counts = pool.label_counts();
  REQUIRE(counts.size() == 2);
  double mass[2] = {0, 0};
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& e = pool.entry(i);
    CHECK(e.weight == doctest::Approx(1.0f / counts[e.label]));
    mass[e.label] += e.weight;
  }
  // sum of weights per class is equal across classes
  CHECK(mass[0] == doctest::Approx(mass[1]).epsilon(1e-6));
}

TEST_CASE("weight-map mode passes map values through and skips zeros") {
  auto images = std::make_shared<std::vector<LabeledImage>>();
  LabeledImage img = gradient_image(16, 16);
  Tensor wm({1, 16, 16});
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 16; ++c)
      wm.at(0, r, c) = r < 8 ? 0.0f : 2.5f;
  img.weight_map = wm;
  images->push_back(std::move(img));
  Rng rng(5);
  TrainingPool pool =
      build_training_pool(images, 200, Weighting::PixelWeightMap, rng, 8);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    CHECK(pool.entry(i).row >= 8);
    CHECK(pool.entry(i).weight == 2.5f);
  }
}

TEST_CASE("weight-map mode without a map is a data error") {
  auto images = std::make_shared<std::vector<LabeledImage>>();
  images->push_back(gradient_image(16, 16));
  Rng rng(6);
  CHECK_THROWS_AS(
      build_training_pool(images, 10, Weighting::PixelWeightMap, rng, 8),
      Error);
}

TEST_CASE("birdseye weight map") {
  Tensor flat = birdseye_weight_map(10, 4, 3, 0.0f);
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      if (r <= 3)
        CHECK(flat.at(0, r, c) == 0.0f);
      else
        CHECK(flat.at(0, r, c) == doctest::Approx(1.0f));
    }

  Tensor steep = birdseye_weight_map(64, 8, 10, 1.5f);
  double mean = 0.0;
  std::size_t nonzero = 0;
  for (std::size_t r = 11; r + 1 < 64; ++r)
    CHECK(steep.at(0, r, 0) > steep.at(0, r + 1, 0));
  for (std::size_t i = 0; i < steep.size(); ++i)
    if (steep[i] > 0) {
      mean += steep[i];
      ++nonzero;
    }
  CHECK(mean / nonzero == doctest::Approx(1.0).epsilon(1e-6));

  CHECK_THROWS_AS(birdseye_weight_map(10, 4, 10, 1.0f), Error);
  CHECK_THROWS_AS(birdseye_weight_map(10, 4, -1, 1.0f), Error);
}

TEST_CASE("scenes are bit-identical for a fixed seed") {
  for (SceneKind kind : {SceneKind::Road, SceneKind::Urban}) {
    LabeledImage a = generate_synthetic_scene(kind, 42);
    LabeledImage b = generate_synthetic_scene(kind, 42);
    REQUIRE(a.pixels.same_shape(b.pixels));
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
      CHECK(a.pixels[i] == b.pixels[i]);
    CHECK(a.labels.ids == b.labels.ids);
  }
  LabeledImage c = generate_synthetic_scene(SceneKind::Road, 43);
  LabeledImage d = generate_synthetic_scene(SceneKind::Road, 42);
  bool identical = true;
  for (std::size_t i = 0; i < c.pixels.size() && identical; ++i)
    identical = c.pixels[i] == d.pixels[i];
  CHECK_FALSE(identical);
}

TEST_CASE("road scenes keep the road fraction in range over 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    LabeledImage img = generate_synthetic_scene(SceneKind::Road, seed);
    std::size_t road = 0;
    for (std::uint8_t id : img.labels.ids)
      if (id == 1) ++road;
    double fraction = static_cast<double>(road) / img.labels.ids.size();
    CHECK(fraction >= 0.15);
    CHECK(fraction <= 0.45);
  }
}

TEST_CASE("urban scenes contain all 8 classes in at least 95 of 100 seeds") {
  int complete = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    LabeledImage img = generate_synthetic_scene(SceneKind::Urban, seed);
    std::set<std::uint8_t> present;
    for (std::uint8_t id : img.labels.ids)
      if (id != kUnlabeled) present.insert(id);
    if (present.size() == 8) ++complete;
  }
  CHECK(complete >= 95);
}

TEST_CASE("image and label map files round-trip") {
  LabeledImage img = gradient_image(9, 13);
  // quantize the pixels first so the round trip is exact
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] =
        static_cast<float>(std::lround(img.pixels[i] * 255.0f)) / 255.0f;
  std::string ppm = temp_path("patchnet_test.ppm");
  save_image_p6(ppm, img.pixels);
  Tensor back = load_image_p6(ppm);
  REQUIRE(back.same_shape(img.pixels));
  for (std::size_t i = 0; i < back.size(); ++i)
    CHECK(back[i] == doctest::Approx(img.pixels[i]).epsilon(1e-6));

  LabelMap labels(9, 13);
  for (std::size_t i = 0; i < labels.ids.size(); ++i)
    labels.ids[i] = static_cast<std::uint8_t>(i % 7);
  labels.ids[5] = kUnlabeled;
  std::string pgm = temp_path("patchnet_test.pgm");
  save_labelmap_p5(pgm, labels);
  LabelMap lback = load_labelmap_p5(pgm);
  CHECK(lback.ids == labels.ids);
  std::remove(ppm.c_str());
  std::remove(pgm.c_str());
}

TEST_CASE("manifests round-trip and the dataset loader resolves paths") {
  auto dir = std::filesystem::temp_directory_path() / "patchnet_manifest_test";
  std::filesystem::create_directories(dir);
  LabeledImage img = generate_synthetic_scene(SceneKind::Urban, 7);
  save_image_p6((dir / "img.ppm").string(), img.pixels);
  save_labelmap_p5((dir / "lab.pgm").string(), img.labels);
  Tensor wm = birdseye_weight_map(img.height(), img.width(), 20, 1.0f);
  save_ptnt((dir / "wgt.ptnt").string(), wm);

  std::vector<ManifestEntry> entries = {
      {"img.ppm", "lab.pgm", std::string("wgt.ptnt")}};
  save_manifest((dir / "manifest.json").string(), entries);
  auto loaded = load_manifest((dir / "manifest.json").string());
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].image == "img.ppm");
  REQUIRE(loaded[0].weights.has_value());

  auto dataset = load_dataset((dir / "manifest.json").string());
  REQUIRE(dataset->size() == 1);
  CHECK((*dataset)[0].labels.ids == img.labels.ids);
  REQUIRE((*dataset)[0].weight_map.has_value());
  CHECK((*dataset)[0].weight_map->at(0, 30, 4) ==
        doctest::Approx(wm.at(0, 30, 4)));
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
