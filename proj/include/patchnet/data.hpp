#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "patchnet/rng.hpp"
#include "patchnet/tensor.hpp"

namespace patchnet {

// Reserved label id excluding a pixel from training and evaluation.
constexpr std::uint8_t kUnlabeled = 255;

struct LabelMap {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> ids;  // row-major

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), ids(h * w, fill) {}
  std::uint8_t& at(std::size_t r, std::size_t c) { return ids[r * width + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const {
    return ids[r * width + c];
  }
};

struct LabeledImage {
  Tensor pixels;                      // 3 x H x W in [0, 1]
  LabelMap labels;                    // H x W class ids, 255 = unlabeled
  std::optional<Tensor> weight_map;   // H x W, >= 0

  std::size_t height() const { return pixels.dim(1); }
  std::size_t width() const { return pixels.dim(2); }
};

// Patch window centered at (row, col); the center sits at index size/2 inside
// the window. Pixels outside the image are filled by symmetric reflection.
Tensor extract_patch(const Tensor& pixels, long row, long col, int size = 28);

// Normalized position of a pixel: x = col/(W-1), y = row/(H-1), both in
// [0, 1]. Degenerate 1-pixel axes map to 0.
float normalized_x(std::size_t col, std::size_t width);
float normalized_y(std::size_t row, std::size_t height);

struct PatchSample {
  Tensor patch;    // 3 x size x size
  float x = 0.0f;  // normalized position
  float y = 0.0f;
  int label = 0;
  float weight = 1.0f;
};

enum class Weighting { None, InverseClassFrequency, PixelWeightMap };

const char* weighting_name(Weighting w);
Weighting weighting_from_name(const std::string& name);

// Lightweight handle into the source images; samples materialize on demand.
class TrainingPool {
 public:
  struct Entry {
    std::uint32_t image;
    std::uint16_t row, col;
    std::uint8_t label;
    float weight;
  };

  TrainingPool() = default;
  TrainingPool(std::shared_ptr<const std::vector<LabeledImage>> images,
               std::vector<Entry> entries, Weighting weighting, int patch_size);

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  PatchSample sample(std::size_t i) const;
  const LabeledImage& image_of(std::size_t i) const {
    return (*images_)[entries_[i].image];
  }
  Weighting weighting() const { return weighting_; }
  int patch_size() const { return patch_size_; }
  int num_classes() const;
  std::vector<std::int64_t> label_counts() const;

  // Deterministic subsample with exact per-class counts; entries are taken in
  // pool order. Throws when a requested class cannot supply enough samples.
  TrainingPool subsample_per_class(const std::vector<std::size_t>& counts) const;
  // Recomputes entry weights for a (possibly changed) weighting scheme.
  TrainingPool reweighted(Weighting weighting) const;

 private:
  std::shared_ptr<const std::vector<LabeledImage>> images_;
  std::vector<Entry> entries_;
  Weighting weighting_ = Weighting::None;
  int patch_size_ = 28;
};

// Uniformly samples labeled pixels from every image. Unlabeled pixels are
// never drawn; under PixelWeightMap, zero-weight pixels are skipped as well
// since they cannot contribute to the objective.
TrainingPool build_training_pool(
    std::shared_ptr<const std::vector<LabeledImage>> images,
    int samples_per_image, Weighting weighting, Rng& rng, int patch_size = 28);

// Ground-plane pixel-area weights for a synthetic perspective: rows at or
// above the horizon get 0, below it w(row) = (1/(row-horizon))^strength,
// normalized to mean 1 over the nonzero entries.
Tensor birdseye_weight_map(std::size_t height, std::size_t width,
                           long horizon_row, float strength);

enum class SceneKind { Road, Urban };

SceneKind scene_kind_from_name(const std::string& name);
const char* scene_kind_name(SceneKind k);

// Deterministic synthetic scenes for desk-scale experiments. Road scenes are
// a two-class perspective wedge whose ground half is a single texture, so the
// road/off-road split is decidable only from the pixel position; urban scenes
// are eight-class blocky facades with strong vertical layout priors and a
// one-pixel unlabeled seam between regions.
LabeledImage generate_synthetic_scene(SceneKind kind, std::uint64_t seed);

// Binary portable pixmap / graymap round trips.
void save_image_p6(const std::string& path, const Tensor& pixels);
Tensor load_image_p6(const std::string& path);
void save_labelmap_p5(const std::string& path, const LabelMap& labels);
LabelMap load_labelmap_p5(const std::string& path);

struct ManifestEntry {
  std::string image;
  std::string labels;
  std::optional<std::string> weights;
};

void save_manifest(const std::string& path,
                   const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> load_manifest(const std::string& path);
// Loads every image referenced by a manifest; relative paths resolve against
// the manifest's directory.
std::shared_ptr<std::vector<LabeledImage>> load_dataset(
    const std::string& manifest_path);

}  // namespace patchnet
