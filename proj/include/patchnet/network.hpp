#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "patchnet/layers.hpp"
#include "patchnet/rng.hpp"
#include "patchnet/tensor.hpp"

namespace patchnet {

// Heuristic: uniform in [-1/sqrt(n_in), 1/sqrt(n_in)].
// Normalized: uniform in +-sqrt(6)/sqrt(n_in + n_out).
// Biases start at zero under both schemes. For convolutions
// n_in = C*kh*kw and n_out = F*kh*kw.
enum class InitScheme { Heuristic, Normalized };

const char* init_scheme_name(InitScheme s);
InitScheme init_scheme_from_name(const std::string& name);

struct NetworkSpec {
  std::array<std::size_t, 3> input_patch{3, 28, 28};  // channels, height, width
  std::vector<LayerSpec> layers;

  // Index of the fully connected layer that receives the (x, y) auxiliary
  // input, i.e. the unique layer with aux_inputs > 0.
  std::optional<std::size_t> aux_layer_index() const;
};

struct PresetOptions {
  bool spatial_prior = true;
  bool dropout = false;
  float dropout_rate = 0.5f;
};

// The two patch-classification architectures plus shrunken 8x8 variants used
// by the gradient-check suites.
NetworkSpec road_preset(const PresetOptions& opts = {});
NetworkSpec urban_preset(const PresetOptions& opts = {});
NetworkSpec road_tiny_preset(bool spatial_prior = true);
NetworkSpec urban_tiny_preset(bool spatial_prior = true);

std::vector<std::string> road_class_names();
std::vector<std::string> urban_class_names();

struct ModelMeta {
  std::vector<std::string> class_names;
  std::string task;         // "road", "urban" or free-form
  std::uint64_t seed = 0;
  bool mean_subtract = false;
  std::string config;       // JSON of the training configuration, if any
};

class Model {
 public:
  static Model build(const NetworkSpec& spec, InitScheme init, Rng& rng);

  // Runs the pipeline in training mode and caches activations for backward().
  Tensor forward(const Tensor& patches, const Tensor* positions,
                 Rng* rng = nullptr);
  // Pure forward pass; safe to call concurrently from many threads.
  Tensor infer(const Tensor& patches, const Tensor* positions) const;

  void backward(const Tensor& loss_grad);
  void zero_grads();

  std::vector<LayerParams*> params();
  std::vector<const LayerParams*> params() const;

  const NetworkSpec& spec() const { return spec_; }
  ModelMeta& meta() { return meta_; }
  const ModelMeta& meta() const { return meta_; }

  std::size_t output_width() const;
  // One line per layer with propagated shapes, produced at build time.
  const std::string& shape_report() const { return shape_report_; }
  const std::vector<std::vector<std::size_t>>& layer_output_shapes() const {
    return layer_shapes_;
  }

  void save(const std::string& path) const;
  static Model load(const std::string& path);

  Layer& layer(std::size_t i) { return *layers_[i]; }
  std::size_t layer_count() const { return layers_.size(); }

 private:
  Model() = default;
  void construct_layers();  // shape propagation + layer instantiation
  void check_positions(const Tensor& patches, const Tensor* positions) const;

  NetworkSpec spec_;
  ModelMeta meta_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<std::vector<std::size_t>> layer_shapes_;
  std::string shape_report_;
};

}  // namespace patchnet
