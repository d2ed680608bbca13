#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "patchnet/rng.hpp"
#include "patchnet/tensor.hpp"

namespace patchnet {

enum class Activation { Tanh, Relu, Sigmoid };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Closed set of layer descriptions.
struct ConvSpec {
  int kh = 1, kw = 1;
  int out_channels = 1;
};
struct MaxPoolSpec {
  int ph = 1, pw = 1;
};
struct ActivationSpec {
  Activation fn = Activation::Tanh;
};
struct FullyConnectedSpec {
  int out = 1;
  int aux_inputs = 0;  // width of the auxiliary input concatenated in front
                       // of the weight matrix, e.g. 2 for (x, y) positions
};
struct DropoutSpec {
  float rate = 0.5f;
};

using LayerSpec = std::variant<ConvSpec, MaxPoolSpec, ActivationSpec,
                               FullyConnectedSpec, DropoutSpec>;

std::string layer_spec_name(const LayerSpec& spec);

struct LayerParams {
  Tensor weights;
  Tensor bias;
  Tensor weight_grad;
  Tensor bias_grad;
};

struct ForwardCtx {
  const Tensor* aux = nullptr;  // N x A auxiliary features, or null
  Rng* rng = nullptr;           // used by dropout in training mode
};

// A differentiable computation node. forward() caches whatever backward()
// needs and is meant for the single training thread; infer() is pure and can
// run concurrently from many threads.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& input, const ForwardCtx& ctx) = 0;
  virtual Tensor infer(const Tensor& input, const ForwardCtx& ctx) const = 0;
  // Consumes the cached activations from the last forward() call.
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual LayerParams* params() { return nullptr; }
  virtual const LayerParams* params() const { return nullptr; }

  virtual std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& input_shape) const = 0;
  virtual std::string describe() const = 0;

  void zero_grads();
};

class ConvLayer : public Layer {
 public:
  ConvLayer(int in_channels, const ConvSpec& spec);

  Tensor forward(const Tensor& input, const ForwardCtx& ctx) override;
  Tensor infer(const Tensor& input, const ForwardCtx& ctx) const override;
  Tensor backward(const Tensor& grad_out) override;
  LayerParams* params() override { return &params_; }
  const LayerParams* params() const override { return &params_; }
  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& input_shape) const override;
  std::string describe() const override;

  int in_channels() const { return in_channels_; }
  const ConvSpec& spec() const { return spec_; }

 private:
  Tensor run(const Tensor& input, Tensor* cache_cols) const;

  int in_channels_;
  ConvSpec spec_;
  LayerParams params_;
  Tensor cached_cols_;
  std::vector<std::size_t> cached_in_shape_;
};

class MaxPoolLayer : public Layer {
 public:
  explicit MaxPoolLayer(const MaxPoolSpec& spec) : spec_(spec) {}

  Tensor forward(const Tensor& input, const ForwardCtx& ctx) override;
  Tensor infer(const Tensor& input, const ForwardCtx& ctx) const override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& input_shape) const override;
  std::string describe() const override;

  // Flat input index feeding each output value; ties resolve to the first
  // element in row-major window order.
  const std::vector<std::uint32_t>& argmax() const { return argmax_; }

 private:
  Tensor run(const Tensor& input, std::vector<std::uint32_t>* argmax) const;

  MaxPoolSpec spec_;
  std::vector<std::uint32_t> argmax_;
  std::vector<std::size_t> cached_in_shape_;
};

class ActivationLayer : public Layer {
 public:
  explicit ActivationLayer(const ActivationSpec& spec) : spec_(spec) {}

  Tensor forward(const Tensor& input, const ForwardCtx& ctx) override;
  Tensor infer(const Tensor& input, const ForwardCtx& ctx) const override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& input_shape) const override;
  std::string describe() const override;

 private:
  ActivationSpec spec_;
  Tensor cached_output_;
};

class FullyConnectedLayer : public Layer {
 public:
  FullyConnectedLayer(int in_features, const FullyConnectedSpec& spec);

  Tensor forward(const Tensor& input, const ForwardCtx& ctx) override;
  Tensor infer(const Tensor& input, const ForwardCtx& ctx) const override;
  Tensor backward(const Tensor& grad_out) override;
  LayerParams* params() override { return &params_; }
  const LayerParams* params() const override { return &params_; }
  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& input_shape) const override;
  std::string describe() const override;

  int in_features() const { return in_features_; }
  const FullyConnectedSpec& spec() const { return spec_; }

 private:
  // Flattens image-shaped input and concatenates the auxiliary features.
  Tensor assemble(const Tensor& input, const ForwardCtx& ctx) const;

  int in_features_;
  FullyConnectedSpec spec_;
  LayerParams params_;
  Tensor cached_input_;  // N x (D + A)
  std::vector<std::size_t> cached_in_shape_;
};

class DropoutLayer : public Layer {
 public:
  explicit DropoutLayer(const DropoutSpec& spec);

  Tensor forward(const Tensor& input, const ForwardCtx& ctx) override;
  Tensor infer(const Tensor& input, const ForwardCtx& ctx) const override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& input_shape) const override;
  std::string describe() const override;

 private:
  DropoutSpec spec_;
  std::vector<float> mask_;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec,
                                  const std::vector<std::size_t>& input_shape);

// loss = sum_i w_i * ||pred_i - target_i||^2 / sum_i w_i, with the gradient
// of that expression. Normalizing by the weight mass keeps the learning rate
// independent of the batch weighting scheme.
std::pair<double, Tensor> weighted_quadratic_loss(
    const Tensor& pred, const Tensor& target, const std::vector<float>& weights);

}  // namespace patchnet
