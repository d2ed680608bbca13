#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "patchnet/data.hpp"
#include "patchnet/network.hpp"

namespace patchnet {

struct TrainConfig {
  int batch_size = 48;
  float learning_rate = 0.01f;
  float momentum = 0.9f;
  int epochs = 1;
  int iterations_per_epoch = 10000;  // an epoch is a fixed iteration count
  Weighting weighting = Weighting::None;
  bool dropout = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// Velocity tensors mirroring every parameter tensor, starting at zero.
struct OptimizerState {
  std::vector<Tensor> velocity;
  static OptimizerState for_model(Model& model);
};

// v <- momentum * v - lr * g;  theta <- theta + v
void sgd_step(Model& model, OptimizerState& state, float learning_rate,
              float momentum);

// Inverse-frequency class weights: weight k = 1/count_k. Classes with zero
// count are absent and get weight 0; looking one up is an error.
std::vector<float> compute_class_weights(
    const std::vector<std::int64_t>& counts);
float class_weight(const std::vector<std::int64_t>& counts, int label);

// +1/-1 targets for single-output networks (positive class = 1), one-hot
// otherwise.
void encode_targets(const std::vector<int>& labels, std::size_t out_width,
                    Tensor& targets);

struct EpochStat {
  int epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;  // NaN when no validation callback is installed
  std::int64_t wall_ms = 0;
};

struct TrainReport {
  std::vector<EpochStat> epochs;
  std::string config_json;  // embedded run configuration, may be empty
  std::string to_jsonl() const;
  std::string to_csv() const;
};

using ValCallback = std::function<double(int epoch, Model& model)>;

// Minimizes the weighted quadratic objective with momentum SGD over uniform
// with-replacement mini-batches. Deterministic for a fixed seed and
// independent of the worker count.
TrainReport train(Model& model, const TrainingPool& pool,
                  const TrainConfig& config, const ValCallback& validate = {});

}  // namespace patchnet
