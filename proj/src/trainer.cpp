#include "patchnet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "patchnet/errors.hpp"
#include "patchnet/layers.hpp"
#include "patchnet/threading.hpp"

namespace patchnet {

void TrainConfig::validate() const {
  if (batch_size < 1)
    throw Error(ErrorKind::Parameter, "batch_size must be >= 1");
  if (!(learning_rate > 0.0f))
    throw Error(ErrorKind::Parameter, "learning_rate must be > 0");
  if (!(momentum >= 0.0f && momentum < 1.0f))
    throw Error(ErrorKind::Parameter, "momentum must lie in [0, 1)");
  if (epochs < 1 || iterations_per_epoch < 1)
    throw Error(ErrorKind::Parameter,
                "epochs and iterations_per_epoch must be >= 1");
}

OptimizerState OptimizerState::for_model(Model& model) {
  OptimizerState state;
  for (LayerParams* p : model.params()) {
    state.velocity.emplace_back(p->weights.shape());
    state.velocity.emplace_back(p->bias.shape());
  }
  return state;
}

void sgd_step(Model& model, OptimizerState& state, float learning_rate,
              float momentum) {
  auto params = model.params();
  if (state.velocity.size() != params.size() * 2)
    throw Error(ErrorKind::Parameter,
                "optimizer state does not match the model");
  std::size_t vi = 0;
  for (LayerParams* p : params) {
    Tensor* tensors[2] = {&p->weights, &p->bias};
    Tensor* grads[2] = {&p->weight_grad, &p->bias_grad};
    for (int t = 0; t < 2; ++t, ++vi) {
      float* theta = tensors[t]->data();
      const float* g = grads[t]->data();
      float* v = state.velocity[vi].data();
      std::size_t total = tensors[t]->size();
      for (std::size_t i = 0; i < total; ++i) {
        v[i] = momentum * v[i] - learning_rate * g[i];
        theta[i] += v[i];
      }
    }
  }
}

std::vector<float> compute_class_weights(
    const std::vector<std::int64_t>& counts) {
  std::vector<float> weights(counts.size(), 0.0f);
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] < 0)
      throw Error(ErrorKind::Parameter, "negative class count");
    if (counts[k] > 0) weights[k] = 1.0f / static_cast<float>(counts[k]);
  }
  return weights;
}

float class_weight(const std::vector<std::int64_t>& counts, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= counts.size() ||
      counts[label] == 0)
    throw Error(ErrorKind::MissingClass,
                "class " + std::to_string(label) +
                    " has no examples in the training set");
  return 1.0f / static_cast<float>(counts[label]);
}

void encode_targets(const std::vector<int>& labels, std::size_t out_width,
                    Tensor& targets) {
  std::size_t n = labels.size();
  if (targets.rank() != 2 || targets.dim(0) != n || targets.dim(1) != out_width)
    targets = Tensor({n, out_width});
  if (out_width == 1) {
    for (std::size_t i = 0; i < n; ++i)
      targets.at(i, 0) = labels[i] == 1 ? 1.0f : -1.0f;
  } else {
    targets.fill(0.0f);
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= out_width)
        throw Error(ErrorKind::Data,
                    "label " + std::to_string(labels[i]) +
                        " outside the network's " +
                        std::to_string(out_width) + " outputs");
      targets.at(i, static_cast<std::size_t>(labels[i])) = 1.0f;
    }
  }
}

std::string TrainReport::to_jsonl() const {
  std::ostringstream os;
  if (!config_json.empty()) {
    nlohmann::json header;
    header["config"] = nlohmann::json::parse(config_json, nullptr, false);
    os << header.dump() << "\n";
  }
  for (const EpochStat& e : epochs) {
    nlohmann::json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    if (std::isnan(e.val_metric))
      j["val_metric"] = nullptr;
    else
      j["val_metric"] = e.val_metric;
    j["wall_ms"] = e.wall_ms;
    os << j.dump() << "\n";
  }
  return os.str();
}

std::string TrainReport::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,val_metric\n";
  for (const EpochStat& e : epochs) {
    os << e.epoch << "," << e.train_loss << ",";
    if (!std::isnan(e.val_metric)) os << e.val_metric;
    os << "\n";
  }
  return os.str();
}

TrainReport train(Model& model, const TrainingPool& pool,
                  const TrainConfig& config, const ValCallback& validate) {
  config.validate();
  if (pool.size() == 0)
    throw Error(ErrorKind::Data, "training pool is empty");
  if (pool.weighting() != config.weighting)
    throw Error(ErrorKind::Data,
                std::string("pool was built with ") +
                    weighting_name(pool.weighting()) +
                    " weighting but the config asks for " +
                    weighting_name(config.weighting));

  std::size_t n = config.batch_size;
  std::size_t out_width = model.output_width();
  int patch = pool.patch_size();
  auto aux = model.spec().aux_layer_index();
  bool subtract_mean = model.meta().mean_subtract;

  Rng rng(config.seed);
  OptimizerState state = OptimizerState::for_model(model);

  Tensor patches({n, 3, static_cast<std::size_t>(patch),
                  static_cast<std::size_t>(patch)});
  Tensor positions({n, 2});
  Tensor targets({n, out_width});
  std::vector<float> weights(n);
  std::vector<int> labels(n);
  std::vector<std::size_t> picks(n);

  TrainReport report;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    for (int iter = 0; iter < config.iterations_per_epoch; ++iter) {
      // indices are drawn on the training thread; extraction runs on the
      // worker pool into disjoint batch slots
      for (std::size_t i = 0; i < n; ++i) picks[i] = rng.index(pool.size());
      parallel_for(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          PatchSample s = pool.sample(picks[i]);
          std::copy(s.patch.data(), s.patch.data() + s.patch.size(),
                    patches.data() + i * s.patch.size());
          positions.at(i, 0) = s.x;
          positions.at(i, 1) = s.y;
          labels[i] = s.label;
          weights[i] = s.weight;
        }
      });
      if (subtract_mean) {
        std::size_t plane = static_cast<std::size_t>(patch) * patch;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t c = 0; c < 3; ++c) {
            float* p = patches.data() + (i * 3 + c) * plane;
            double mean = 0.0;
            for (std::size_t j = 0; j < plane; ++j) mean += p[j];
            float m = static_cast<float>(mean / plane);
            for (std::size_t j = 0; j < plane; ++j) p[j] -= m;
          }
        }
      }
      encode_targets(labels, out_width, targets);

      Tensor out = model.forward(patches, aux ? &positions : nullptr, &rng);
      auto [loss, grad] = weighted_quadratic_loss(out, targets, weights);
      if (!std::isfinite(loss)) {
        int it = (epoch - 1) * config.iterations_per_epoch + iter;
        throw Error(ErrorKind::Divergence,
                    "loss is not finite at iteration " + std::to_string(it));
      }
      loss_sum += loss;
      model.zero_grads();
      model.backward(grad);
      sgd_step(model, state, config.learning_rate, config.momentum);
    }

    EpochStat stat;
    stat.epoch = epoch;
    stat.train_loss = loss_sum / config.iterations_per_epoch;
    stat.val_metric =
        validate ? validate(epoch, model) : std::nan("");
    stat.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
    report.epochs.push_back(stat);
  }
  return report;
}

}  // namespace patchnet
