#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "patchnet/data.hpp"
#include "patchnet/tensor.hpp"

namespace patchnet {

// Scores in [0, 1] with boolean truths and nonnegative example weights.
struct BinaryEval {
  std::vector<float> scores;
  std::vector<std::uint8_t> truths;
  std::vector<float> weights;  // empty means all ones

  void add(float score, bool truth, float weight = 1.0f) {
    scores.push_back(score);
    truths.push_back(truth ? 1 : 0);
    weights.push_back(weight);
  }
  std::size_t size() const { return scores.size(); }
};

struct MaxFResult {
  double max_f = 0.0;
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Maximum F1 over all decision thresholds: predict positive when
// score >= t, candidates are every distinct score plus the 0 and 1+eps
// sentinels, ties resolve to the smallest threshold.
MaxFResult max_f(const BinaryEval& eval);

// (threshold, precision, recall) triples of the full sweep, sorted by
// ascending threshold; useful for PR-curve dumps.
std::vector<std::array<double, 3>> pr_curve(const BinaryEval& eval);

struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::int64_t> counts;  // rows = truth, cols = prediction

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes)
      : k(classes), counts(classes * classes, 0) {}
  std::int64_t& at(std::size_t truth, std::size_t pred) {
    return counts[truth * k + pred];
  }
  std::int64_t at(std::size_t truth, std::size_t pred) const {
    return counts[truth * k + pred];
  }
  std::int64_t row_sum(std::size_t truth) const;
  std::int64_t total() const;
};

struct OrrArr {
  double orr = 0.0;  // plain accuracy
  double arr = 0.0;  // mean of class-wise accuracies over supported classes
};

OrrArr orr_arr(const ConfusionMatrix& cm);

// Per-pixel aggregation. Unlabeled truth pixels are skipped everywhere.
void accumulate_binary(BinaryEval& eval, const Tensor& prob,
                       const LabelMap& truth,
                       const Tensor* weight_map = nullptr);
void accumulate_confusion(ConfusionMatrix& cm, const LabelMap& pred,
                          const LabelMap& truth);

struct MetricsBundle {
  std::optional<MaxFResult> binary;
  std::optional<OrrArr> multi;
  ConfusionMatrix confusion;
  std::string to_json() const;
};

// Binary task: fills a BinaryEval from the positive-class probability
// channel; multi-class: confusion over argmax labels.
MetricsBundle evaluate_labelmap(const Tensor& prob, const LabelMap& pred,
                                const LabelMap& truth, bool binary_task,
                                const Tensor* weight_map = nullptr);

}  // namespace patchnet
