#include "patchnet/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "patchnet/errors.hpp"

namespace patchnet {

namespace {

double f_measure(double tp, double fp, double fn) {
  double denom = 2.0 * tp + fp + fn;
  return denom == 0.0 ? 0.0 : 2.0 * tp / denom;
}

struct SweepPoint {
  double threshold, tp, fp, fn;
};

// Threshold candidates in descending order: the 1+eps sentinel, every
// distinct score, then 0.
std::vector<SweepPoint> sweep(const BinaryEval& eval) {
  std::size_t n = eval.size();
  if (eval.truths.size() != n ||
      (!eval.weights.empty() && eval.weights.size() != n))
    throw Error(ErrorKind::Dimension, "binary eval fields disagree in length");
  std::size_t pos = 0;
  double pos_weight = 0.0, neg_weight = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    float w = eval.weights.empty() ? 1.0f : eval.weights[i];
    if (w < 0.0f) throw Error(ErrorKind::Weight, "negative example weight");
    if (eval.truths[i]) {
      ++pos;
      pos_weight += w;
    } else {
      neg_weight += w;
    }
  }
  if (pos == 0 || pos == n)
    throw Error(ErrorKind::DegenerateEval,
                "need at least one positive and one negative example");
  (void)neg_weight;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return eval.scores[a] > eval.scores[b];
  });

  std::vector<SweepPoint> points;
  points.push_back({1.0 + 1e-9, 0.0, 0.0, pos_weight});

  double tp = 0.0, fp = 0.0;
  std::size_t i = 0;
  while (i < n) {
    float score = eval.scores[order[i]];
    while (i < n && eval.scores[order[i]] == score) {
      std::size_t idx = order[i];
      float w = eval.weights.empty() ? 1.0f : eval.weights[idx];
      if (eval.truths[idx])
        tp += w;
      else
        fp += w;
      ++i;
    }
    if (score > 0.0f)
      points.push_back({static_cast<double>(score), tp, fp, pos_weight - tp});
  }
  // t = 0 accepts everything; tp and fp hold the full weight masses here
  points.push_back({0.0, tp, fp, pos_weight - tp});
  return points;
}

}  // namespace

MaxFResult max_f(const BinaryEval& eval) {
  auto points = sweep(eval);
  MaxFResult best;
  best.max_f = -1.0;
  for (const SweepPoint& p : points) {
    double f = f_measure(p.tp, p.fp, p.fn);
    if (f >= best.max_f) {  // descending thresholds: ties keep the smallest
      best.max_f = f;
      best.threshold = p.threshold;
      best.precision = (p.tp + p.fp) == 0.0 ? 0.0 : p.tp / (p.tp + p.fp);
      best.recall = (p.tp + p.fn) == 0.0 ? 0.0 : p.tp / (p.tp + p.fn);
    }
  }
  return best;
}

std::vector<std::array<double, 3>> pr_curve(const BinaryEval& eval) {
  auto points = sweep(eval);
  std::vector<std::array<double, 3>> out;
  for (auto it = points.rbegin(); it != points.rend(); ++it) {
    double precision =
        (it->tp + it->fp) == 0.0 ? 1.0 : it->tp / (it->tp + it->fp);
    double recall = (it->tp + it->fn) == 0.0 ? 0.0 : it->tp / (it->tp + it->fn);
    out.push_back({it->threshold, precision, recall});
  }
  return out;
}

std::int64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::int64_t s = 0;
  for (std::size_t j = 0; j < k; ++j) s += at(truth, j);
  return s;
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

OrrArr orr_arr(const ConfusionMatrix& cm) {
  std::int64_t total = cm.total();
  if (cm.k == 0 || total == 0)
    throw Error(ErrorKind::DegenerateEval, "empty confusion matrix");
  std::int64_t diag = 0;
  double acc_sum = 0.0;
  std::size_t supported = 0;
  for (std::size_t c = 0; c < cm.k; ++c) {
    diag += cm.at(c, c);
    std::int64_t support = cm.row_sum(c);
    if (support > 0) {
      acc_sum += static_cast<double>(cm.at(c, c)) / support;
      ++supported;
    }
  }
  OrrArr out;
  out.orr = static_cast<double>(diag) / total;
  out.arr = acc_sum / supported;
  return out;
}

void accumulate_binary(BinaryEval& eval, const Tensor& prob,
                       const LabelMap& truth, const Tensor* weight_map) {
  if (prob.rank() != 3 || prob.dim(0) != 2)
    throw Error(ErrorKind::Dimension,
                "binary evaluation expects a 2 x H x W probability map, got " +
                    shape_to_string(prob.shape()));
  if (prob.dim(1) != truth.height || prob.dim(2) != truth.width)
    throw Error(ErrorKind::Dimension, "probability map and truth disagree");
  for (std::size_t r = 0; r < truth.height; ++r) {
    for (std::size_t c = 0; c < truth.width; ++c) {
      std::uint8_t id = truth.at(r, c);
      if (id == kUnlabeled) continue;
      float w = weight_map ? weight_map->at(0, r, c) : 1.0f;
      eval.add(prob.at(1, r, c), id == 1, w);
    }
  }
}

void accumulate_confusion(ConfusionMatrix& cm, const LabelMap& pred,
                          const LabelMap& truth) {
  if (pred.height != truth.height || pred.width != truth.width)
    throw Error(ErrorKind::Dimension, "prediction and truth sizes disagree");
  for (std::size_t i = 0; i < truth.ids.size(); ++i) {
    std::uint8_t t = truth.ids[i];
    if (t == kUnlabeled) continue;
    std::uint8_t p = pred.ids[i];
    if (t >= cm.k || p >= cm.k)
      throw Error(ErrorKind::Data,
                  "label id outside the confusion matrix (" +
                      std::to_string(t) + " vs " + std::to_string(p) +
                      " with k=" + std::to_string(cm.k) + ")");
    ++cm.at(t, p);
  }
}

std::string MetricsBundle::to_json() const {
  nlohmann::json j;
  if (binary) {
    j["maxF"] = binary->max_f;
    j["threshold"] = binary->threshold;
    j["precision"] = binary->precision;
    j["recall"] = binary->recall;
  }
  if (multi) {
    j["orr"] = multi->orr;
    j["arr"] = multi->arr;
    auto rows = nlohmann::json::array();
    for (std::size_t t = 0; t < confusion.k; ++t) {
      auto row = nlohmann::json::array();
      for (std::size_t p = 0; p < confusion.k; ++p)
        row.push_back(confusion.at(t, p));
      rows.push_back(row);
    }
    j["confusion"] = rows;
  }
  return j.dump(2);
}

MetricsBundle evaluate_labelmap(const Tensor& prob, const LabelMap& pred,
                                const LabelMap& truth, bool binary_task,
                                const Tensor* weight_map) {
  MetricsBundle bundle;
  if (binary_task) {
    BinaryEval eval;
    accumulate_binary(eval, prob, truth, weight_map);
    bundle.binary = max_f(eval);
  } else {
    std::size_t k = prob.dim(0);
    bundle.confusion = ConfusionMatrix(k);
    accumulate_confusion(bundle.confusion, pred, truth);
    bundle.multi = orr_arr(bundle.confusion);
  }
  return bundle;
}

}  // namespace patchnet
