#pragma once

#include <cstdint>
#include <vector>

#include "patchnet/data.hpp"
#include "patchnet/tensor.hpp"

namespace patchnet {

// Graph-based segmentation parameters. k controls the merge threshold and is
// expressed in 8-bit color units (edge weights are scaled by 255), matching
// the usual parameterization of the published algorithm.
struct SegmentationParams {
  float k = 550.0f;
  float sigma = 0.5f;
  int min_size = 0;
};

struct SegmentMap {
  std::size_t height = 0, width = 0;
  std::vector<std::int32_t> ids;  // dense in [0, count)
  std::int32_t count = 0;

  std::int32_t at(std::size_t r, std::size_t c) const {
    return ids[r * width + c];
  }
};

// Greedy graph-based oversegmentation: Gaussian smoothing, an 8-connected
// grid graph with Euclidean RGB edge weights, edges processed in
// nondecreasing (weight, index) order, components merged while the edge
// weight stays within min(Int(C) + k/|C|) of both sides.
SegmentMap segment(const Tensor& image, const SegmentationParams& params);

// Assigns every segment the class with the highest mean per-pixel
// probability; ties resolve to the lowest class id.
LabelMap fuse_labels(const Tensor& prob, const SegmentMap& seg);

// Majority vote over per-pixel argmax labels inside each segment; provided
// for comparison with the mean-probability rule.
LabelMap fuse_labels_majority(const Tensor& prob, const SegmentMap& seg);

// Segment ids mod 256 as a graymap for quick visual inspection.
LabelMap segment_preview(const SegmentMap& seg);

}  // namespace patchnet
