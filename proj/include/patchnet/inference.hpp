#pragma once

#include <optional>

#include "patchnet/data.hpp"
#include "patchnet/network.hpp"
#include "patchnet/postproc.hpp"
#include "patchnet/tensor.hpp"

namespace patchnet {

// Per-pixel class scores normalized to sum 1 over classes. A single-output
// network maps score s to [1-s', s'] with s' = (s+1)/2.
struct InferenceResult {
  Tensor prob;      // K x H x W
  LabelMap labels;  // argmax, or fused labels when post-processing ran
};

struct InferenceOptions {
  int batch_size = 256;
  std::optional<SegmentationParams> postproc;
  // The row-slab fast path assembles patches through im2col on a reflected
  // slab; the naive path extracts every patch separately. Both produce
  // identical output.
  bool use_naive_extraction = false;
};

InferenceResult label_image(const Model& model, const Tensor& image,
                            const InferenceOptions& options = {});

// Color overlay for quick inspection: binary tasks tint the positive class
// green, multi-class maps blend a fixed palette.
Tensor render_overlay(const Tensor& image, const LabelMap& labels,
                      std::size_t num_classes);

}  // namespace patchnet
