#include "patchnet/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "patchnet/errors.hpp"
#include "patchnet/threading.hpp"

namespace patchnet {

namespace {

long fold(long i, long n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

void subtract_channel_means(Tensor& patches) {
  std::size_t n = patches.dim(0), c = patches.dim(1);
  std::size_t plane = patches.dim(2) * patches.dim(3);
  for (std::size_t i = 0; i < n * c; ++i) {
    float* p = patches.data() + i * plane;
    double mean = 0.0;
    for (std::size_t j = 0; j < plane; ++j) mean += p[j];
    float m = static_cast<float>(mean / plane);
    for (std::size_t j = 0; j < plane; ++j) p[j] -= m;
  }
}

// Fills one batch of patches for pixels (row, col0..col0+count) using the
// naive per-pixel extractor.
void fill_batch_naive(const Tensor& image, std::size_t row, std::size_t col0,
                      std::size_t count, int patch, Tensor& batch) {
  for (std::size_t i = 0; i < count; ++i) {
    Tensor p = extract_patch(image, static_cast<long>(row),
                             static_cast<long>(col0 + i), patch);
    std::copy(p.data(), p.data() + p.size(), batch.data() + i * p.size());
  }
}

// Row-slab path: reflect-pads the rows feeding one output row, then im2col
// with a patch-sized kernel turns every pixel's receptive field into one
// column of the slab matrix.
struct RowSlab {
  Tensor cols;  // (3*patch*patch) x W
  std::size_t width = 0;

  void build(const Tensor& image, std::size_t row, int patch) {
    std::size_t h = image.dim(1), w = image.dim(2);
    long lo = -(patch / 2);
    std::size_t pw = w + static_cast<std::size_t>(patch) - 1;
    Tensor slab({1, 3, static_cast<std::size_t>(patch), pw});
    for (std::size_t c = 0; c < 3; ++c) {
      for (int py = 0; py < patch; ++py) {
        long sy = fold(static_cast<long>(row) + lo + py,
                       static_cast<long>(h));
        const float* src = image.data() + (c * h + sy) * w;
        float* dst =
            slab.data() + ((c * patch) + py) * pw;
        for (std::size_t px = 0; px < pw; ++px)
          dst[px] = src[fold(static_cast<long>(px) + lo,
                             static_cast<long>(w))];
      }
    }
    cols = im2col(slab, patch, patch, 1);
    width = w;
  }

  void fill_batch(std::size_t col0, std::size_t count, Tensor& batch) const {
    std::size_t rows = cols.dim(0);
    std::size_t ld = cols.dim(1);
    std::size_t per = rows;
    for (std::size_t i = 0; i < count; ++i) {
      float* dst = batch.data() + i * per;
      const float* src = cols.data() + (col0 + i);
      for (std::size_t r = 0; r < rows; ++r) dst[r] = src[r * ld];
    }
  }
};

}  // namespace

InferenceResult label_image(const Model& model, const Tensor& image,
                            const InferenceOptions& options) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw Error(ErrorKind::Dimension,
                "expected 3 x H x W image, got " +
                    shape_to_string(image.shape()));
  if (options.batch_size < 1)
    throw Error(ErrorKind::Parameter, "batch_size must be >= 1");
  std::size_t h = image.dim(1), w = image.dim(2);
  int patch = static_cast<int>(model.spec().input_patch[1]);
  if (model.spec().input_patch[0] != 3 ||
      model.spec().input_patch[2] != static_cast<std::size_t>(patch))
    throw Error(ErrorKind::Dimension,
                "model expects non-square or non-RGB patches");

  std::size_t out_width = model.output_width();
  std::size_t k = out_width == 1 ? 2 : out_width;
  bool wants_positions = model.spec().aux_layer_index().has_value();

  InferenceResult result;
  result.prob = Tensor({k, h, w});
  result.labels = LabelMap(h, w);

  std::size_t max_batch = std::min<std::size_t>(options.batch_size, w);

  parallel_for(h, [&](std::size_t r0, std::size_t r1) {
    Tensor batch({max_batch, 3, static_cast<std::size_t>(patch),
                  static_cast<std::size_t>(patch)});
    Tensor positions({max_batch, 2});
    RowSlab slab;
    for (std::size_t r = r0; r < r1; ++r) {
      if (!options.use_naive_extraction) slab.build(image, r, patch);
      for (std::size_t c0 = 0; c0 < w; c0 += max_batch) {
        std::size_t count = std::min(max_batch, w - c0);
        Tensor* batch_ptr = &batch;
        Tensor* pos_ptr = &positions;
        Tensor small_batch, small_pos;
        if (count != max_batch) {
          small_batch = Tensor({count, 3, static_cast<std::size_t>(patch),
                                static_cast<std::size_t>(patch)});
          small_pos = Tensor({count, 2});
          batch_ptr = &small_batch;
          pos_ptr = &small_pos;
        }
        if (options.use_naive_extraction)
          fill_batch_naive(image, r, c0, count, patch, *batch_ptr);
        else
          slab.fill_batch(c0, count, *batch_ptr);
        if (model.meta().mean_subtract) subtract_channel_means(*batch_ptr);
        for (std::size_t i = 0; i < count; ++i) {
          pos_ptr->at(i, 0) = normalized_x(c0 + i, w);
          pos_ptr->at(i, 1) = normalized_y(r, h);
        }
        Tensor scores =
            model.infer(*batch_ptr, wants_positions ? pos_ptr : nullptr);
        for (std::size_t i = 0; i < count; ++i) {
          std::size_t col = c0 + i;
          if (out_width == 1) {
            float s = std::clamp((scores.at(i, 0) + 1.0f) / 2.0f, 0.0f, 1.0f);
            result.prob.at(0, r, col) = 1.0f - s;
            result.prob.at(1, r, col) = s;
          } else {
            double sum = 0.0;
            for (std::size_t cls = 0; cls < k; ++cls)
              sum += scores.at(i, cls);
            if (sum < 1e-12) {
              for (std::size_t cls = 0; cls < k; ++cls)
                result.prob.at(cls, r, col) = 1.0f / static_cast<float>(k);
            } else {
              for (std::size_t cls = 0; cls < k; ++cls)
                result.prob.at(cls, r, col) =
                    static_cast<float>(scores.at(i, cls) / sum);
            }
          }
        }
      }
    }
  });

  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      std::size_t best = 0;
      for (std::size_t cls = 1; cls < k; ++cls)
        if (result.prob.at(cls, r, c) > result.prob.at(best, r, c)) best = cls;
      result.labels.at(r, c) = static_cast<std::uint8_t>(best);
    }
  }

  if (options.postproc) {
    SegmentMap seg = segment(image, *options.postproc);
    result.labels = fuse_labels(result.prob, seg);
  }
  return result;
}

Tensor render_overlay(const Tensor& image, const LabelMap& labels,
                      std::size_t num_classes) {
  static const float palette[][3] = {
      {0.55f, 0.27f, 0.07f}, {0.00f, 0.75f, 1.00f}, {1.00f, 0.50f, 0.00f},
      {0.25f, 0.60f, 1.00f}, {0.00f, 0.80f, 0.20f}, {1.00f, 0.00f, 0.00f},
      {0.50f, 0.50f, 0.50f}, {1.00f, 1.00f, 0.00f},
  };
  std::size_t h = image.dim(1), w = image.dim(2);
  Tensor out = image;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      std::uint8_t id = labels.at(r, c);
      if (id == kUnlabeled) continue;
      float cr, cg, cb;
      if (num_classes <= 2) {
        if (id != 1) continue;  // tint only the positive class
        cr = 0.0f;
        cg = 1.0f;
        cb = 0.0f;
      } else {
        const float* p = palette[id % 8];
        cr = p[0];
        cg = p[1];
        cb = p[2];
      }
      out.at(0, r, c) = 0.5f * out.at(0, r, c) + 0.5f * cr;
      out.at(1, r, c) = 0.5f * out.at(1, r, c) + 0.5f * cg;
      out.at(2, r, c) = 0.5f * out.at(2, r, c) + 0.5f * cb;
    }
  }
  return out;
}

}  // namespace patchnet
