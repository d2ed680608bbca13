#include "patchnet/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "patchnet/errors.hpp"

namespace patchnet {

namespace {

struct GraphEdge {
  double weight;
  std::int32_t a, b;
  std::uint32_t index;  // tiebreak: construction order
};

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1), internal_(n, 0.0) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }

  std::int32_t find(std::int32_t x) {
    std::int32_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {
      std::int32_t next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  void merge(std::int32_t a, std::int32_t b, double weight) {
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    internal_[a] = weight;  // edges arrive in nondecreasing order
  }

  std::int64_t size(std::int32_t root) const { return size_[root]; }
  double internal(std::int32_t root) const { return internal_[root]; }

 private:
  std::vector<std::int32_t> parent_;
  std::vector<std::int64_t> size_;
  std::vector<double> internal_;
};

// Separable Gaussian smoothing in double precision, symmetric reflection at
// the borders. Radius is ceil(2.5 * sigma) with a minimum of 1.
std::vector<double> smooth(const Tensor& image, float sigma) {
  std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<double> out(3 * h * w);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = image[i];
  if (sigma <= 0.0f) return out;

  int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-(static_cast<double>(i) * i) /
                                  (2.0 * sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& kv : kernel) kv /= sum;

  auto fold = [](long i, long n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
  };

  std::vector<double> tmp(out.size());
  for (std::size_t c = 0; c < 3; ++c) {
    const double* src = out.data() + c * h * w;
    double* dst = tmp.data() + c * h * w;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] *
                 src[r * w + fold(static_cast<long>(x) + i,
                                  static_cast<long>(w))];
        dst[r * w + x] = acc;
      }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    const double* src = tmp.data() + c * h * w;
    double* dst = out.data() + c * h * w;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] *
                 src[fold(static_cast<long>(r) + i, static_cast<long>(h)) * w +
                     x];
        dst[r * w + x] = acc;
      }
  }
  return out;
}

}  // namespace

SegmentMap segment(const Tensor& image, const SegmentationParams& params) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw Error(ErrorKind::Dimension,
                "expected 3 x H x W image, got " +
                    shape_to_string(image.shape()));
  if (!(params.k > 0.0f) || params.sigma < 0.0f || params.min_size < 0)
    throw Error(ErrorKind::Parameter, "invalid segmentation parameters");
  std::size_t h = image.dim(1), w = image.dim(2);
  if (h == 0 || w == 0)
    throw Error(ErrorKind::Dimension, "empty image");

  std::vector<double> smoothed = smooth(image, params.sigma);
  const double* red = smoothed.data();
  const double* green = smoothed.data() + h * w;
  const double* blue = smoothed.data() + 2 * h * w;

  auto edge_weight = [&](std::size_t p, std::size_t q) {
    double dr = (red[p] - red[q]) * 255.0;
    double dg = (green[p] - green[q]) * 255.0;
    double db = (blue[p] - blue[q]) * 255.0;
    return std::sqrt(dr * dr + dg * dg + db * db);
  };

  std::vector<GraphEdge> edges;
  edges.reserve(4 * h * w);
  std::uint32_t index = 0;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      std::size_t p = r * w + c;
      if (c + 1 < w)
        edges.push_back({edge_weight(p, p + 1), static_cast<std::int32_t>(p),
                         static_cast<std::int32_t>(p + 1), index++});
      if (r + 1 < h)
        edges.push_back({edge_weight(p, p + w), static_cast<std::int32_t>(p),
                         static_cast<std::int32_t>(p + w), index++});
      if (r + 1 < h && c + 1 < w)
        edges.push_back({edge_weight(p, p + w + 1),
                         static_cast<std::int32_t>(p),
                         static_cast<std::int32_t>(p + w + 1), index++});
      if (r + 1 < h && c > 0)
        edges.push_back({edge_weight(p, p + w - 1),
                         static_cast<std::int32_t>(p),
                         static_cast<std::int32_t>(p + w - 1), index++});
    }
  }
  std::sort(edges.begin(), edges.end(),
            [](const GraphEdge& a, const GraphEdge& b) {
              return a.weight != b.weight ? a.weight < b.weight
                                          : a.index < b.index;
            });

  UnionFind uf(h * w);
  double k = params.k;
  for (const GraphEdge& e : edges) {
    std::int32_t a = uf.find(e.a);
    std::int32_t b = uf.find(e.b);
    if (a == b) continue;
    double ta = uf.internal(a) + k / static_cast<double>(uf.size(a));
    double tb = uf.internal(b) + k / static_cast<double>(uf.size(b));
    if (e.weight <= std::min(ta, tb)) uf.merge(a, b, e.weight);
  }

  if (params.min_size > 0) {
    for (const GraphEdge& e : edges) {
      std::int32_t a = uf.find(e.a);
      std::int32_t b = uf.find(e.b);
      if (a != b && (uf.size(a) < params.min_size ||
                     uf.size(b) < params.min_size))
        uf.merge(a, b, e.weight);
    }
  }

  SegmentMap seg;
  seg.height = h;
  seg.width = w;
  seg.ids.resize(h * w);
  std::vector<std::int32_t> remap(h * w, -1);
  std::int32_t next = 0;
  for (std::size_t p = 0; p < h * w; ++p) {
    std::int32_t root = uf.find(static_cast<std::int32_t>(p));
    if (remap[root] < 0) remap[root] = next++;
    seg.ids[p] = remap[root];
  }
  seg.count = next;
  return seg;
}

namespace {

LabelMap fuse_impl(const Tensor& prob, const SegmentMap& seg, bool majority) {
  if (prob.rank() != 3)
    throw Error(ErrorKind::Dimension,
                "expected K x H x W probabilities, got " +
                    shape_to_string(prob.shape()));
  std::size_t k = prob.dim(0), h = prob.dim(1), w = prob.dim(2);
  if (h != seg.height || w != seg.width)
    throw Error(ErrorKind::Dimension,
                "probability map and segmentation sizes disagree");

  std::vector<double> votes(static_cast<std::size_t>(seg.count) * k, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      std::int32_t s = seg.at(r, c);
      if (majority) {
        std::size_t best = 0;
        for (std::size_t cls = 1; cls < k; ++cls)
          if (prob.at(cls, r, c) > prob.at(best, r, c)) best = cls;
        votes[s * k + best] += 1.0;
      } else {
        for (std::size_t cls = 0; cls < k; ++cls)
          votes[s * k + cls] += prob.at(cls, r, c);
      }
    }
  }

  std::vector<std::uint8_t> winner(seg.count, 0);
  for (std::int32_t s = 0; s < seg.count; ++s) {
    std::size_t best = 0;
    for (std::size_t cls = 1; cls < k; ++cls)
      if (votes[s * k + cls] > votes[s * k + best]) best = cls;
    winner[s] = static_cast<std::uint8_t>(best);
  }

  LabelMap out(h, w);
  for (std::size_t p = 0; p < h * w; ++p) out.ids[p] = winner[seg.ids[p]];
  return out;
}

}  // namespace

LabelMap fuse_labels(const Tensor& prob, const SegmentMap& seg) {
  return fuse_impl(prob, seg, false);
}

LabelMap fuse_labels_majority(const Tensor& prob, const SegmentMap& seg) {
  return fuse_impl(prob, seg, true);
}

LabelMap segment_preview(const SegmentMap& seg) {
  LabelMap out(seg.height, seg.width);
  for (std::size_t p = 0; p < out.ids.size(); ++p)
    out.ids[p] = static_cast<std::uint8_t>(seg.ids[p] % 256);
  return out;
}

}  // namespace patchnet
