#include "patchnet/tensor.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "patchnet/errors.hpp"
#include "patchnet/threading.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor dumps assume a little-endian host");

namespace patchnet {

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

std::size_t checked_size(const std::vector<std::size_t>& shape) {
  if (shape.empty())
    throw Error(ErrorKind::Dimension, "tensor rank must be >= 1");
  std::size_t total = 1;
  for (std::size_t d : shape) {
    if (d == 0)
      throw Error(ErrorKind::Dimension,
                  "all dimension sizes must be >= 1, got " +
                      shape_to_string(shape));
    total *= d;
  }
  return total;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(checked_size(shape_), 0.0f) {}

Tensor::Tensor(std::initializer_list<std::size_t> shape)
    : Tensor(std::vector<std::size_t>(shape)) {}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<float> data) {
  if (checked_size(shape) != data.size())
    throw Error(ErrorKind::Dimension,
                "data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_to_string(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, float value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) && {
  if (checked_size(shape) != data_.size())
    throw Error(ErrorKind::Dimension,
                "cannot reshape " + shape_to_string(shape_) + " to " +
                    shape_to_string(shape));
  shape_ = std::move(shape);
  return std::move(*this);
}

void Tensor::fill(float value) {
  std::fill(data_.begin(), data_.end(), value);
}

namespace detail {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, float alpha,
             const float* a, std::size_t lda, const float* b, std::size_t ldb,
             float beta, float* c, std::size_t ldc) {
  parallel_for(m, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      float* crow = c + i * ldc;
      if (beta == 0.0f) {
        std::memset(crow, 0, n * sizeof(float));
      } else if (beta != 1.0f) {
        for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
      }
      const float* arow = a + i * lda;
      for (std::size_t kk = 0; kk < k; ++kk) {
        float av = alpha * arow[kk];
        if (av == 0.0f) continue;
        const float* brow = b + kk * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

// Dot products with eight fixed lanes; the reduction tree is the same for
// every call, which keeps results reproducible.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, float alpha,
             const float* a, std::size_t lda, const float* b, std::size_t ldb,
             float beta, float* c, std::size_t ldc) {
  parallel_for(m, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const float* arow = a + i * lda;
      float* crow = c + i * ldc;
      for (std::size_t j = 0; j < n; ++j) {
        const float* brow = b + j * ldb;
        float s[8] = {0, 0, 0, 0, 0, 0, 0, 0};
        std::size_t kk = 0;
        for (; kk + 8 <= k; kk += 8) {
          s[0] += arow[kk + 0] * brow[kk + 0];
          s[1] += arow[kk + 1] * brow[kk + 1];
          s[2] += arow[kk + 2] * brow[kk + 2];
          s[3] += arow[kk + 3] * brow[kk + 3];
          s[4] += arow[kk + 4] * brow[kk + 4];
          s[5] += arow[kk + 5] * brow[kk + 5];
          s[6] += arow[kk + 6] * brow[kk + 6];
          s[7] += arow[kk + 7] * brow[kk + 7];
        }
        float tail = 0.0f;
        for (; kk < k; ++kk) tail += arow[kk] * brow[kk];
        float dot = ((s[0] + s[1]) + (s[2] + s[3])) +
                    ((s[4] + s[5]) + (s[6] + s[7])) + tail;
        crow[j] = (beta == 0.0f ? 0.0f : beta * crow[j]) + alpha * dot;
      }
    }
  });
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, float alpha,
             const float* a, std::size_t lda, const float* b, std::size_t ldb,
             float beta, float* c, std::size_t ldc) {
  parallel_for(m, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      float* crow = c + i * ldc;
      if (beta == 0.0f) {
        std::memset(crow, 0, n * sizeof(float));
      } else if (beta != 1.0f) {
        for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
      }
      for (std::size_t kk = 0; kk < k; ++kk) {
        float av = alpha * a[kk * lda + i];
        if (av == 0.0f) continue;
        const float* brow = b + kk * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

void im2col_one(const float* img, std::size_t c, std::size_t h, std::size_t w,
                int kh, int kw, int stride, float* out, std::size_t out_ld,
                std::size_t col0) {
  std::size_t oh = (h - static_cast<std::size_t>(kh)) / stride + 1;
  std::size_t ow = (w - static_cast<std::size_t>(kw)) / stride + 1;
  std::size_t row = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* plane = img + ch * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        float* dst = out + row * out_ld + col0;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const float* src = plane + (oy * stride + ky) * w + kx;
          if (stride == 1) {
            std::memcpy(dst, src, ow * sizeof(float));
            dst += ow;
          } else {
            for (std::size_t ox = 0; ox < ow; ++ox)
              *dst++ = src[ox * stride];
          }
        }
      }
    }
  }
}

void col2im_one(const float* cols, std::size_t c, std::size_t h, std::size_t w,
                int kh, int kw, int stride, std::size_t ld, std::size_t col0,
                float* img) {
  std::size_t oh = (h - static_cast<std::size_t>(kh)) / stride + 1;
  std::size_t ow = (w - static_cast<std::size_t>(kw)) / stride + 1;
  std::size_t row = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    float* plane = img + ch * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        const float* src = cols + row * ld + col0;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          float* dst = plane + (oy * stride + ky) * w + kx;
          for (std::size_t ox = 0; ox < ow; ++ox)
            dst[ox * stride] += *src++;
        }
      }
    }
  }
}

}  // namespace detail

void gemm(const Tensor& a, const Tensor& b, float alpha, float beta,
          Tensor& c) {
  if (a.rank() != 2 || b.rank() != 2 || c.rank() != 2)
    throw Error(ErrorKind::Dimension, "gemm expects rank-2 tensors");
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw Error(ErrorKind::Dimension,
                "gemm inner dimensions disagree: A " +
                    shape_to_string(a.shape()) + " vs B " +
                    shape_to_string(b.shape()));
  if (c.dim(0) != m || c.dim(1) != n)
    throw Error(ErrorKind::Dimension,
                "gemm output shape " + shape_to_string(c.shape()) +
                    " does not match " + shape_to_string({m, n}));
  detail::gemm_nn(m, n, k, alpha, a.data(), k, b.data(), n, beta, c.data(), n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw Error(ErrorKind::Dimension, "matmul expects rank-2 tensors");
  Tensor c({a.dim(0), b.dim(1)});
  gemm(a, b, 1.0f, 0.0f, c);
  return c;
}

Tensor im2col(const Tensor& input, int kh, int kw, int stride) {
  if (input.rank() != 4)
    throw Error(ErrorKind::Dimension,
                "im2col expects N x C x H x W input, got " +
                    shape_to_string(input.shape()));
  if (kh < 1 || kw < 1 || stride < 1)
    throw Error(ErrorKind::Parameter, "kernel and stride must be >= 1");
  std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
              w = input.dim(3);
  if (static_cast<std::size_t>(kh) > h || static_cast<std::size_t>(kw) > w)
    throw Error(ErrorKind::Dimension,
                "kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                    " larger than input " + shape_to_string(input.shape()));
  std::size_t oh = (h - kh) / stride + 1;
  std::size_t ow = (w - kw) / stride + 1;
  std::size_t cols = n * oh * ow;
  Tensor out({c * kh * kw, cols});
  for (std::size_t i = 0; i < n; ++i)
    detail::im2col_one(input.data() + i * c * h * w, c, h, w, kh, kw, stride,
                       out.data(), cols, i * oh * ow);
  return out;
}

Tensor col2im(const Tensor& cols, std::size_t n, std::size_t c, std::size_t h,
              std::size_t w, int kh, int kw, int stride) {
  if (cols.rank() != 2)
    throw Error(ErrorKind::Dimension, "col2im expects a rank-2 column matrix");
  if (static_cast<std::size_t>(kh) > h || static_cast<std::size_t>(kw) > w)
    throw Error(ErrorKind::Dimension, "kernel larger than target image");
  std::size_t oh = (h - kh) / stride + 1;
  std::size_t ow = (w - kw) / stride + 1;
  if (cols.dim(0) != c * kh * kw || cols.dim(1) != n * oh * ow)
    throw Error(ErrorKind::Dimension,
                "column matrix " + shape_to_string(cols.shape()) +
                    " does not match target " +
                    shape_to_string({n, c, h, w}) + " with kernel " +
                    std::to_string(kh) + "x" + std::to_string(kw));
  Tensor out({n, c, h, w});
  for (std::size_t i = 0; i < n; ++i)
    detail::col2im_one(cols.data(), c, h, w, kh, kw, stride, cols.dim(1),
                       i * oh * ow, out.data() + i * c * h * w);
  return out;
}

namespace {

constexpr char kTensorMagic[4] = {'P', 'T', 'N', 'T'};

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw Error(ErrorKind::Format, "truncated tensor block");
  return v;
}

}  // namespace

void write_ptnt(std::ostream& out, const Tensor& t) {
  out.write(kTensorMagic, 4);
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape())
    write_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!out) throw Error(ErrorKind::Io, "failed to write tensor block");
}

Tensor read_ptnt(std::istream& in) {
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kTensorMagic, 4) != 0)
    throw Error(ErrorKind::Format, "bad tensor magic, expected PTNT");
  std::uint32_t rank = read_u32(in);
  if (rank == 0 || rank > 8)
    throw Error(ErrorKind::Format, "unreasonable tensor rank " +
                                       std::to_string(rank));
  std::vector<std::size_t> shape(rank);
  std::size_t total = 1;
  for (auto& d : shape) {
    d = read_u32(in);
    if (d == 0) throw Error(ErrorKind::Format, "zero dimension in tensor");
    total *= d;
  }
  std::vector<float> data(total);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(total * sizeof(float)));
  if (!in) throw Error(ErrorKind::Format, "truncated tensor data");
  return Tensor::from(std::move(shape), std::move(data));
}

void save_ptnt(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path + " for write");
  write_ptnt(out, t);
}

Tensor load_ptnt(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  return read_ptnt(in);
}

}  // namespace patchnet
