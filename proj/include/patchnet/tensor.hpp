#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace patchnet {

std::string shape_to_string(const std::vector<std::size_t>& shape);

// Dense row-major array of 32-bit reals. Image-shaped data is ordered
// samples x channels x height x width; flat data samples x features.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::initializer_list<std::size_t> shape);

  static Tensor from(std::vector<std::size_t> shape, std::vector<float> data);
  static Tensor full(std::vector<std::size_t> shape, float value);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float& at(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  float at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  float& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  // (n, c, y, x) -> ((n*C + c)*H + y)*W + x
  float& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  float at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Same buffer, new shape; element count must match.
  Tensor reshaped(std::vector<std::size_t> shape) const&;
  Tensor reshaped(std::vector<std::size_t> shape) &&;

  void fill(float value);

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

// C <- alpha * A * B + beta * C with A MxK, B KxN, C MxN. Accumulation runs
// k-ascending per output element, so results do not depend on the worker
// count.
void gemm(const Tensor& a, const Tensor& b, float alpha, float beta,
          Tensor& c);
Tensor matmul(const Tensor& a, const Tensor& b);

// Rearranges valid (unpadded) convolution windows into matrix columns.
// Input N x C x H x W, output (C*kh*kw) x (N*OH*OW); row (c*kh+ky)*kw+kx,
// column (n*OH+oy)*OW+ox.
Tensor im2col(const Tensor& input, int kh, int kw, int stride);

// Exact adjoint of im2col: scatter-adds columns back onto an N x C x H x W
// tensor.
Tensor col2im(const Tensor& cols, std::size_t n, std::size_t c, std::size_t h,
              std::size_t w, int kh, int kw, int stride);

namespace detail {

// Raw-pointer kernels shared by the public ops and the conv layer. ld is the
// row stride of the column matrix, col0 the first column to use.
void im2col_one(const float* img, std::size_t c, std::size_t h, std::size_t w,
                int kh, int kw, int stride, float* out, std::size_t out_ld,
                std::size_t col0);
void col2im_one(const float* cols, std::size_t c, std::size_t h, std::size_t w,
                int kh, int kw, int stride, std::size_t ld, std::size_t col0,
                float* img);

// C[i,j] (+)= alpha * sum_k A[i,k] * B[k,j]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, float alpha,
             const float* a, std::size_t lda, const float* b, std::size_t ldb,
             float beta, float* c, std::size_t ldc);
// C[i,j] (+)= alpha * sum_k A[i,k] * B[j,k]   (B is n x k)
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, float alpha,
             const float* a, std::size_t lda, const float* b, std::size_t ldb,
             float beta, float* c, std::size_t ldc);
// C[i,j] (+)= alpha * sum_k A[k,i] * B[k,j]   (A is k x m)
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, float alpha,
             const float* a, std::size_t lda, const float* b, std::size_t ldb,
             float beta, float* c, std::size_t ldc);

}  // namespace detail

// Tensor dump format for golden tests: magic "PTNT", u32 rank, u32 dims[],
// then little-endian 32-bit reals.
void write_ptnt(std::ostream& out, const Tensor& t);
Tensor read_ptnt(std::istream& in);
void save_ptnt(const std::string& path, const Tensor& t);
Tensor load_ptnt(const std::string& path);

}  // namespace patchnet
