#include <cmath>
#include <sstream>

#include "doctest.h"
#include "patchnet/errors.hpp"
#include "patchnet/rng.hpp"
#include "patchnet/tensor.hpp"
#include "support/oracles.hpp"

using namespace patchnet;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = rng.uniform_f(-1.0f, 1.0f);
  return t;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double denom = std::max({std::fabs((double)a[i]), std::fabs((double)b[i]),
                             1.0});
    worst = std::max(worst, std::fabs((double)a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("indexing round-trips and matches the flat layout") {
  Tensor t({2, 3, 4, 5});
  t.at(1, 2, 3, 4) = 42.0f;
  CHECK(t.at(1, 2, 3, 4) == 42.0f);
  CHECK(t[((1 * 3 + 2) * 4 + 3) * 5 + 4] == 42.0f);

  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    std::size_t n = rng.index(2), c = rng.index(3), y = rng.index(4),
                x = rng.index(5);
    float v = rng.uniform_f(-5.0f, 5.0f);
    t.at(n, c, y, x) = v;
    CHECK(t.at(n, c, y, x) == v);
  }
}

TEST_CASE("zero dimensions are rejected") {
  CHECK_THROWS_AS(Tensor({2, 0, 3}), Error);
  CHECK_THROWS_AS(Tensor(std::vector<std::size_t>{}), Error);
}

TEST_CASE("gemm identity") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor c({2, 2});
  gemm(eye, b, 1.0f, 0.0f, c);
  for (std::size_t i = 0; i < 4; ++i) CHECK(c[i] == b[i]);
}

TEST_CASE("gemm hand dot product") {
  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor b = Tensor::from({2, 1}, {3, 4});
  Tensor c({1, 1});
  gemm(a, b, 1.0f, 0.0f, c);
  CHECK(c[0] == doctest::Approx(11.0f));
}

TEST_CASE("gemm alpha/beta accumulate") {
  Tensor a = Tensor::from({1, 1}, {2});
  Tensor b = Tensor::from({1, 1}, {3});
  Tensor c = Tensor::from({1, 1}, {10});
  gemm(a, b, 2.0f, 0.5f, c);
  CHECK(c[0] == doctest::Approx(17.0f));
}

TEST_CASE("gemm matches the naive oracle on random shapes") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t m = 1 + rng.index(16), k = 1 + rng.index(16),
                n = 1 + rng.index(16);
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    Tensor c0 = random_tensor({m, n}, rng);
    float alpha = rng.uniform_f(-1.5f, 1.5f);
    float beta = rng.bernoulli(0.5) ? 0.0f : rng.uniform_f(-1.0f, 1.0f);

    Tensor expected = oracle::naive_gemm(a, b, alpha, beta, c0);
    Tensor actual = c0;
    gemm(a, b, alpha, beta, actual);
    CHECK(max_rel_diff(actual, expected) < 1e-5);
  }
}

TEST_CASE("gemm rejects mismatched shapes with both shapes in the message") {
  Tensor a({2, 3});
  Tensor b({4, 2});
  Tensor c({2, 2});
  try {
    gemm(a, b, 1.0f, 0.0f, c);
    FAIL("expected a dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dimension);
    std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 2]") != std::string::npos);
  }
}

TEST_CASE("im2col with a 1x1 kernel is a reshape") {
  Tensor in = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor cols = im2col(in, 1, 1, 1);
  REQUIRE(cols.shape() == std::vector<std::size_t>{1, 4});
  for (std::size_t i = 0; i < 4; ++i) CHECK(cols[i] == in[i]);
}

TEST_CASE("im2col with a full-size kernel yields one flattened column") {
  Rng rng(3);
  Tensor in = random_tensor({1, 1, 3, 3}, rng);
  Tensor cols = im2col(in, 3, 3, 1);
  REQUIRE(cols.shape() == std::vector<std::size_t>{9, 1});
  for (std::size_t i = 0; i < 9; ++i) CHECK(cols[i] == in[i]);
}

TEST_CASE("im2col column layout is channel-major then row-major") {
  // 1 sample, 2 channels, 3x3, kernel 2x2 -> rows (c*2+ky)*2+kx
  Rng rng(5);
  Tensor in = random_tensor({1, 2, 3, 3}, rng);
  Tensor cols = im2col(in, 2, 2, 1);
  REQUIRE(cols.shape() == std::vector<std::size_t>{8, 4});
  // column for output (oy, ox) = (1, 0) is index 2
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t ky = 0; ky < 2; ++ky)
      for (std::size_t kx = 0; kx < 2; ++kx)
        CHECK(cols.at((c * 2 + ky) * 2 + kx, 2) ==
              in.at(0, c, 1 + ky, 0 + kx));
}

TEST_CASE("im2col rejects kernels larger than the input") {
  Tensor in({1, 1, 2, 2});
  CHECK_THROWS_AS(im2col(in, 3, 3, 1), Error);
}

TEST_CASE("convolution via im2col+gemm equals the naive oracle") {
  Rng rng(13);
  Tensor in = random_tensor({2, 3, 8, 8}, rng);
  Tensor filters = random_tensor({4, 3, 3, 3}, rng);

  Tensor cols = im2col(in, 3, 3, 1);  // (27) x (2*36)
  Tensor w = filters.reshaped({4, 27});
  Tensor out_cols({4, cols.dim(1)});
  gemm(w, cols, 1.0f, 0.0f, out_cols);

  Tensor expected = oracle::naive_conv(in, filters, {});
  // column j = (n*OH + oy)*OW + ox
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t f = 0; f < 4; ++f)
      for (std::size_t oy = 0; oy < 6; ++oy)
        for (std::size_t ox = 0; ox < 6; ++ox) {
          float got = out_cols.at(f, (n * 6 + oy) * 6 + ox);
          float want = expected.at(n, f, oy, ox);
          CHECK(std::fabs(got - want) <=
                1e-5 * std::max(1.0f, std::fabs(want)));
        }
}

TEST_CASE("col2im with a 1x1 kernel inverts im2col") {
  Rng rng(17);
  Tensor in = random_tensor({2, 3, 4, 4}, rng);
  Tensor cols = im2col(in, 1, 1, 1);
  Tensor back = col2im(cols, 2, 3, 4, 4, 1, 1, 1);
  for (std::size_t i = 0; i < in.size(); ++i) CHECK(back[i] == in[i]);
}

TEST_CASE("col2im counts window coverage") {
  // 3x3 input, 2x2 kernel, stride 1, all-ones columns: the center pixel is
  // covered by all four windows
  Tensor cols = Tensor::full({4, 4}, 1.0f);
  Tensor img = col2im(cols, 1, 1, 3, 3, 2, 2, 1);
  CHECK(img.at(0, 0, 1, 1) == 4.0f);
  CHECK(img.at(0, 0, 0, 0) == 1.0f);
  CHECK(img.at(0, 0, 0, 1) == 2.0f);
}

TEST_CASE("im2col/col2im adjoint identity") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor cols = im2col(x, 3, 3, 1);
    Tensor y = random_tensor(cols.shape(), rng);
    // <im2col(x), y> == <x, col2im(y)>
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < cols.size(); ++i)
      lhs += static_cast<double>(cols[i]) * y[i];
    Tensor back = col2im(y, 1, 2, 5, 5, 3, 3, 1);
    for (std::size_t i = 0; i < x.size(); ++i)
      rhs += static_cast<double>(x[i]) * back[i];
    CHECK(std::fabs(lhs - rhs) < 1e-5 * std::max(1.0, std::fabs(lhs)));
  }
}

TEST_CASE("col2im rejects mismatched column matrices") {
  Tensor cols({4, 5});
  CHECK_THROWS_AS(col2im(cols, 1, 1, 3, 3, 2, 2, 1), Error);
}

TEST_CASE("tensor dump round-trips bit-exactly") {
  Rng rng(23);
  Tensor t = random_tensor({2, 3, 4}, rng);
  std::stringstream buffer;
  write_ptnt(buffer, t);
  Tensor back = read_ptnt(buffer);
  REQUIRE(back.same_shape(t));
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(back[i] == t[i]);
}

TEST_CASE("tensor dump rejects bad magic") {
  std::stringstream buffer;
  buffer << "NOPE garbage";
  CHECK_THROWS_AS(read_ptnt(buffer), Error);
  try {
    std::stringstream again("NOPE garbage");
    read_ptnt(again);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Format);
  }
}

}  // TEST_SUITE
