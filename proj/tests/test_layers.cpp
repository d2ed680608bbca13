#include <cmath>

#include "doctest.h"
#include "patchnet/errors.hpp"
#include "patchnet/gradcheck.hpp"
#include "patchnet/layers.hpp"
#include "patchnet/rng.hpp"
#include "support/oracles.hpp"

using namespace patchnet;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, float lo = -1,
                     float hi = 1) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform_f(lo, hi);
  return t;
}

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("conv with a scalar filter scales and shifts") {
  ConvLayer conv(1, ConvSpec{1, 1, 1});
  conv.params()->weights[0] = 2.0f;
  conv.params()->bias[0] = 1.0f;
  Rng rng(1);
  Tensor in = random_tensor({1, 1, 3, 3}, rng);
  ForwardCtx ctx;
  Tensor out = conv.forward(in, ctx);
  REQUIRE(out.same_shape(in));
  for (std::size_t i = 0; i < in.size(); ++i)
    CHECK(out[i] == doctest::Approx(2.0f * in[i] + 1.0f));
}

TEST_CASE("conv shapes follow the road architecture first layer") {
  ConvLayer conv(3, ConvSpec{7, 7, 12});
  auto out = conv.output_shape({1, 3, 28, 28});
  CHECK(out == std::vector<std::size_t>{1, 12, 22, 22});
}

TEST_CASE("conv forward equals the naive direct convolution") {
  Rng rng(2);
  ConvLayer conv(3, ConvSpec{3, 3, 4});
  for (std::size_t i = 0; i < conv.params()->weights.size(); ++i)
    conv.params()->weights[i] = rng.uniform_f(-0.7f, 0.7f);
  for (std::size_t i = 0; i < conv.params()->bias.size(); ++i)
    conv.params()->bias[i] = rng.uniform_f(-0.3f, 0.3f);

  Tensor in = random_tensor({2, 3, 8, 8}, rng);
  ForwardCtx ctx;
  Tensor got = conv.infer(in, ctx);
  std::vector<float> bias(conv.params()->bias.data(),
                          conv.params()->bias.data() + 4);
  Tensor want = oracle::naive_conv(in, conv.params()->weights, bias);
  REQUIRE(got.same_shape(want));
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(std::fabs(got[i] - want[i]) <=
          1e-5 * std::max(1.0f, std::fabs(want[i])));
}

TEST_CASE("conv rejects channel mismatches") {
  ConvLayer conv(3, ConvSpec{3, 3, 4});
  CHECK_THROWS_AS(conv.output_shape({1, 2, 8, 8}), Error);
}

TEST_CASE("conv backward: zero upstream gradient gives all-zero gradients") {
  Rng rng(3);
  ConvLayer conv(2, ConvSpec{3, 3, 2});
  for (std::size_t i = 0; i < conv.params()->weights.size(); ++i)
    conv.params()->weights[i] = rng.uniform_f(-1.0f, 1.0f);
  Tensor in = random_tensor({1, 2, 5, 5}, rng);
  ForwardCtx ctx;
  Tensor out = conv.forward(in, ctx);
  conv.zero_grads();
  Tensor grad_in = conv.backward(Tensor(out.shape()));
  for (std::size_t i = 0; i < grad_in.size(); ++i) CHECK(grad_in[i] == 0.0f);
  for (std::size_t i = 0; i < conv.params()->weight_grad.size(); ++i)
    CHECK(conv.params()->weight_grad[i] == 0.0f);
  for (std::size_t i = 0; i < conv.params()->bias_grad.size(); ++i)
    CHECK(conv.params()->bias_grad[i] == 0.0f);
}

TEST_CASE("conv backward: 1x1 filter reduces to scaling") {
  ConvLayer conv(1, ConvSpec{1, 1, 1});
  conv.params()->weights[0] = 3.0f;
  Rng rng(4);
  Tensor in = random_tensor({1, 1, 4, 4}, rng);
  ForwardCtx ctx;
  conv.forward(in, ctx);
  conv.zero_grads();
  Tensor g = random_tensor({1, 1, 4, 4}, rng);
  Tensor grad_in = conv.backward(g);
  for (std::size_t i = 0; i < g.size(); ++i)
    CHECK(grad_in[i] == doctest::Approx(3.0f * g[i]));
}

TEST_CASE("maxpool worked example and road shape") {
  MaxPoolLayer pool(MaxPoolSpec{2, 2});
  Tensor in = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  ForwardCtx ctx;
  Tensor out = pool.forward(in, ctx);
  REQUIRE(out.size() == 1);
  CHECK(out[0] == 4.0f);
  CHECK(pool.output_shape({1, 12, 22, 22}) ==
        std::vector<std::size_t>{1, 12, 11, 11});
}

TEST_CASE("maxpool rejects non-divisible spatial dims naming the layer") {
  MaxPoolLayer pool(MaxPoolSpec{2, 2});
  try {
    pool.output_shape({1, 12, 11, 11});
    FAIL("expected a dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dimension);
    CHECK(std::string(e.what()).find("maxpool 2x2") != std::string::npos);
  }
}

TEST_CASE("maxpool ties pick the first element in row-major order") {
  MaxPoolLayer pool(MaxPoolSpec{2, 2});
  Tensor in = Tensor::full({1, 1, 2, 2}, 5.0f);
  ForwardCtx ctx;
  pool.forward(in, ctx);
  REQUIRE(pool.argmax().size() == 1);
  CHECK(pool.argmax()[0] == 0);
}

TEST_CASE("maxpool backward deposits exactly one value per window") {
  Rng rng(5);
  MaxPoolLayer pool(MaxPoolSpec{2, 2});
  Tensor in = random_tensor({2, 3, 6, 6}, rng);
  ForwardCtx ctx;
  Tensor out = pool.forward(in, ctx);
  Tensor g = random_tensor(out.shape(), rng, 0.5f, 1.0f);
  Tensor grad_in = pool.backward(g);
  // every 2x2 window holds exactly one nonzero, at the recorded argmax
  for (std::size_t plane = 0; plane < 6; ++plane) {
    for (std::size_t oy = 0; oy < 3; ++oy)
      for (std::size_t ox = 0; ox < 3; ++ox) {
        int nonzero = 0;
        for (std::size_t ky = 0; ky < 2; ++ky)
          for (std::size_t kx = 0; kx < 2; ++kx) {
            float v = grad_in[plane * 36 + (oy * 2 + ky) * 6 + ox * 2 + kx];
            if (v != 0.0f) ++nonzero;
          }
        CHECK(nonzero == 1);
      }
  }
}

TEST_CASE("activation values") {
  ForwardCtx ctx;
  ActivationLayer tanh_l{ActivationSpec{Activation::Tanh}};
  ActivationLayer relu_l{ActivationSpec{Activation::Relu}};
  ActivationLayer sig_l{ActivationSpec{Activation::Sigmoid}};
  Tensor zero = Tensor::from({1, 1}, {0.0f});
  CHECK(tanh_l.infer(zero, ctx)[0] == 0.0f);
  CHECK(sig_l.infer(zero, ctx)[0] == 0.5f);
  Tensor in = Tensor::from({1, 2}, {-2.0f, 3.0f});
  Tensor r = relu_l.infer(in, ctx);
  CHECK(r[0] == 0.0f);
  CHECK(r[1] == 3.0f);
  CHECK(relu_l.infer(Tensor::from({1, 1}, {-1.0f}), ctx)[0] == 0.0f);
}

TEST_CASE("fc with identity weights is the identity") {
  FullyConnectedLayer fc(3, FullyConnectedSpec{3, 0});
  for (int i = 0; i < 3; ++i) fc.params()->weights.at(i, i) = 1.0f;
  Rng rng(6);
  Tensor in = random_tensor({2, 3}, rng);
  ForwardCtx ctx;
  Tensor out = fc.infer(in, ctx);
  for (std::size_t i = 0; i < in.size(); ++i)
    CHECK(out[i] == doctest::Approx(in[i]));
}

TEST_CASE("fc aux hand example") {
  // D=1, A=2, input [1], aux [0.5, 0.25], W = [[1,1,1]], b=0 -> 1.75
  FullyConnectedLayer fc(1, FullyConnectedSpec{1, 2});
  fc.params()->weights.fill(1.0f);
  Tensor in = Tensor::from({1, 1}, {1.0f});
  Tensor aux = Tensor::from({1, 2}, {0.5f, 0.25f});
  ForwardCtx ctx;
  ctx.aux = &aux;
  Tensor out = fc.infer(in, ctx);
  CHECK(out[0] == doctest::Approx(1.75f));
}

TEST_CASE("fc road layer 8 weight matrix is 192 x 50") {
  FullyConnectedLayer fc(48, FullyConnectedSpec{192, 2});
  CHECK(fc.params()->weights.shape() == std::vector<std::size_t>{192, 50});
}

TEST_CASE("fc with aux equals an ordinary fc on the concatenated vector") {
  Rng rng(7);
  FullyConnectedLayer with_aux(5, FullyConnectedSpec{4, 2});
  FullyConnectedLayer plain(7, FullyConnectedSpec{4, 0});
  for (std::size_t i = 0; i < with_aux.params()->weights.size(); ++i) {
    float w = rng.uniform_f(-1.0f, 1.0f);
    with_aux.params()->weights[i] = w;
    plain.params()->weights[i] = w;
  }
  for (int i = 0; i < 4; ++i) {
    float b = rng.uniform_f(-0.5f, 0.5f);
    with_aux.params()->bias[i] = b;
    plain.params()->bias[i] = b;
  }
  Tensor in = random_tensor({3, 5}, rng);
  Tensor aux = random_tensor({3, 2}, rng, 0.0f, 1.0f);
  Tensor concat({3, 7});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) concat.at(i, j) = in.at(i, j);
    for (std::size_t j = 0; j < 2; ++j) concat.at(i, 5 + j) = aux.at(i, j);
  }
  ForwardCtx aux_ctx;
  aux_ctx.aux = &aux;
  ForwardCtx plain_ctx;
  Tensor a = with_aux.infer(in, aux_ctx);
  Tensor b = plain.infer(concat, plain_ctx);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("fc missing or mis-sized aux raises an auxiliary-input error") {
  FullyConnectedLayer fc(3, FullyConnectedSpec{2, 2});
  Tensor in({1, 3});
  ForwardCtx no_aux;
  CHECK_THROWS_AS(fc.infer(in, no_aux), Error);
  try {
    fc.infer(in, no_aux);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::AuxInput);
  }
  Tensor bad = Tensor({1, 3});
  ForwardCtx bad_ctx;
  bad_ctx.aux = &bad;
  CHECK_THROWS_AS(fc.infer(in, bad_ctx), Error);
}

TEST_CASE("dropout identity cases") {
  Rng rng(8);
  Tensor in = random_tensor({2, 10}, rng);
  DropoutLayer zero_rate(DropoutSpec{0.0f});
  ForwardCtx train_ctx;
  train_ctx.rng = &rng;
  Tensor out = zero_rate.forward(in, train_ctx);
  for (std::size_t i = 0; i < in.size(); ++i) CHECK(out[i] == in[i]);

  DropoutLayer half(DropoutSpec{0.5f});
  ForwardCtx infer_ctx;
  Tensor inf = half.infer(in, infer_ctx);
  for (std::size_t i = 0; i < in.size(); ++i) CHECK(inf[i] == in[i]);
}

TEST_CASE("dropout empirical zero fraction approximates the rate") {
  Rng rng(9);
  DropoutLayer half(DropoutSpec{0.5f});
  Tensor in = Tensor::full({1, 100000}, 1.0f);
  ForwardCtx ctx;
  ctx.rng = &rng;
  Tensor out = half.forward(in, ctx);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] == 0.0f) ++zeros;
  double fraction = static_cast<double>(zeros) / out.size();
  CHECK(fraction == doctest::Approx(0.5).epsilon(0.02));
  // survivors are scaled by 1/(1-rate)
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] != 0.0f) CHECK(out[i] == 2.0f);
}

TEST_CASE("loss worked examples") {
  Tensor p = Tensor::from({1, 1}, {1.0f});
  Tensor t = Tensor::from({1, 1}, {0.0f});
  auto [loss, grad] = weighted_quadratic_loss(p, t, {1.0f});
  CHECK(loss == doctest::Approx(1.0));
  CHECK(grad[0] == doctest::Approx(2.0f));

  auto [zero_loss, zero_grad] = weighted_quadratic_loss(t, t, {1.0f});
  CHECK(zero_loss == 0.0);
  CHECK(zero_grad[0] == 0.0f);
}

TEST_CASE("loss is invariant to scaling all weights") {
  Rng rng(10);
  Tensor p = random_tensor({4, 3}, rng);
  Tensor t = random_tensor({4, 3}, rng);
  std::vector<float> w = {1.0f, 0.5f, 2.0f, 0.25f};
  std::vector<float> w2 = w;
  for (float& v : w2) v *= 8.0f;
  auto [l1, g1] = weighted_quadratic_loss(p, t, w);
  auto [l2, g2] = weighted_quadratic_loss(p, t, w2);
  CHECK(std::fabs(l1 - l2) < 1e-6 * std::max(1.0, std::fabs(l1)));
  for (std::size_t i = 0; i < g1.size(); ++i)
    CHECK(std::fabs(g1[i] - g2[i]) < 1e-6);
}

TEST_CASE("loss rejects bad weights") {
  Tensor p({2, 1});
  Tensor t({2, 1});
  CHECK_THROWS_AS(weighted_quadratic_loss(p, t, {1.0f, -0.5f}), Error);
  CHECK_THROWS_AS(weighted_quadratic_loss(p, t, {0.0f, 0.0f}), Error);
  try {
    weighted_quadratic_loss(p, t, {0.0f, 0.0f});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Weight);
  }
}

TEST_CASE("every layer passes the finite-difference suite over 20 seeds") {
  for (int seed = 0; seed < 20; ++seed) {
    auto results = gradcheck::check_layers(4000 + seed, 1e-3);
    for (const auto& r : results) {
      INFO(r.name, " seed ", seed, " rel_err ", r.rel_err);
      CHECK(r.pass);
    }
  }
}

}  // TEST_SUITE
