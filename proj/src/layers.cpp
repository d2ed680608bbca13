#include "patchnet/layers.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "patchnet/errors.hpp"
#include "patchnet/threading.hpp"

namespace patchnet {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw Error(ErrorKind::Parameter, "unknown activation '" + name + "'");
}

std::string layer_spec_name(const LayerSpec& spec) {
  struct Visitor {
    std::string operator()(const ConvSpec& s) const {
      std::ostringstream os;
      os << "conv " << s.kh << "x" << s.kw << "x" << s.out_channels;
      return os.str();
    }
    std::string operator()(const MaxPoolSpec& s) const {
      std::ostringstream os;
      os << "maxpool " << s.ph << "x" << s.pw;
      return os.str();
    }
    std::string operator()(const ActivationSpec& s) const {
      return activation_name(s.fn);
    }
    std::string operator()(const FullyConnectedSpec& s) const {
      std::ostringstream os;
      os << "fc " << s.out;
      if (s.aux_inputs > 0) os << " (+" << s.aux_inputs << " aux)";
      return os.str();
    }
    std::string operator()(const DropoutSpec& s) const {
      std::ostringstream os;
      os << "dropout " << s.rate;
      return os.str();
    }
  };
  return std::visit(Visitor{}, spec);
}

void Layer::zero_grads() {
  if (LayerParams* p = params()) {
    p->weight_grad.fill(0.0f);
    p->bias_grad.fill(0.0f);
  }
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, stride 1, no padding) via im2col + GEMM.

ConvLayer::ConvLayer(int in_channels, const ConvSpec& spec)
    : in_channels_(in_channels), spec_(spec) {
  if (spec.kh < 1 || spec.kw < 1 || spec.out_channels < 1 || in_channels < 1)
    throw Error(ErrorKind::Parameter,
                "conv parameters must be >= 1: " + layer_spec_name(spec));
  std::size_t f = spec.out_channels, c = in_channels;
  std::size_t kh = spec.kh, kw = spec.kw;
  params_.weights = Tensor({f, c, kh, kw});
  params_.bias = Tensor({f});
  params_.weight_grad = Tensor({f, c, kh, kw});
  params_.bias_grad = Tensor({f});
}

std::vector<std::size_t> ConvLayer::output_shape(
    const std::vector<std::size_t>& in) const {
  if (in.size() != 4)
    throw Error(ErrorKind::Dimension,
                describe() + ": expects N x C x H x W input, got " +
                    shape_to_string(in));
  if (in[1] != static_cast<std::size_t>(in_channels_))
    throw Error(ErrorKind::Dimension,
                describe() + ": input has " + std::to_string(in[1]) +
                    " channels, filters expect " +
                    std::to_string(in_channels_));
  if (in[2] < static_cast<std::size_t>(spec_.kh) ||
      in[3] < static_cast<std::size_t>(spec_.kw))
    throw Error(ErrorKind::Dimension,
                describe() + ": kernel larger than input " +
                    shape_to_string(in));
  return {in[0], static_cast<std::size_t>(spec_.out_channels),
          in[2] - spec_.kh + 1, in[3] - spec_.kw + 1};
}

Tensor ConvLayer::run(const Tensor& input, Tensor* cache_cols) const {
  auto out_shape = output_shape(input.shape());
  std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
              w = input.dim(3);
  std::size_t f = out_shape[1], oh = out_shape[2], ow = out_shape[3];
  std::size_t p = oh * ow;
  std::size_t ckk = c * spec_.kh * spec_.kw;

  Tensor cols({ckk, n * p});
  parallel_for(n, [&](std::size_t n0, std::size_t n1) {
    for (std::size_t i = n0; i < n1; ++i)
      detail::im2col_one(input.data() + i * c * h * w, c, h, w, spec_.kh,
                         spec_.kw, 1, cols.data(), n * p, i * p);
  });

  Tensor out(out_shape);
  const float* wts = params_.weights.data();
  const float* bias = params_.bias.data();
  parallel_for(n, [&](std::size_t n0, std::size_t n1) {
    for (std::size_t i = n0; i < n1; ++i) {
      float* dst = out.data() + i * f * p;
      detail::gemm_nn(f, p, ckk, 1.0f, wts, ckk, cols.data() + i * p, n * p,
                      0.0f, dst, p);
      for (std::size_t ff = 0; ff < f; ++ff) {
        float b = bias[ff];
        float* row = dst + ff * p;
        for (std::size_t j = 0; j < p; ++j) row[j] += b;
      }
    }
  });
  if (cache_cols) *cache_cols = std::move(cols);
  return out;
}

Tensor ConvLayer::forward(const Tensor& input, const ForwardCtx&) {
  cached_in_shape_ = input.shape();
  return run(input, &cached_cols_);
}

Tensor ConvLayer::infer(const Tensor& input, const ForwardCtx&) const {
  return run(input, nullptr);
}

Tensor ConvLayer::backward(const Tensor& grad_out) {
  if (cached_in_shape_.empty())
    throw Error(ErrorKind::Parameter, describe() + ": backward before forward");
  std::size_t n = cached_in_shape_[0], c = cached_in_shape_[1],
              h = cached_in_shape_[2], w = cached_in_shape_[3];
  std::size_t f = spec_.out_channels;
  std::size_t oh = h - spec_.kh + 1, ow = w - spec_.kw + 1;
  std::size_t p = oh * ow;
  std::size_t ckk = c * spec_.kh * spec_.kw;

  // Per-sample partials, reduced in sample order afterwards so the result is
  // identical no matter how many workers ran.
  Tensor w_part({n, f * ckk});
  Tensor b_part({n, f});
  Tensor dcols({ckk, n * p});
  Tensor grad_in({n, c, h, w});
  const float* wts = params_.weights.data();

  parallel_for(n, [&](std::size_t n0, std::size_t n1) {
    for (std::size_t i = n0; i < n1; ++i) {
      const float* dy = grad_out.data() + i * f * p;
      detail::gemm_nt(f, ckk, p, 1.0f, dy, p, cached_cols_.data() + i * p,
                      n * p, 0.0f, w_part.data() + i * f * ckk, ckk);
      float* bp = b_part.data() + i * f;
      for (std::size_t ff = 0; ff < f; ++ff) {
        float s0 = 0, s1 = 0, s2 = 0, s3 = 0;
        const float* row = dy + ff * p;
        std::size_t j = 0;
        for (; j + 4 <= p; j += 4) {
          s0 += row[j];
          s1 += row[j + 1];
          s2 += row[j + 2];
          s3 += row[j + 3];
        }
        float tail = 0;
        for (; j < p; ++j) tail += row[j];
        bp[ff] = (s0 + s1) + (s2 + s3) + tail;
      }
      detail::gemm_tn(ckk, p, f, 1.0f, wts, ckk, dy, p, 0.0f,
                      dcols.data() + i * p, n * p);
      detail::col2im_one(dcols.data(), c, h, w, spec_.kh, spec_.kw, 1, n * p,
                         i * p, grad_in.data() + i * c * h * w);
    }
  });

  float* wg = params_.weight_grad.data();
  float* bg = params_.bias_grad.data();
  for (std::size_t i = 0; i < n; ++i) {
    const float* wp = w_part.data() + i * f * ckk;
    for (std::size_t j = 0; j < f * ckk; ++j) wg[j] += wp[j];
    const float* bp = b_part.data() + i * f;
    for (std::size_t ff = 0; ff < f; ++ff) bg[ff] += bp[ff];
  }
  return grad_in;
}

std::string ConvLayer::describe() const { return layer_spec_name(spec_); }

// ---------------------------------------------------------------------------
// Max pooling over non-overlapping windows.

std::vector<std::size_t> MaxPoolLayer::output_shape(
    const std::vector<std::size_t>& in) const {
  if (in.size() != 4)
    throw Error(ErrorKind::Dimension,
                describe() + ": expects N x C x H x W input, got " +
                    shape_to_string(in));
  std::size_t ph = spec_.ph, pw = spec_.pw;
  if (in[2] % ph != 0 || in[3] % pw != 0)
    throw Error(ErrorKind::Dimension,
                describe() + ": spatial dims " + std::to_string(in[2]) + "x" +
                    std::to_string(in[3]) + " not divisible by window");
  return {in[0], in[1], in[2] / ph, in[3] / pw};
}

Tensor MaxPoolLayer::run(const Tensor& input,
                         std::vector<std::uint32_t>* argmax) const {
  auto out_shape = output_shape(input.shape());
  std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
              w = input.dim(3);
  std::size_t oh = out_shape[2], ow = out_shape[3];
  std::size_t ph = spec_.ph, pw = spec_.pw;
  Tensor out(out_shape);
  if (argmax) argmax->assign(out.size(), 0);

  std::size_t planes = n * c;
  parallel_for(planes, [&](std::size_t p0, std::size_t p1) {
    for (std::size_t plane = p0; plane < p1; ++plane) {
      const float* src = input.data() + plane * h * w;
      float* dst = out.data() + plane * oh * ow;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::size_t base = oy * ph * w + ox * pw;
          float best = src[base];
          std::size_t best_at = base;
          for (std::size_t ky = 0; ky < ph; ++ky) {
            for (std::size_t kx = 0; kx < pw; ++kx) {
              std::size_t at = base + ky * w + kx;
              if (src[at] > best) {
                best = src[at];
                best_at = at;
              }
            }
          }
          dst[oy * ow + ox] = best;
          if (argmax)
            (*argmax)[plane * oh * ow + oy * ow + ox] =
                static_cast<std::uint32_t>(plane * h * w + best_at);
        }
      }
    }
  });
  return out;
}

Tensor MaxPoolLayer::forward(const Tensor& input, const ForwardCtx&) {
  cached_in_shape_ = input.shape();
  return run(input, &argmax_);
}

Tensor MaxPoolLayer::infer(const Tensor& input, const ForwardCtx&) const {
  return run(input, nullptr);
}

Tensor MaxPoolLayer::backward(const Tensor& grad_out) {
  if (cached_in_shape_.empty())
    throw Error(ErrorKind::Parameter, describe() + ": backward before forward");
  Tensor grad_in(cached_in_shape_);
  const float* g = grad_out.data();
  float* out = grad_in.data();
  for (std::size_t i = 0; i < argmax_.size(); ++i) out[argmax_[i]] += g[i];
  return grad_in;
}

std::string MaxPoolLayer::describe() const { return layer_spec_name(spec_); }

// ---------------------------------------------------------------------------
// Elementwise activations.

namespace {

inline float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

}  // namespace

std::vector<std::size_t> ActivationLayer::output_shape(
    const std::vector<std::size_t>& in) const {
  return in;
}

Tensor ActivationLayer::infer(const Tensor& input, const ForwardCtx&) const {
  Tensor out(input.shape());
  const float* src = input.data();
  float* dst = out.data();
  std::size_t total = input.size();
  switch (spec_.fn) {
    case Activation::Tanh:
      for (std::size_t i = 0; i < total; ++i) dst[i] = std::tanh(src[i]);
      break;
    case Activation::Relu:
      for (std::size_t i = 0; i < total; ++i)
        dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < total; ++i) dst[i] = sigmoid(src[i]);
      break;
  }
  return out;
}

Tensor ActivationLayer::forward(const Tensor& input, const ForwardCtx& ctx) {
  cached_output_ = infer(input, ctx);
  return cached_output_;
}

Tensor ActivationLayer::backward(const Tensor& grad_out) {
  if (cached_output_.empty())
    throw Error(ErrorKind::Parameter, describe() + ": backward before forward");
  Tensor grad_in(grad_out.shape());
  const float* g = grad_out.data();
  const float* y = cached_output_.data();
  float* dst = grad_in.data();
  std::size_t total = grad_out.size();
  switch (spec_.fn) {
    case Activation::Tanh:
      for (std::size_t i = 0; i < total; ++i)
        dst[i] = g[i] * (1.0f - y[i] * y[i]);
      break;
    case Activation::Relu:
      // derivative at exactly 0 is 0
      for (std::size_t i = 0; i < total; ++i)
        dst[i] = y[i] > 0.0f ? g[i] : 0.0f;
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < total; ++i)
        dst[i] = g[i] * y[i] * (1.0f - y[i]);
      break;
  }
  return grad_in;
}

std::string ActivationLayer::describe() const {
  return layer_spec_name(spec_);
}

// ---------------------------------------------------------------------------
// Fully connected with optional auxiliary input.

namespace {

std::size_t flat_features(const std::vector<std::size_t>& shape) {
  std::size_t d = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) d *= shape[i];
  return d;
}

}  // namespace

FullyConnectedLayer::FullyConnectedLayer(int in_features,
                                         const FullyConnectedSpec& spec)
    : in_features_(in_features), spec_(spec) {
  if (spec.out < 1 || spec.aux_inputs < 0 || in_features < 1)
    throw Error(ErrorKind::Parameter,
                "fc parameters out of range: " + layer_spec_name(spec));
  std::size_t o = spec.out;
  std::size_t d = static_cast<std::size_t>(in_features) + spec.aux_inputs;
  params_.weights = Tensor({o, d});
  params_.bias = Tensor({o});
  params_.weight_grad = Tensor({o, d});
  params_.bias_grad = Tensor({o});
}

std::vector<std::size_t> FullyConnectedLayer::output_shape(
    const std::vector<std::size_t>& in) const {
  if (in.size() != 2 && in.size() != 4)
    throw Error(ErrorKind::Dimension,
                describe() + ": expects flat or image input, got " +
                    shape_to_string(in));
  if (flat_features(in) != static_cast<std::size_t>(in_features_))
    throw Error(ErrorKind::Dimension,
                describe() + ": input width " +
                    std::to_string(flat_features(in)) + " does not match " +
                    std::to_string(in_features_));
  return {in[0], static_cast<std::size_t>(spec_.out)};
}

Tensor FullyConnectedLayer::assemble(const Tensor& input,
                                     const ForwardCtx& ctx) const {
  output_shape(input.shape());  // validates the visual width
  std::size_t n = input.dim(0);
  std::size_t d = in_features_;
  std::size_t a = spec_.aux_inputs;
  if (a > 0) {
    if (ctx.aux == nullptr)
      throw Error(ErrorKind::AuxInput,
                  describe() + ": auxiliary input required but missing");
    if (ctx.aux->rank() != 2 || ctx.aux->dim(0) != n || ctx.aux->dim(1) != a)
      throw Error(ErrorKind::AuxInput,
                  describe() + ": auxiliary input shape " +
                      shape_to_string(ctx.aux->shape()) + ", expected " +
                      shape_to_string({n, a}));
  } else if (ctx.aux != nullptr) {
    throw Error(ErrorKind::AuxInput,
                describe() + ": auxiliary input supplied but not declared");
  }

  Tensor assembled({n, d + a});
  const float* src = input.data();
  float* dst = assembled.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(dst + i * (d + a), src + i * d, d * sizeof(float));
    if (a > 0)
      std::memcpy(dst + i * (d + a) + d, ctx.aux->data() + i * a,
                  a * sizeof(float));
  }
  return assembled;
}

Tensor FullyConnectedLayer::forward(const Tensor& input,
                                    const ForwardCtx& ctx) {
  cached_in_shape_ = input.shape();
  cached_input_ = assemble(input, ctx);
  std::size_t n = input.dim(0);
  std::size_t o = spec_.out;
  std::size_t da = cached_input_.dim(1);
  Tensor out({n, o});
  detail::gemm_nt(n, o, da, 1.0f, cached_input_.data(), da,
                  params_.weights.data(), da, 0.0f, out.data(), o);
  const float* bias = params_.bias.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < o; ++j) out.at(i, j) += bias[j];
  return out;
}

Tensor FullyConnectedLayer::infer(const Tensor& input,
                                  const ForwardCtx& ctx) const {
  Tensor assembled = assemble(input, ctx);
  std::size_t n = input.dim(0);
  std::size_t o = spec_.out;
  std::size_t da = assembled.dim(1);
  Tensor out({n, o});
  detail::gemm_nt(n, o, da, 1.0f, assembled.data(), da,
                  params_.weights.data(), da, 0.0f, out.data(), o);
  const float* bias = params_.bias.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < o; ++j) out.at(i, j) += bias[j];
  return out;
}

Tensor FullyConnectedLayer::backward(const Tensor& grad_out) {
  if (cached_input_.empty())
    throw Error(ErrorKind::Parameter, describe() + ": backward before forward");
  std::size_t n = cached_input_.dim(0);
  std::size_t da = cached_input_.dim(1);
  std::size_t d = in_features_;
  std::size_t o = spec_.out;

  detail::gemm_tn(o, da, n, 1.0f, grad_out.data(), o, cached_input_.data(), da,
                  1.0f, params_.weight_grad.data(), da);
  float* bg = params_.bias_grad.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < o; ++j) bg[j] += grad_out.at(i, j);

  Tensor dx2({n, da});
  detail::gemm_nn(n, da, o, 1.0f, grad_out.data(), o, params_.weights.data(),
                  da, 0.0f, dx2.data(), da);
  // gradient w.r.t. the auxiliary inputs is dropped; positions are data
  Tensor grad_in(cached_in_shape_);
  float* dst = grad_in.data();
  for (std::size_t i = 0; i < n; ++i)
    std::memcpy(dst + i * d, dx2.data() + i * da, d * sizeof(float));
  return grad_in;
}

std::string FullyConnectedLayer::describe() const {
  return layer_spec_name(spec_);
}

// ---------------------------------------------------------------------------
// Dropout.

DropoutLayer::DropoutLayer(const DropoutSpec& spec) : spec_(spec) {
  if (!(spec.rate >= 0.0f && spec.rate < 1.0f))
    throw Error(ErrorKind::Parameter,
                "dropout rate must be in [0, 1), got " +
                    std::to_string(spec.rate));
}

std::vector<std::size_t> DropoutLayer::output_shape(
    const std::vector<std::size_t>& in) const {
  return in;
}

Tensor DropoutLayer::forward(const Tensor& input, const ForwardCtx& ctx) {
  if (spec_.rate == 0.0f) {
    mask_.assign(input.size(), 1.0f);
    return input;
  }
  if (ctx.rng == nullptr)
    throw Error(ErrorKind::Parameter,
                describe() + ": training forward needs an rng");
  float keep_scale = 1.0f / (1.0f - spec_.rate);
  mask_.resize(input.size());
  Tensor out(input.shape());
  const float* src = input.data();
  float* dst = out.data();
  for (std::size_t i = 0; i < input.size(); ++i) {
    mask_[i] = ctx.rng->uniform() < spec_.rate ? 0.0f : keep_scale;
    dst[i] = src[i] * mask_[i];
  }
  return out;
}

Tensor DropoutLayer::infer(const Tensor& input, const ForwardCtx&) const {
  return input;
}

Tensor DropoutLayer::backward(const Tensor& grad_out) {
  if (mask_.size() != grad_out.size())
    throw Error(ErrorKind::Parameter, describe() + ": backward before forward");
  Tensor grad_in(grad_out.shape());
  const float* g = grad_out.data();
  float* dst = grad_in.data();
  for (std::size_t i = 0; i < grad_out.size(); ++i) dst[i] = g[i] * mask_[i];
  return grad_in;
}

std::string DropoutLayer::describe() const { return layer_spec_name(spec_); }

// ---------------------------------------------------------------------------

std::unique_ptr<Layer> make_layer(
    const LayerSpec& spec, const std::vector<std::size_t>& input_shape) {
  struct Visitor {
    const std::vector<std::size_t>& in;
    std::unique_ptr<Layer> operator()(const ConvSpec& s) const {
      if (in.size() != 4)
        throw Error(ErrorKind::Dimension,
                    layer_spec_name(LayerSpec(s)) +
                        ": needs image-shaped input, got " +
                        shape_to_string(in));
      return std::make_unique<ConvLayer>(static_cast<int>(in[1]), s);
    }
    std::unique_ptr<Layer> operator()(const MaxPoolSpec& s) const {
      return std::make_unique<MaxPoolLayer>(s);
    }
    std::unique_ptr<Layer> operator()(const ActivationSpec& s) const {
      return std::make_unique<ActivationLayer>(s);
    }
    std::unique_ptr<Layer> operator()(const FullyConnectedSpec& s) const {
      return std::make_unique<FullyConnectedLayer>(
          static_cast<int>(flat_features(in)), s);
    }
    std::unique_ptr<Layer> operator()(const DropoutSpec& s) const {
      return std::make_unique<DropoutLayer>(s);
    }
  };
  return std::visit(Visitor{input_shape}, spec);
}

std::pair<double, Tensor> weighted_quadratic_loss(
    const Tensor& pred, const Tensor& target,
    const std::vector<float>& weights) {
  if (!pred.same_shape(target) || pred.rank() != 2)
    throw Error(ErrorKind::Dimension,
                "loss shapes disagree: " + shape_to_string(pred.shape()) +
                    " vs " + shape_to_string(target.shape()));
  std::size_t n = pred.dim(0), o = pred.dim(1);
  if (weights.size() != n)
    throw Error(ErrorKind::Weight,
                "expected " + std::to_string(n) + " weights, got " +
                    std::to_string(weights.size()));
  double wsum = 0.0;
  for (float w : weights) {
    if (w < 0.0f)
      throw Error(ErrorKind::Weight, "negative example weight");
    wsum += w;
  }
  if (wsum == 0.0)
    throw Error(ErrorKind::Weight, "all example weights are zero");

  double loss = 0.0;
  Tensor grad({n, o});
  for (std::size_t i = 0; i < n; ++i) {
    double wi = weights[i];
    double row = 0.0;
    for (std::size_t j = 0; j < o; ++j) {
      double diff = static_cast<double>(pred.at(i, j)) - target.at(i, j);
      row += diff * diff;
      grad.at(i, j) = static_cast<float>(2.0 * wi * diff / wsum);
    }
    loss += wi * row;
  }
  return {loss / wsum, std::move(grad)};
}

}  // namespace patchnet
