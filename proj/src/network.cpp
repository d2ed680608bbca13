#include "patchnet/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "patchnet/errors.hpp"

namespace patchnet {

using nlohmann::json;

const char* init_scheme_name(InitScheme s) {
  return s == InitScheme::Heuristic ? "heuristic" : "normalized";
}

InitScheme init_scheme_from_name(const std::string& name) {
  if (name == "heuristic") return InitScheme::Heuristic;
  if (name == "normalized") return InitScheme::Normalized;
  throw Error(ErrorKind::Parameter, "unknown init scheme '" + name + "'");
}

std::optional<std::size_t> NetworkSpec::aux_layer_index() const {
  std::optional<std::size_t> found;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto* fc = std::get_if<FullyConnectedSpec>(&layers[i]);
    if (fc && fc->aux_inputs > 0) {
      if (found)
        throw Error(ErrorKind::Build,
                    "more than one auxiliary injection point (layers " +
                        std::to_string(*found) + " and " + std::to_string(i) +
                        ")");
      found = i;
    }
  }
  return found;
}

namespace {

void push_dropout(std::vector<LayerSpec>& layers, const PresetOptions& o) {
  if (o.dropout) layers.push_back(DropoutSpec{o.dropout_rate});
}

}  // namespace

NetworkSpec road_preset(const PresetOptions& o) {
  NetworkSpec spec;
  spec.input_patch = {3, 28, 28};
  auto& l = spec.layers;
  l.push_back(ConvSpec{7, 7, 12});
  l.push_back(MaxPoolSpec{2, 2});
  l.push_back(ActivationSpec{Activation::Relu});
  l.push_back(ConvSpec{5, 5, 6});
  l.push_back(ActivationSpec{Activation::Relu});
  l.push_back(FullyConnectedSpec{48, 0});
  l.push_back(ActivationSpec{Activation::Relu});
  push_dropout(l, o);
  l.push_back(FullyConnectedSpec{192, o.spatial_prior ? 2 : 0});
  l.push_back(ActivationSpec{Activation::Relu});
  push_dropout(l, o);
  l.push_back(FullyConnectedSpec{1, 0});
  l.push_back(ActivationSpec{Activation::Tanh});
  return spec;
}

NetworkSpec urban_preset(const PresetOptions& o) {
  NetworkSpec spec;
  spec.input_patch = {3, 28, 28};
  auto& l = spec.layers;
  l.push_back(ConvSpec{7, 7, 16});
  l.push_back(MaxPoolSpec{2, 2});
  l.push_back(ActivationSpec{Activation::Tanh});
  l.push_back(ConvSpec{5, 5, 12});
  l.push_back(ActivationSpec{Activation::Tanh});
  l.push_back(FullyConnectedSpec{64, 0});
  l.push_back(ActivationSpec{Activation::Tanh});
  push_dropout(l, o);
  l.push_back(FullyConnectedSpec{192, o.spatial_prior ? 2 : 0});
  l.push_back(ActivationSpec{Activation::Tanh});
  push_dropout(l, o);
  l.push_back(FullyConnectedSpec{8, 0});
  l.push_back(ActivationSpec{Activation::Sigmoid});
  return spec;
}

NetworkSpec road_tiny_preset(bool spatial_prior) {
  NetworkSpec spec;
  spec.input_patch = {3, 8, 8};
  auto& l = spec.layers;
  l.push_back(ConvSpec{3, 3, 2});
  l.push_back(MaxPoolSpec{2, 2});
  l.push_back(ActivationSpec{Activation::Relu});
  l.push_back(ConvSpec{2, 2, 2});
  l.push_back(ActivationSpec{Activation::Relu});
  l.push_back(FullyConnectedSpec{8, 0});
  l.push_back(ActivationSpec{Activation::Relu});
  l.push_back(FullyConnectedSpec{12, spatial_prior ? 2 : 0});
  l.push_back(ActivationSpec{Activation::Relu});
  l.push_back(FullyConnectedSpec{1, 0});
  l.push_back(ActivationSpec{Activation::Tanh});
  return spec;
}

NetworkSpec urban_tiny_preset(bool spatial_prior) {
  NetworkSpec spec;
  spec.input_patch = {3, 8, 8};
  auto& l = spec.layers;
  l.push_back(ConvSpec{3, 3, 2});
  l.push_back(MaxPoolSpec{2, 2});
  l.push_back(ActivationSpec{Activation::Tanh});
  l.push_back(ConvSpec{2, 2, 3});
  l.push_back(ActivationSpec{Activation::Tanh});
  l.push_back(FullyConnectedSpec{8, 0});
  l.push_back(ActivationSpec{Activation::Tanh});
  l.push_back(FullyConnectedSpec{12, spatial_prior ? 2 : 0});
  l.push_back(ActivationSpec{Activation::Tanh});
  l.push_back(FullyConnectedSpec{4, 0});
  l.push_back(ActivationSpec{Activation::Sigmoid});
  return spec;
}

std::vector<std::string> road_class_names() { return {"non_road", "road"}; }

std::vector<std::string> urban_class_names() {
  return {"building", "window", "door",        "sky",
          "vegetation", "car",  "road", "pavement"};
}

// ---------------------------------------------------------------------------

void Model::construct_layers() {
  layers_.clear();
  layer_shapes_.clear();
  std::vector<std::size_t> shape = {1, spec_.input_patch[0],
                                    spec_.input_patch[1],
                                    spec_.input_patch[2]};
  std::ostringstream report;
  report << "input: " << shape_to_string(shape) << "\n";
  spec_.aux_layer_index();  // validates uniqueness
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    try {
      auto layer = make_layer(spec_.layers[i], shape);
      shape = layer->output_shape(shape);
      report << "layer " << i << " (" << layer->describe()
             << "): " << shape_to_string(shape) << "\n";
      layer_shapes_.push_back(shape);
      layers_.push_back(std::move(layer));
    } catch (const Error& e) {
      throw Error(ErrorKind::Build,
                  "layer " + std::to_string(i) + " (" +
                      layer_spec_name(spec_.layers[i]) + "): " + e.what());
    }
  }
  if (shape.size() != 2)
    throw Error(ErrorKind::Build,
                "network must end with a flat output, got " +
                    shape_to_string(shape));
  shape_report_ = report.str();
}

Model Model::build(const NetworkSpec& spec, InitScheme init, Rng& rng) {
  Model m;
  m.spec_ = spec;
  m.construct_layers();
  for (std::size_t i = 0; i < m.layers_.size(); ++i) {
    LayerParams* p = m.layers_[i]->params();
    if (!p) continue;
    double n_in = 0, n_out = 0;
    if (const auto* conv = std::get_if<ConvSpec>(&spec.layers[i])) {
      const auto& w = p->weights.shape();  // F, C, kh, kw
      n_in = static_cast<double>(w[1] * w[2] * w[3]);
      n_out = static_cast<double>(w[0] * w[2] * w[3]);
      (void)conv;
    } else {
      const auto& w = p->weights.shape();  // O, D+A
      n_in = static_cast<double>(w[1]);
      n_out = static_cast<double>(w[0]);
    }
    double bound = init == InitScheme::Heuristic
                       ? 1.0 / std::sqrt(n_in)
                       : std::sqrt(6.0) / std::sqrt(n_in + n_out);
    for (std::size_t j = 0; j < p->weights.size(); ++j)
      p->weights[j] = static_cast<float>(rng.uniform(-bound, bound));
    p->bias.fill(0.0f);
  }
  return m;
}

void Model::check_positions(const Tensor& patches,
                            const Tensor* positions) const {
  auto aux = spec_.aux_layer_index();
  if (aux.has_value()) {
    if (positions == nullptr)
      throw Error(ErrorKind::AuxInput,
                  "network expects (x, y) positions but none were supplied");
    if (positions->rank() != 2 || positions->dim(0) != patches.dim(0) ||
        positions->dim(1) != 2)
      throw Error(ErrorKind::AuxInput,
                  "positions must be N x 2, got " +
                      shape_to_string(positions->shape()));
    for (std::size_t i = 0; i < positions->size(); ++i) {
      float v = (*positions)[i];
      if (!(v >= 0.0f && v <= 1.0f))
        throw Error(ErrorKind::AuxInput,
                    "position coordinates must lie in [0, 1], got " +
                        std::to_string(v));
    }
  } else if (positions != nullptr) {
    throw Error(ErrorKind::AuxInput,
                "positions supplied but the network has no auxiliary input");
  }
  if (patches.rank() != 4 || patches.dim(1) != spec_.input_patch[0] ||
      patches.dim(2) != spec_.input_patch[1] ||
      patches.dim(3) != spec_.input_patch[2])
    throw Error(ErrorKind::Dimension,
                "patch batch " + shape_to_string(patches.shape()) +
                    " does not match input " +
                    shape_to_string({spec_.input_patch[0],
                                     spec_.input_patch[1],
                                     spec_.input_patch[2]}));
}

Tensor Model::forward(const Tensor& patches, const Tensor* positions,
                      Rng* rng) {
  check_positions(patches, positions);
  auto aux_at = spec_.aux_layer_index();
  Tensor x = patches;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    ForwardCtx ctx;
    ctx.rng = rng;
    if (aux_at && *aux_at == i) ctx.aux = positions;
    x = layers_[i]->forward(x, ctx);
  }
  return x;
}

Tensor Model::infer(const Tensor& patches, const Tensor* positions) const {
  check_positions(patches, positions);
  auto aux_at = spec_.aux_layer_index();
  Tensor x = patches;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    ForwardCtx ctx;
    if (aux_at && *aux_at == i) ctx.aux = positions;
    x = layers_[i]->infer(x, ctx);
  }
  return x;
}

void Model::backward(const Tensor& loss_grad) {
  Tensor g = loss_grad;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
}

void Model::zero_grads() {
  for (auto& l : layers_) l->zero_grads();
}

std::vector<LayerParams*> Model::params() {
  std::vector<LayerParams*> out;
  for (auto& l : layers_)
    if (LayerParams* p = l->params()) out.push_back(p);
  return out;
}

std::vector<const LayerParams*> Model::params() const {
  std::vector<const LayerParams*> out;
  for (const auto& l : layers_)
    if (const LayerParams* p = l->params()) out.push_back(p);
  return out;
}

std::size_t Model::output_width() const {
  return layer_shapes_.back()[1];
}

// ---------------------------------------------------------------------------
// Model file: magic "PTNM", u32 version, u32 length + JSON spec block, then
// PTNT tensor blocks (weights, bias) in layer order.

namespace {

constexpr char kModelMagic[4] = {'P', 'T', 'N', 'M'};
constexpr std::uint32_t kModelVersion = 1;

json layer_to_json(const LayerSpec& spec) {
  struct Visitor {
    json operator()(const ConvSpec& s) const {
      return {{"type", "conv"}, {"kh", s.kh}, {"kw", s.kw},
              {"out", s.out_channels}};
    }
    json operator()(const MaxPoolSpec& s) const {
      return {{"type", "maxpool"}, {"ph", s.ph}, {"pw", s.pw}};
    }
    json operator()(const ActivationSpec& s) const {
      return {{"type", "activation"}, {"fn", activation_name(s.fn)}};
    }
    json operator()(const FullyConnectedSpec& s) const {
      return {{"type", "fc"}, {"out", s.out}, {"aux", s.aux_inputs}};
    }
    json operator()(const DropoutSpec& s) const {
      return {{"type", "dropout"}, {"rate", s.rate}};
    }
  };
  return std::visit(Visitor{}, spec);
}

LayerSpec layer_from_json(const json& j) {
  std::string type = j.at("type").get<std::string>();
  if (type == "conv")
    return ConvSpec{j.at("kh").get<int>(), j.at("kw").get<int>(),
                    j.at("out").get<int>()};
  if (type == "maxpool")
    return MaxPoolSpec{j.at("ph").get<int>(), j.at("pw").get<int>()};
  if (type == "activation")
    return ActivationSpec{activation_from_name(j.at("fn").get<std::string>())};
  if (type == "fc")
    return FullyConnectedSpec{j.at("out").get<int>(),
                              j.value("aux", 0)};
  if (type == "dropout") return DropoutSpec{j.at("rate").get<float>()};
  throw Error(ErrorKind::Format, "unknown layer type '" + type + "'");
}

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw Error(ErrorKind::Format, "truncated model file");
  return v;
}

}  // namespace

void Model::save(const std::string& path) const {
  json j;
  j["input_patch"] = spec_.input_patch;
  j["layers"] = json::array();
  for (const auto& l : spec_.layers) j["layers"].push_back(layer_to_json(l));
  j["meta"] = {{"class_names", meta_.class_names},
               {"task", meta_.task},
               {"seed", meta_.seed},
               {"mean_subtract", meta_.mean_subtract},
               {"config", meta_.config}};
  std::string text = j.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path + " for write");
  out.write(kModelMagic, 4);
  write_u32(out, kModelVersion);
  write_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const LayerParams* p : params()) {
    write_ptnt(out, p->weights);
    write_ptnt(out, p->bias);
  }
  if (!out) throw Error(ErrorKind::Io, "failed to write " + path);
}

Model Model::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kModelMagic, 4) != 0)
    throw Error(ErrorKind::Format, "bad model magic, expected PTNM");
  std::uint32_t version = read_u32(in);
  if (version != kModelVersion)
    throw Error(ErrorKind::Version,
                "model file version " + std::to_string(version) +
                    ", this build reads version " +
                    std::to_string(kModelVersion));
  std::uint32_t json_len = read_u32(in);
  std::string text(json_len, '\0');
  in.read(text.data(), json_len);
  if (!in) throw Error(ErrorKind::Format, "truncated model spec block");

  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("bad model spec json: ") +
                                       e.what());
  }

  Model m;
  auto patch = j.at("input_patch");
  m.spec_.input_patch = {patch.at(0).get<std::size_t>(),
                         patch.at(1).get<std::size_t>(),
                         patch.at(2).get<std::size_t>()};
  for (const auto& lj : j.at("layers"))
    m.spec_.layers.push_back(layer_from_json(lj));
  const auto& meta = j.at("meta");
  m.meta_.class_names = meta.at("class_names").get<std::vector<std::string>>();
  m.meta_.task = meta.at("task").get<std::string>();
  m.meta_.seed = meta.at("seed").get<std::uint64_t>();
  m.meta_.mean_subtract = meta.at("mean_subtract").get<bool>();
  m.meta_.config = meta.at("config").get<std::string>();

  m.construct_layers();
  for (LayerParams* p : m.params()) {
    Tensor w = read_ptnt(in);
    Tensor b = read_ptnt(in);
    if (!w.same_shape(p->weights) || !b.same_shape(p->bias))
      throw Error(ErrorKind::Format,
                  "stored parameter shapes do not match the spec");
    p->weights = std::move(w);
    p->bias = std::move(b);
  }
  return m;
}

}  // namespace patchnet
