#include "patchnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "patchnet/errors.hpp"

namespace patchnet {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Symmetric reflection: index -1 maps back to 0, n to n-1.
long fold(long i, long n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

}  // namespace

float normalized_x(std::size_t col, std::size_t width) {
  return width <= 1 ? 0.0f
                    : static_cast<float>(col) / static_cast<float>(width - 1);
}

float normalized_y(std::size_t row, std::size_t height) {
  return height <= 1
             ? 0.0f
             : static_cast<float>(row) / static_cast<float>(height - 1);
}

Tensor extract_patch(const Tensor& pixels, long row, long col, int size) {
  if (pixels.rank() != 3)
    throw Error(ErrorKind::Dimension,
                "expected C x H x W pixels, got " +
                    shape_to_string(pixels.shape()));
  long h = static_cast<long>(pixels.dim(1));
  long w = static_cast<long>(pixels.dim(2));
  if (row < 0 || row >= h || col < 0 || col >= w)
    throw Error(ErrorKind::Bounds,
                "patch center (" + std::to_string(row) + ", " +
                    std::to_string(col) + ") outside image " +
                    std::to_string(h) + "x" + std::to_string(w));
  std::size_t c = pixels.dim(0);
  long lo = -(size / 2);
  Tensor patch({c, static_cast<std::size_t>(size),
                static_cast<std::size_t>(size)});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (int py = 0; py < size; ++py) {
      long sy = fold(row + lo + py, h);
      for (int px = 0; px < size; ++px) {
        long sx = fold(col + lo + px, w);
        patch.at(ch, py, px) = pixels.at(ch, static_cast<std::size_t>(sy),
                                         static_cast<std::size_t>(sx));
      }
    }
  }
  return patch;
}

const char* weighting_name(Weighting w) {
  switch (w) {
    case Weighting::None: return "none";
    case Weighting::InverseClassFrequency: return "inverse_class_frequency";
    case Weighting::PixelWeightMap: return "pixel_weight_map";
  }
  return "?";
}

Weighting weighting_from_name(const std::string& name) {
  if (name == "none") return Weighting::None;
  if (name == "inverse_class_frequency") return Weighting::InverseClassFrequency;
  if (name == "pixel_weight_map") return Weighting::PixelWeightMap;
  throw Error(ErrorKind::Config, "unknown weighting '" + name + "'");
}

TrainingPool::TrainingPool(
    std::shared_ptr<const std::vector<LabeledImage>> images,
    std::vector<Entry> entries, Weighting weighting, int patch_size)
    : images_(std::move(images)),
      entries_(std::move(entries)),
      weighting_(weighting),
      patch_size_(patch_size) {}

PatchSample TrainingPool::sample(std::size_t i) const {
  const Entry& e = entries_[i];
  const LabeledImage& img = (*images_)[e.image];
  PatchSample s;
  s.patch = extract_patch(img.pixels, e.row, e.col, patch_size_);
  s.x = normalized_x(e.col, img.width());
  s.y = normalized_y(e.row, img.height());
  s.label = e.label;
  s.weight = e.weight;
  return s;
}

int TrainingPool::num_classes() const {
  int k = 0;
  for (const Entry& e : entries_) k = std::max(k, static_cast<int>(e.label) + 1);
  return k;
}

std::vector<std::int64_t> TrainingPool::label_counts() const {
  std::vector<std::int64_t> counts(num_classes(), 0);
  for (const Entry& e : entries_) ++counts[e.label];
  return counts;
}

TrainingPool TrainingPool::subsample_per_class(
    const std::vector<std::size_t>& counts) const {
  std::vector<std::size_t> taken(counts.size(), 0);
  std::vector<Entry> kept;
  for (const Entry& e : entries_) {
    if (e.label < counts.size() && taken[e.label] < counts[e.label]) {
      kept.push_back(e);
      ++taken[e.label];
    }
  }
  for (std::size_t k = 0; k < counts.size(); ++k)
    if (taken[k] < counts[k])
      throw Error(ErrorKind::Data,
                  "class " + std::to_string(k) + " can supply only " +
                      std::to_string(taken[k]) + " of " +
                      std::to_string(counts[k]) + " requested samples");
  TrainingPool out(images_, std::move(kept), weighting_, patch_size_);
  return out.reweighted(weighting_);
}

TrainingPool TrainingPool::reweighted(Weighting weighting) const {
  TrainingPool out(images_, entries_, weighting, patch_size_);
  switch (weighting) {
    case Weighting::None:
      for (Entry& e : out.entries_) e.weight = 1.0f;
      break;
    case Weighting::InverseClassFrequency: {
      auto counts = out.label_counts();
      for (Entry& e : out.entries_)
        e.weight = 1.0f / static_cast<float>(counts[e.label]);
      break;
    }
    case Weighting::PixelWeightMap:
      for (Entry& e : out.entries_) {
        const LabeledImage& img = (*images_)[e.image];
        if (!img.weight_map)
          throw Error(ErrorKind::Data,
                      "pixel_weight_map weighting needs a weight map");
        e.weight = img.weight_map->at(0, e.row, e.col);
      }
      break;
  }
  return out;
}

TrainingPool build_training_pool(
    std::shared_ptr<const std::vector<LabeledImage>> images,
    int samples_per_image, Weighting weighting, Rng& rng, int patch_size) {
  if (!images || images->empty())
    throw Error(ErrorKind::Data, "no images to build a pool from");
  if (samples_per_image < 1)
    throw Error(ErrorKind::Parameter, "samples_per_image must be >= 1");

  std::vector<TrainingPool::Entry> entries;
  entries.reserve(images->size() * static_cast<std::size_t>(samples_per_image));
  for (std::size_t idx = 0; idx < images->size(); ++idx) {
    const LabeledImage& img = (*images)[idx];
    if (weighting == Weighting::PixelWeightMap && !img.weight_map)
      throw Error(ErrorKind::Data,
                  "image " + std::to_string(idx) +
                      " lacks a weight map under pixel_weight_map weighting");
    std::size_t h = img.height(), w = img.width();
    std::vector<std::uint32_t> eligible;
    eligible.reserve(h * w);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        if (img.labels.at(r, c) == kUnlabeled) continue;
        if (weighting == Weighting::PixelWeightMap &&
            img.weight_map->at(0, r, c) <= 0.0f)
          continue;
        eligible.push_back(static_cast<std::uint32_t>(r * w + c));
      }
    }
    if (eligible.empty()) continue;  // fully unlabeled image contributes none
    for (int s = 0; s < samples_per_image; ++s) {
      std::uint32_t flat = eligible[rng.index(eligible.size())];
      std::size_t r = flat / w, c = flat % w;
      TrainingPool::Entry e;
      e.image = static_cast<std::uint32_t>(idx);
      e.row = static_cast<std::uint16_t>(r);
      e.col = static_cast<std::uint16_t>(c);
      e.label = img.labels.at(r, c);
      e.weight = weighting == Weighting::PixelWeightMap
                     ? img.weight_map->at(0, r, c)
                     : 1.0f;
      entries.push_back(e);
    }
  }

  TrainingPool pool(std::move(images), std::move(entries), weighting,
                    patch_size);
  if (weighting == Weighting::InverseClassFrequency)
    return pool.reweighted(weighting);
  return pool;
}

Tensor birdseye_weight_map(std::size_t height, std::size_t width,
                           long horizon_row, float strength) {
  if (horizon_row < 0 || horizon_row >= static_cast<long>(height))
    throw Error(ErrorKind::Parameter,
                "horizon row " + std::to_string(horizon_row) +
                    " outside [0, " + std::to_string(height) + ")");
  Tensor map({1, height, width});
  double sum = 0.0;
  std::size_t nonzero = 0;
  for (std::size_t r = 0; r < height; ++r) {
    double w = 0.0;
    if (static_cast<long>(r) > horizon_row) {
      double dist = static_cast<double>(static_cast<long>(r) - horizon_row);
      w = std::pow(1.0 / dist, static_cast<double>(strength));
    }
    for (std::size_t c = 0; c < width; ++c)
      map.at(0, r, c) = static_cast<float>(w);
    if (w > 0.0) {
      sum += w * static_cast<double>(width);
      nonzero += width;
    }
  }
  if (nonzero > 0) {
    float scale = static_cast<float>(static_cast<double>(nonzero) / sum);
    for (std::size_t i = 0; i < map.size(); ++i) map[i] *= scale;
  }
  return map;
}

// ---------------------------------------------------------------------------
// Synthetic scenes.

SceneKind scene_kind_from_name(const std::string& name) {
  if (name == "road") return SceneKind::Road;
  if (name == "urban") return SceneKind::Urban;
  throw Error(ErrorKind::Config, "unknown scene kind '" + name + "'");
}

const char* scene_kind_name(SceneKind k) {
  return k == SceneKind::Road ? "road" : "urban";
}

namespace {

struct Texture {
  float r, g, b;
  float noise;
};

void paint(LabeledImage& img, std::size_t row, std::size_t col,
           const Texture& t, std::uint8_t label, Rng& rng) {
  img.pixels.at(0, row, col) =
      std::clamp(t.r + rng.uniform_f(-t.noise, t.noise), 0.0f, 1.0f);
  img.pixels.at(1, row, col) =
      std::clamp(t.g + rng.uniform_f(-t.noise, t.noise), 0.0f, 1.0f);
  img.pixels.at(2, row, col) =
      std::clamp(t.b + rng.uniform_f(-t.noise, t.noise), 0.0f, 1.0f);
  img.labels.at(row, col) = label;
}

Texture jittered(float r, float g, float b, float jitter, float noise,
                 Rng& rng) {
  return Texture{r + rng.uniform_f(-jitter, jitter),
                 g + rng.uniform_f(-jitter, jitter),
                 b + rng.uniform_f(-jitter, jitter), noise};
}

LabeledImage road_scene(std::uint64_t seed) {
  constexpr std::size_t kH = 320, kW = 400;
  Rng rng(seed * 0x9e3779b97f4a7c15ull + 1);
  LabeledImage img;
  img.pixels = Tensor({3, kH, kW});
  img.labels = LabelMap(kH, kW, 0);

  long horizon = 80 + rng.uniform_int(-6, 6);
  Texture sky = jittered(0.70f, 0.80f, 0.93f, 0.04f, 0.05f, rng);
  Texture ground = jittered(0.36f, 0.36f, 0.38f, 0.03f, 0.06f, rng);

  // The road wedge is fixed in absolute coordinates, so its class is a pure
  // function of the pixel position; the ground texture carries no cue.
  auto half_width = [&](long r) {
    double t = static_cast<double>(r - 80) / (319.0 - 80.0);
    return 30.0 + 90.0 * t;
  };

  for (std::size_t r = 0; r < kH; ++r) {
    for (std::size_t c = 0; c < kW; ++c) {
      if (static_cast<long>(r) < horizon) {
        paint(img, r, c, sky, 0, rng);
      } else {
        bool road = std::abs(static_cast<double>(c) - 200.0) <=
                    half_width(static_cast<long>(r));
        paint(img, r, c, ground, road ? 1 : 0, rng);
      }
    }
  }
  img.weight_map = birdseye_weight_map(kH, kW, horizon, 1.0f);
  return img;
}

LabeledImage urban_scene(std::uint64_t seed) {
  constexpr std::size_t kH = 128, kW = 128;
  // class ids
  constexpr std::uint8_t kBuilding = 0, kWindow = 1, kDoor = 2, kSky = 3,
                         kVegetation = 4, kCar = 5, kRoad = 6, kPavement = 7;
  Rng rng(seed * 0x9e3779b97f4a7c15ull + 2);
  LabeledImage img;
  img.pixels = Tensor({3, kH, kW});
  img.labels = LabelMap(kH, kW, kBuilding);

  long sky_end = 24 + rng.uniform_int(-4, 4);
  long bld_end = 92 + rng.uniform_int(-4, 4);
  long pav_end = bld_end + 13 + rng.uniform_int(-2, 2);

  Texture sky = jittered(0.72f, 0.82f, 0.95f, 0.03f, 0.05f, rng);
  Texture building = jittered(0.62f, 0.52f, 0.44f, 0.05f, 0.07f, rng);
  Texture window = jittered(0.25f, 0.32f, 0.42f, 0.04f, 0.05f, rng);
  // doors share the building hue, darkened, which keeps them confusable
  Texture door{building.r * 0.55f, building.g * 0.55f, building.b * 0.55f,
               0.07f};
  Texture vegetation = jittered(0.22f, 0.50f, 0.20f, 0.05f, 0.08f, rng);
  Texture pavement = jittered(0.58f, 0.56f, 0.54f, 0.03f, 0.08f, rng);
  Texture road = jittered(0.38f, 0.38f, 0.40f, 0.03f, 0.08f, rng);
  const Texture car_palette[3] = {{0.66f, 0.16f, 0.16f, 0.05f},
                                  {0.16f, 0.22f, 0.58f, 0.05f},
                                  {0.78f, 0.78f, 0.80f, 0.05f}};
  Texture car = car_palette[rng.index(3)];
  car.r += rng.uniform_f(-0.02f, 0.02f);
  car.g += rng.uniform_f(-0.02f, 0.02f);
  car.b += rng.uniform_f(-0.02f, 0.02f);

  // horizontal bands
  for (std::size_t r = 0; r < kH; ++r) {
    const Texture* t;
    std::uint8_t label;
    if (static_cast<long>(r) < sky_end) {
      t = &sky;
      label = kSky;
    } else if (static_cast<long>(r) < bld_end) {
      t = &building;
      label = kBuilding;
    } else if (static_cast<long>(r) < pav_end) {
      t = &pavement;
      label = kPavement;
    } else {
      t = &road;
      label = kRoad;
    }
    for (std::size_t c = 0; c < kW; ++c) paint(img, r, c, *t, label, rng);
  }

  // window grid on the building face, stopping above the door band
  long pitch_y = 16 + rng.uniform_int(0, 3);
  long pitch_x = 18 + rng.uniform_int(0, 3);
  long col0 = 6 + rng.uniform_int(0, 6);
  for (long wy = sky_end + 6; wy + 9 < bld_end - 16; wy += pitch_y) {
    for (long wx = col0; wx + 7 < static_cast<long>(kW) - 2; wx += pitch_x) {
      for (long r = wy; r < wy + 9; ++r)
        for (long c = wx; c < wx + 7; ++c)
          paint(img, r, c, window, kWindow, rng);
    }
  }

  // doors at the building foot
  long door_count = 2 + static_cast<long>(rng.index(2));
  for (long d = 0; d < door_count; ++d) {
    long wx = 10 + d * 38 + rng.uniform_int(0, 14);
    for (long r = bld_end - 14; r < bld_end; ++r)
      for (long c = wx; c < wx + 9 && c < static_cast<long>(kW); ++c)
        paint(img, r, c, door, kDoor, rng);
  }

  // vegetation blobs straddling the roofline
  for (int v = 0; v < 2; ++v) {
    long cy = sky_end + rng.uniform_int(-4, 6);
    long cx = (v == 0 ? 12 : 100) + rng.uniform_int(0, 16);
    long ry = 8 + rng.uniform_int(0, 5);
    long rx = 10 + rng.uniform_int(0, 6);
    for (long r = cy - ry; r <= cy + ry; ++r) {
      if (r < 0 || r >= static_cast<long>(kH)) continue;
      for (long c = cx - rx; c <= cx + rx; ++c) {
        if (c < 0 || c >= static_cast<long>(kW)) continue;
        double dy = static_cast<double>(r - cy) / ry;
        double dx = static_cast<double>(c - cx) / rx;
        if (dy * dy + dx * dx <= 1.0)
          paint(img, r, c, vegetation, kVegetation, rng);
      }
    }
  }

  // cars on the road
  long car_count = 1 + static_cast<long>(rng.index(2));
  for (long k = 0; k < car_count; ++k) {
    long wx = 8 + static_cast<long>(rng.index(100));
    long wy = pav_end + 3;
    for (long r = wy; r < wy + 9 && r < static_cast<long>(kH); ++r)
      for (long c = wx; c < wx + 16 && c < static_cast<long>(kW); ++c)
        paint(img, r, c, car, kCar, rng);
  }

  // one-pixel unlabeled seam along region boundaries, like hand annotations
  LabelMap seamed = img.labels;
  for (std::size_t r = 0; r < kH; ++r) {
    for (std::size_t c = 0; c < kW; ++c) {
      std::uint8_t id = img.labels.at(r, c);
      bool edge = (r + 1 < kH && img.labels.at(r + 1, c) != id) ||
                  (r > 0 && img.labels.at(r - 1, c) != id) ||
                  (c + 1 < kW && img.labels.at(r, c + 1) != id) ||
                  (c > 0 && img.labels.at(r, c - 1) != id);
      if (edge) seamed.at(r, c) = kUnlabeled;
    }
  }
  img.labels = std::move(seamed);
  return img;
}

}  // namespace

LabeledImage generate_synthetic_scene(SceneKind kind, std::uint64_t seed) {
  return kind == SceneKind::Road ? road_scene(seed) : urban_scene(seed);
}

// ---------------------------------------------------------------------------
// Portable pixmap / graymap IO.

namespace {

int next_pnm_value(std::istream& in) {
  // skips whitespace and '#' comments
  while (true) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int value = -1;
  in >> value;
  if (!in || value < 0)
    throw Error(ErrorKind::Format, "malformed pnm header");
  return value;
}

std::uint8_t quantize(float v) {
  float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

void save_image_p6(const std::string& path, const Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.dim(0) != 3)
    throw Error(ErrorKind::Dimension,
                "expected 3 x H x W pixels, got " +
                    shape_to_string(pixels.shape()));
  std::size_t h = pixels.dim(1), w = pixels.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path + " for write");
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<std::uint8_t> row(w * 3);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      row[c * 3 + 0] = quantize(pixels.at(0, r, c));
      row[c * 3 + 1] = quantize(pixels.at(1, r, c));
      row[c * 3 + 2] = quantize(pixels.at(2, r, c));
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw Error(ErrorKind::Io, "failed to write " + path);
}

Tensor load_image_p6(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  char p, six;
  in.get(p);
  in.get(six);
  if (p != 'P' || six != '6')
    throw Error(ErrorKind::Format, path + " is not a P6 pixmap");
  std::size_t w = next_pnm_value(in);
  std::size_t h = next_pnm_value(in);
  int maxval = next_pnm_value(in);
  if (maxval != 255)
    throw Error(ErrorKind::Format, "only maxval 255 pixmaps are supported");
  in.get();  // single whitespace after header
  std::vector<std::uint8_t> raw(w * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (!in) throw Error(ErrorKind::Format, "truncated pixel data in " + path);
  Tensor pixels({3, h, w});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch)
        pixels.at(ch, r, c) =
            static_cast<float>(raw[(r * w + c) * 3 + ch]) / 255.0f;
  return pixels;
}

void save_labelmap_p5(const std::string& path, const LabelMap& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path + " for write");
  out << "P5\n" << labels.width << " " << labels.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(labels.ids.data()),
            static_cast<std::streamsize>(labels.ids.size()));
  if (!out) throw Error(ErrorKind::Io, "failed to write " + path);
}

LabelMap load_labelmap_p5(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  char p, five;
  in.get(p);
  in.get(five);
  if (p != 'P' || five != '5')
    throw Error(ErrorKind::Format, path + " is not a P5 graymap");
  std::size_t w = next_pnm_value(in);
  std::size_t h = next_pnm_value(in);
  int maxval = next_pnm_value(in);
  if (maxval != 255)
    throw Error(ErrorKind::Format, "only maxval 255 graymaps are supported");
  in.get();
  LabelMap labels(h, w);
  in.read(reinterpret_cast<char*>(labels.ids.data()),
          static_cast<std::streamsize>(labels.ids.size()));
  if (!in) throw Error(ErrorKind::Format, "truncated label data in " + path);
  return labels;
}

// ---------------------------------------------------------------------------

void save_manifest(const std::string& path,
                   const std::vector<ManifestEntry>& entries) {
  json j = json::array();
  for (const auto& e : entries) {
    json item = {{"image", e.image}, {"labels", e.labels}};
    if (e.weights) item["weights"] = *e.weights;
    j.push_back(item);
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path + " for write");
  out << j.dump(2) << "\n";
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format,
                path + " is not valid json: " + e.what());
  }
  if (!j.is_array())
    throw Error(ErrorKind::Format, path + ": manifest must be a json list");
  std::vector<ManifestEntry> entries;
  for (const auto& item : j) {
    ManifestEntry e;
    e.image = item.at("image").get<std::string>();
    e.labels = item.at("labels").get<std::string>();
    if (item.contains("weights"))
      e.weights = item.at("weights").get<std::string>();
    entries.push_back(std::move(e));
  }
  return entries;
}

std::shared_ptr<std::vector<LabeledImage>> load_dataset(
    const std::string& manifest_path) {
  auto entries = load_manifest(manifest_path);
  fs::path base = fs::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };
  auto images = std::make_shared<std::vector<LabeledImage>>();
  for (const auto& e : entries) {
    LabeledImage img;
    img.pixels = load_image_p6(resolve(e.image));
    img.labels = load_labelmap_p5(resolve(e.labels));
    if (img.labels.height != img.pixels.dim(1) ||
        img.labels.width != img.pixels.dim(2))
      throw Error(ErrorKind::Data,
                  e.labels + " does not match the size of " + e.image);
    if (e.weights) {
      Tensor wm = load_ptnt(resolve(*e.weights));
      if (wm.rank() == 2)
        wm = std::move(wm).reshaped({1, wm.dim(0), wm.dim(1)});
      if (wm.rank() != 3 || wm.dim(0) != 1 ||
          wm.dim(1) != img.pixels.dim(1) || wm.dim(2) != img.pixels.dim(2))
        throw Error(ErrorKind::Data,
                    *e.weights + " does not match the size of " + e.image);
      img.weight_map = std::move(wm);
    }
    images->push_back(std::move(img));
  }
  return images;
}

}  // namespace patchnet
