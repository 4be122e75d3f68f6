#include "adaptkit/worldgen.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "adaptkit/container.hpp"
#include "adaptkit/errors.hpp"
#include "adaptkit/rng.hpp"

namespace adaptkit {

namespace {

constexpr std::array<Rgb, 6> kBuildingPalette = {{{0.62f, 0.32f, 0.25f},
                                                   {0.80f, 0.72f, 0.55f},
                                                   {0.52f, 0.56f, 0.66f},
                                                   {0.47f, 0.34f, 0.22f},
                                                   {0.88f, 0.84f, 0.74f},
                                                   {0.33f, 0.55f, 0.56f}}};

constexpr std::array<Rgb, 5> kVehiclePalette = {{{0.82f, 0.12f, 0.12f},
                                                  {0.12f, 0.22f, 0.78f},
                                                  {0.92f, 0.80f, 0.10f},
                                                  {0.94f, 0.94f, 0.94f},
                                                  {0.10f, 0.10f, 0.12f}}};

float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

Rgb perturb(Rgb c, Rng& rng, double amount) {
  for (auto& v : c) v = clamp01(v + static_cast<float>(rng.uniform(-amount, amount)));
  return c;
}

int uniform_int(Rng& rng, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

bool inside(const SceneObject& o, int x, int y) {
  const Box& b = o.box;
  if (x < b.x0 || x >= b.x1 || y < b.y0 || y >= b.y1) return false;
  if (o.kind != SceneObject::Kind::ellipse) return true;
  const double cx = 0.5 * (b.x0 + b.x1 - 1), cy = 0.5 * (b.y0 + b.y1 - 1);
  const double rx = 0.5 * (b.x1 - b.x0), ry = 0.5 * (b.y1 - b.y0);
  const double dx = (x - cx) / rx, dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

Box shifted(Box b, int dx, int dy) { return {b.x0 + dx, b.y0 + dy, b.x1 + dx, b.y1 + dy}; }

}  // namespace

void WorldConfig::validate() const {
  if (height < 16 || width < 16) throw ConfigError("world images must be at least 16×16");
  if (height % 8 != 0 || width % 8 != 0) throw ConfigError("world image size must be a multiple of 8");
  if (num_places < 1) throw ConfigError("world needs at least one place");
  if (max_jitter_px < 0) throw ConfigError("max_jitter_px must be non-negative");
}

bool ConditionSpec::is_identity() const noexcept {
  return gamma == 1.0f && brightness == 1.0f && tint == Rgb{1.0f, 1.0f, 1.0f} && blob_intensity == 0.0f &&
         noise_std == 0.0f && blur_radius == 0 && fade == 0.0f;
}

void ConditionSpec::validate() const {
  if (!(gamma > 0.0f) || !(brightness >= 0.0f)) throw ConfigError("condition '" + name + "': bad gamma/brightness");
  for (float t : tint) {
    if (!(t >= 0.0f)) throw ConfigError("condition '" + name + "': negative tint");
  }
  if (!(blob_radius > 0.0f)) throw ConfigError("condition '" + name + "': blob radius must be positive");
  if (!(noise_std >= 0.0f) || blur_radius < 0) throw ConfigError("condition '" + name + "': bad noise/blur");
  if (!(fade >= 0.0f && fade <= 1.0f)) throw ConfigError("condition '" + name + "': fade outside [0, 1]");
}

const std::vector<ConditionSpec>& condition_catalog() {
  static const std::vector<ConditionSpec> catalog = [] {
    std::vector<ConditionSpec> c;
    c.push_back(ConditionSpec{});

    ConditionSpec snow;
    snow.id = 1, snow.name = "snow";
    snow.fade = 0.45f, snow.fade_level = 0.95f, snow.gamma = 0.85f, snow.tint = {0.95f, 1.0f, 1.08f};
    c.push_back(snow);

    ConditionSpec dusk;
    dusk.id = 2, dusk.name = "dusk";
    dusk.gamma = 1.5f, dusk.brightness = 0.7f, dusk.tint = {1.2f, 0.85f, 0.65f};
    c.push_back(dusk);

    ConditionSpec night;
    night.id = 3, night.name = "night";
    night.gamma = 2.2f, night.brightness = 0.35f, night.tint = {0.75f, 0.9f, 1.35f};
    c.push_back(night);

    ConditionSpec rain = night;
    rain.id = 4, rain.name = "night_rain";
    rain.blur_radius = 1, rain.noise_std = 0.02f;
    c.push_back(rain);

    ConditionSpec low = night;
    low.id = 5, low.name = "night_low_exposure";
    low.gamma = 1.8f, low.brightness = 0.18f;
    c.push_back(low);

    ConditionSpec shadows;
    shadows.id = 6, shadows.name = "shadows";
    shadows.brightness = 0.9f, shadows.blob_x = 0.3f, shadows.blob_y = 0.7f, shadows.blob_radius = 0.3f;
    shadows.blob_intensity = -0.45f;
    c.push_back(shadows);

    ConditionSpec glare;
    glare.id = 7, glare.name = "sun_glare";
    glare.brightness = 1.1f, glare.fade = 0.25f, glare.fade_level = 1.0f;
    glare.blob_x = 0.75f, glare.blob_y = 0.15f, glare.blob_radius = 0.3f, glare.blob_intensity = 0.6f;
    c.push_back(glare);

    ConditionSpec ultra;
    ultra.id = 8, ultra.name = "sun_ultrahigh_exposure";
    ultra.gamma = 0.6f, ultra.brightness = 1.25f, ultra.fade = 0.1f, ultra.fade_level = 1.0f;
    ultra.tint = {1.05f, 1.0f, 0.88f};
    c.push_back(ultra);
    return c;
  }();
  return catalog;
}

const ConditionSpec& find_condition(std::string_view name) {
  for (const auto& c : condition_catalog()) {
    if (c.name == name) return c;
  }
  throw ConfigError("unknown condition '" + std::string(name) + "'");
}

const ConditionSpec& find_condition(int id) {
  for (const auto& c : condition_catalog()) {
    if (c.id == id) return c;
  }
  throw ConfigError("unknown condition id " + std::to_string(id));
}

std::uint64_t place_layout_seed(const WorldConfig& world, int place_id) noexcept {
  return mix64(world.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(place_id) + 1);
}

Scene make_scene(const WorldConfig& world, int place_id, std::uint64_t layout_seed) {
  world.validate();
  if (place_id < 0 || place_id >= world.num_places) {
    throw ContractViolation("place_id " + std::to_string(place_id) + " outside [0, " +
                            std::to_string(world.num_places) + ")");
  }
  const int H = static_cast<int>(world.height), W = static_cast<int>(world.width);
  Rng rng(layout_seed);
  Scene s;
  s.place_id = place_id;
  s.layout_seed = layout_seed;
  s.horizon = static_cast<int>(std::lround(H * rng.uniform(0.40, 0.50)));
  s.road_top_center = static_cast<float>(W * rng.uniform(0.40, 0.60));
  s.road_top_half = static_cast<float>(W * rng.uniform(0.03, 0.06));
  s.road_bottom_center = static_cast<float>(W * rng.uniform(0.35, 0.65));
  s.road_bottom_half = static_cast<float>(W * rng.uniform(0.22, 0.32));
  s.sky_top = perturb({0.42f, 0.60f, 0.88f}, rng, 0.04);
  s.sky_bottom = perturb({0.74f, 0.83f, 0.94f}, rng, 0.03);
  s.ground = perturb({0.30f, 0.55f, 0.22f}, rng, 0.04);
  s.road = perturb({0.40f, 0.40f, 0.42f}, rng, 0.03);

  const int buildings = uniform_int(rng, 2, 4);
  for (int b = 0; b < buildings; ++b) {
    SceneObject o;
    o.cls = SceneClass::building;
    o.windows = rng.uniform() < 0.7;
    const int bw = static_cast<int>(std::lround(W * rng.uniform(0.14, 0.30)));
    const int x0 = uniform_int(rng, -bw / 3, W - 2 * bw / 3);
    const int top = uniform_int(rng, H / 12, std::max(H / 12, s.horizon - 5));
    o.box = {x0, top, x0 + bw, s.horizon + uniform_int(rng, 1, 3)};
    o.color = perturb(kBuildingPalette[rng.below(kBuildingPalette.size())], rng, 0.05);
    s.objects.push_back(o);
  }
  const int trees = uniform_int(rng, 1, 3);
  for (int t = 0; t < trees; ++t) {
    SceneObject o;
    o.kind = SceneObject::Kind::ellipse;
    o.cls = SceneClass::vegetation;
    const int rx = uniform_int(rng, 3, 6), ry = uniform_int(rng, 4, 7);
    const int cx = uniform_int(rng, 0, W - 1);
    const int cy = s.horizon - ry / 2 + uniform_int(rng, -1, 2);
    o.box = {cx - rx, cy - ry, cx + rx + 1, cy + ry + 1};
    o.color = perturb({0.15f, 0.40f, 0.16f}, rng, 0.04);
    s.objects.push_back(o);
  }
  return s;
}

Sample render_scene(const WorldConfig& world, const Scene& scene, std::uint64_t jitter_seed) {
  const int H = static_cast<int>(world.height), W = static_cast<int>(world.width);
  const int J = world.max_jitter_px;
  Rng rng(jitter_seed ^ 0xA5A5A5A55A5A5A5AULL);
  const float illum = static_cast<float>(rng.uniform(0.95, 1.05));
  const float road_dx = static_cast<float>(uniform_int(rng, -J, J));

  std::vector<SceneObject> objects = scene.objects;
  for (auto& o : objects) o.box = shifted(o.box, uniform_int(rng, -J, J), uniform_int(rng, -J, J));

  // Vehicles are per traversal; place identity lives in the static layout.
  const int hz = scene.horizon;
  const int vehicles = 1 + static_cast<int>(rng.below(2));
  for (int v = 0; v < vehicles; ++v) {
    const double t = rng.uniform(0.3, 0.9);
    const double yc = hz + t * (H - 1 - hz);
    const double center = scene.road_top_center + t * (scene.road_bottom_center - scene.road_top_center) + road_dx;
    const double half = scene.road_top_half + t * (scene.road_bottom_half - scene.road_top_half);
    const int w = static_cast<int>(std::lround(4 + 8 * t));
    const int h = std::max(3, static_cast<int>(std::lround(w * 0.6)));
    const double xc = center + rng.uniform(-0.6, 0.6) * std::max(half - 0.5 * w, 0.0);
    SceneObject o;
    o.kind = SceneObject::Kind::vehicle;
    o.cls = SceneClass::vehicle;
    const int x0 = static_cast<int>(std::lround(xc - 0.5 * w));
    const int y0 = static_cast<int>(std::lround(yc - 0.5 * h));
    o.box = {x0, y0, x0 + w, y0 + h};
    o.color = perturb(kVehiclePalette[rng.below(kVehiclePalette.size())], rng, 0.03);
    objects.push_back(o);
  }

  Sample out;
  out.image = Tensor({3, world.height, world.width});
  out.mask.assign(world.height * world.width, 0);
  out.place_id = scene.place_id;
  out.condition_id = 0;
  out.jitter_seed = jitter_seed;
  const std::size_t plane = world.height * world.width;

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      SceneClass cls;
      Rgb color;
      if (y < hz) {
        const float t = static_cast<float>(y) / static_cast<float>(std::max(hz - 1, 1));
        cls = SceneClass::sky;
        for (int c = 0; c < 3; ++c) color[c] = scene.sky_top[c] + t * (scene.sky_bottom[c] - scene.sky_top[c]);
      } else {
        const float t = static_cast<float>(y - hz) / static_cast<float>(std::max(H - 1 - hz, 1));
        const float center = scene.road_top_center + t * (scene.road_bottom_center - scene.road_top_center) + road_dx;
        const float half = scene.road_top_half + t * (scene.road_bottom_half - scene.road_top_half);
        const float off = std::abs(static_cast<float>(x) + 0.5f - center);
        if (off <= half) {
          cls = SceneClass::road;
          color = scene.road;
          if (off < 0.6f + 0.8f * t && ((y - hz) / 3) % 2 == 0) color = {0.90f, 0.90f, 0.84f};
        } else {
          cls = SceneClass::vegetation;
          color = scene.ground;
          if (((x / 2) + (y / 2)) % 3 == 0) {
            for (auto& v : color) v *= 0.88f;
          }
        }
      }
      for (const auto& o : objects) {
        if (!inside(o, x, y)) continue;
        cls = o.cls;
        color = o.color;
        const int lx = x - o.box.x0, ly = y - o.box.y0;
        if (o.windows && lx % 4 >= 1 && lx % 4 <= 2 && ly % 4 >= 1 && ly % 4 <= 2 && y < o.box.y1 - 3) {
          color = {color[0] * 0.45f, color[1] * 0.5f, color[2] * 0.6f};
        }
        if (o.kind == SceneObject::Kind::vehicle) {
          const int h = o.box.y1 - o.box.y0, w = o.box.x1 - o.box.x0;
          if (ly < (h * 2) / 5 && lx > 0 && lx < w - 1) color = {0.22f, 0.27f, 0.33f};
          if (ly == h - 1 && (lx <= 1 || lx >= w - 2)) color = {0.05f, 0.05f, 0.05f};
        }
      }
      const std::size_t p = static_cast<std::size_t>(y) * world.width + static_cast<std::size_t>(x);
      out.mask[p] = static_cast<std::uint8_t>(cls);
      for (int c = 0; c < 3; ++c) {
        const float grain = static_cast<float>(rng.normal() * 0.01);
        out.image[c * plane + p] = clamp01(color[c] * illum + grain);
      }
    }
  }
  return out;
}

Sample render_scene(const WorldConfig& world, int place_id, std::uint64_t layout_seed, std::uint64_t jitter_seed) {
  return render_scene(world, make_scene(world, place_id, layout_seed), jitter_seed);
}

Tensor apply_condition(const Tensor& images, const ConditionSpec& spec, std::span<const std::uint64_t> seeds) {
  spec.validate();
  const bool batched = images.rank() == 4;
  if (!(batched || images.rank() == 3) || images.dim(batched ? 1 : 0) != 3) {
    throw DimensionError("apply_condition expects 3×H×W or N×3×H×W, got " + shape_str(images.shape()));
  }
  const std::size_t N = batched ? images.dim(0) : 1;
  if (seeds.size() != N) throw ContractViolation("apply_condition needs one noise seed per image");
  const std::size_t H = images.dim(batched ? 2 : 1), W = images.dim(batched ? 3 : 2);
  const std::size_t plane = H * W;
  Tensor out = images;
  if (spec.is_identity()) return out;

  std::vector<float> blob(plane, 0.0f);
  if (spec.blob_intensity != 0.0f) {
    const double r2 = 2.0 * spec.blob_radius * spec.blob_radius;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double u = (x + 0.5) / W - spec.blob_x, v = (y + 0.5) / H - spec.blob_y;
        blob[y * W + x] = static_cast<float>(spec.blob_intensity * std::exp(-(u * u + v * v) / r2));
      }
    }
  }

  std::vector<float> tmp(plane);
  for (std::size_t n = 0; n < N; ++n) {
    Rng noise(seeds[n] ^ 0x5DEECE66DULL);
    for (std::size_t c = 0; c < 3; ++c) {
      float* px = out.raw() + (n * 3 + c) * plane;
      const float gain = spec.brightness * spec.tint[c];
      for (std::size_t i = 0; i < plane; ++i) {
        float v = (1.0f - spec.fade) * px[i] + spec.fade * spec.fade_level;
        if (spec.gamma != 1.0f) v = std::pow(std::max(v, 0.0f), spec.gamma);
        px[i] = v * gain + blob[i];
      }
      if (spec.blur_radius > 0) {
        const int r = spec.blur_radius;
        for (int pass = 0; pass < 2; ++pass) {
          // pass 0 blurs rows, pass 1 columns.
          for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
              double acc = 0;
              for (int d = -r; d <= r; ++d) {
                if (pass == 0) {
                  const auto xx = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(x) + d, 0, W - 1));
                  acc += px[y * W + xx];
                } else {
                  const auto yy = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(y) + d, 0, H - 1));
                  acc += px[yy * W + x];
                }
              }
              tmp[y * W + x] = static_cast<float>(acc / (2 * r + 1));
            }
          }
          std::copy(tmp.begin(), tmp.end(), px);
        }
      }
      for (std::size_t i = 0; i < plane; ++i) {
        float v = px[i];
        if (spec.noise_std > 0.0f) v += static_cast<float>(spec.noise_std * noise.normal());
        px[i] = clamp01(v);
      }
    }
  }
  return out;
}

Sample apply_condition(const Sample& sample, const ConditionSpec& spec, std::uint64_t noise_seed) {
  Sample out = sample;
  const std::uint64_t seeds[1] = {noise_seed};
  out.image = apply_condition(sample.image, spec, seeds);
  out.condition_id = spec.id;
  return out;
}

Dataset Dataset::from_samples(std::span<const Sample> samples) {
  Dataset d;
  if (samples.empty()) return d;
  std::vector<Tensor> images;
  images.reserve(samples.size());
  for (const auto& s : samples) {
    images.push_back(s.image);
    d.masks.insert(d.masks.end(), s.mask.begin(), s.mask.end());
    d.place_ids.push_back(s.place_id);
    d.condition_ids.push_back(s.condition_id);
    d.jitter_seeds.push_back(s.jitter_seed);
  }
  d.images = Tensor::stack(images);
  return d;
}

std::span<const std::uint8_t> Dataset::mask(std::size_t i) const {
  return std::span(masks).subspan(i * pixels(), pixels());
}

Sample Dataset::sample(std::size_t i) const {
  Sample s;
  s.image = images.slice_batch(i).reshaped({3, height(), width()});
  const auto m = mask(i);
  s.mask.assign(m.begin(), m.end());
  s.place_id = place_ids[i];
  s.condition_id = condition_ids[i];
  s.jitter_seed = jitter_seeds[i];
  return s;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.images = images.gather_batch(indices);
  for (auto i : indices) {
    const auto m = mask(i);
    d.masks.insert(d.masks.end(), m.begin(), m.end());
    d.place_ids.push_back(place_ids[i]);
    d.condition_ids.push_back(condition_ids[i]);
    d.jitter_seeds.push_back(jitter_seeds[i]);
  }
  return d;
}

Dataset Dataset::range(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > size()) throw ContractViolation("bad dataset range");
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  return subset(idx);
}

Dataset Dataset::with_images(Tensor new_images, int condition_id) const {
  if (new_images.shape() != images.shape()) {
    throw DimensionError("with_images: shape " + shape_str(new_images.shape()) + " != " + shape_str(images.shape()));
  }
  Dataset d = *this;
  d.images = std::move(new_images);
  std::fill(d.condition_ids.begin(), d.condition_ids.end(), condition_id);
  return d;
}

std::uint64_t Dataset::hash() const noexcept {
  std::uint64_t h = fnv1a64({reinterpret_cast<const std::uint8_t*>(images.raw()), images.numel() * sizeof(float)});
  h ^= mix64(fnv1a64(masks));
  for (std::size_t i = 0; i < size(); ++i) {
    h = mix64(h ^ (static_cast<std::uint64_t>(place_ids[i]) << 32 | static_cast<std::uint32_t>(condition_ids[i])));
    h = mix64(h ^ jitter_seeds[i]);
  }
  return h;
}

std::uint64_t jitter_seed(std::uint64_t base, std::uint64_t stream, std::size_t index) noexcept {
  return mix64(mix64(base * 0xD1B54A32D192ED03ULL + stream) ^ (static_cast<std::uint64_t>(index) + 1));
}

std::vector<int> default_route(const WorldConfig& world) {
  std::vector<int> r(static_cast<std::size_t>(world.num_places));
  for (int i = 0; i < world.num_places; ++i) r[static_cast<std::size_t>(i)] = i;
  return r;
}

Splits build_split(const WorldConfig& world, std::span<const int> route, const ConditionSpec& condition,
                   const SplitCounts& counts, const SplitSeeds& seeds) {
  world.validate();
  condition.validate();
  if (route.empty()) throw ConfigError("route is empty");
  if (counts.train == 0 || counts.val == 0 || counts.test == 0) throw ConfigError("split sizes must be positive");
  if (seeds.train == seeds.val || seeds.train == seeds.test || seeds.val == seeds.test) {
    throw ConfigError("split seed bases overlap; train/val/test would share traversals");
  }

  std::vector<Scene> scenes;
  scenes.reserve(route.size());
  for (int place : route) scenes.push_back(make_scene(world, place, place_layout_seed(world, place)));

  const auto cond_stream = static_cast<std::uint64_t>(condition.id);
  auto render = [&](std::size_t n, std::uint64_t base, std::uint64_t stream) {
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t js = jitter_seed(base, stream, i);
      Sample s = render_scene(world, scenes[i % scenes.size()], js);
      out.push_back(apply_condition(s, condition, js ^ mix64(cond_stream + 17)));
    }
    return out;
  };

  auto train = render(counts.train, seeds.train, cond_stream);
  Rng(mix64(seeds.train) ^ cond_stream).shuffle(train);
  auto val = render(counts.val, seeds.val, 0);
  auto test = render(counts.test, seeds.test, 0);

  std::set<std::uint64_t> seen;
  for (const auto* split : {&train, &val, &test}) {
    std::set<std::uint64_t> local;
    for (const auto& s : *split) local.insert(s.jitter_seed);
    for (auto js : local) {
      if (!seen.insert(js).second) throw ConfigError("jitter seed shared between splits");
    }
  }
  return {Dataset::from_samples(train), Dataset::from_samples(val), Dataset::from_samples(test)};
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  Container c;
  c.add("images", data.images);
  Tensor masks({data.size(), data.height(), data.width()});
  for (std::size_t i = 0; i < data.masks.size(); ++i) masks[i] = static_cast<float>(data.masks[i]);
  c.add("masks", std::move(masks));
  std::vector<std::string> seeds;
  for (auto s : data.jitter_seeds) seeds.push_back(std::to_string(s));
  c.attributes() = {{"kind", "dataset"},
                    {"place_ids", data.place_ids},
                    {"condition_ids", data.condition_ids},
                    {"jitter_seeds", seeds}};
  save_container(path, c);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const Container c = load_container(path);
  Dataset d;
  try {
    d.images = c.get("images");
    const Tensor& m = c.get("masks");
    d.masks.reserve(m.numel());
    for (float v : m.data()) {
      if (v < 0.0f || v >= static_cast<float>(kNumClasses)) throw CorruptCheckpointError("mask value out of range");
      d.masks.push_back(static_cast<std::uint8_t>(v));
    }
    d.place_ids = c.attributes().at("place_ids").get<std::vector<int>>();
    d.condition_ids = c.attributes().at("condition_ids").get<std::vector<int>>();
    for (const auto& s : c.attributes().at("jitter_seeds")) d.jitter_seeds.push_back(std::stoull(s.get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("dataset attributes malformed: ") + e.what());
  }
  if (d.images.rank() != 4 || d.place_ids.size() != d.images.dim(0) || d.condition_ids.size() != d.size() ||
      d.jitter_seeds.size() != d.size() || d.masks.size() != d.size() * d.pixels()) {
    throw CorruptCheckpointError("dataset columns disagree in length: " + path.string());
  }
  return d;
}

}  // namespace adaptkit
