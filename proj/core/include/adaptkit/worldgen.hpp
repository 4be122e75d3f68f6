#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "adaptkit/tensor.hpp"

namespace adaptkit {

enum class SceneClass : std::uint8_t { sky = 0, road = 1, building = 2, vehicle = 3, vegetation = 4 };
inline constexpr int kNumClasses = 5;

struct WorldConfig {
  std::size_t height = 48;
  std::size_t width = 48;
  int num_places = 32;
  std::uint64_t seed = 7;
  int max_jitter_px = 2;

  void validate() const;
};

using Rgb = std::array<float, 3>;

struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open [x0, x1) × [y0, y1)
};

struct SceneObject {
  enum class Kind { rect, ellipse, vehicle } kind = Kind::rect;
  SceneClass cls = SceneClass::building;
  Box box;
  Rgb color{};
  bool windows = false;
};

/// Static layout of one place. Road and horizon are bands; everything else is
/// a list of objects painted in order over them.
struct Scene {
  int place_id = 0;
  std::uint64_t layout_seed = 0;
  int horizon = 0;
  float road_top_center = 0, road_top_half = 0;
  float road_bottom_center = 0, road_bottom_half = 0;
  Rgb sky_top{}, sky_bottom{}, ground{}, road{};
  std::vector<SceneObject> objects;
};

struct Sample {
  Tensor image;                     // 3×H×W in [0, 1]
  std::vector<std::uint8_t> mask;   // H×W class ids
  int place_id = 0;
  int condition_id = 0;
  std::uint64_t jitter_seed = 0;
};

/// Photometric condition. Applied to each pixel value x in this order:
///
///   fade:       x ← (1 − fade)·x + fade·fade_level
///   gamma:      x ← x^gamma
///   gain:       x ← x · brightness · tint[c]
///   blob:       x ← x + blob_intensity · exp(−r² / (2·blob_radius²))
///               with r the distance to (blob_x, blob_y) in image fractions
///   blur:       box blur of radius blur_radius, clamped edges
///   noise:      x ← x + noise_std · N(0, 1)
///   clip to [0, 1]
///
/// The default-constructed spec is the identity.
struct ConditionSpec {
  int id = 0;
  std::string name = "reference";
  float gamma = 1.0f;
  float brightness = 1.0f;
  Rgb tint{1.0f, 1.0f, 1.0f};
  float blob_x = 0.5f, blob_y = 0.5f, blob_radius = 0.25f, blob_intensity = 0.0f;
  float noise_std = 0.0f;
  int blur_radius = 0;
  float fade = 0.0f;
  float fade_level = 0.5f;

  bool is_identity() const noexcept;
  void validate() const;
};

/// Every condition the world knows, ids 0..8, reference first.
const std::vector<ConditionSpec>& condition_catalog();
const ConditionSpec& find_condition(std::string_view name);
const ConditionSpec& find_condition(int id);

std::uint64_t place_layout_seed(const WorldConfig& world, int place_id) noexcept;

Scene make_scene(const WorldConfig& world, int place_id, std::uint64_t layout_seed);
Sample render_scene(const WorldConfig& world, const Scene& scene, std::uint64_t jitter_seed);
Sample render_scene(const WorldConfig& world, int place_id, std::uint64_t layout_seed, std::uint64_t jitter_seed);

Sample apply_condition(const Sample& sample, const ConditionSpec& spec, std::uint64_t noise_seed);
/// Applies `spec` to an N×3×H×W or 3×H×W batch; sample n uses noise seed seeds[n].
Tensor apply_condition(const Tensor& images, const ConditionSpec& spec, std::span<const std::uint64_t> seeds);

/// Column-oriented sample collection.
struct Dataset {
  Tensor images;                    // N×3×H×W
  std::vector<std::uint8_t> masks;  // N·H·W
  std::vector<int> place_ids;
  std::vector<int> condition_ids;
  std::vector<std::uint64_t> jitter_seeds;

  static Dataset from_samples(std::span<const Sample> samples);

  std::size_t size() const noexcept { return place_ids.size(); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t pixels() const { return height() * width(); }

  std::span<const std::uint8_t> mask(std::size_t i) const;
  Sample sample(std::size_t i) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  /// Rows [begin, end).
  Dataset range(std::size_t begin, std::size_t end) const;
  /// Same structure with new images (masks, ids and seeds kept).
  Dataset with_images(Tensor images, int condition_id) const;
  std::uint64_t hash() const noexcept;
};

struct SplitCounts {
  std::size_t train = 512;
  std::size_t val = 64;
  std::size_t test = 128;
};

/// Base seeds of the jitter streams. Distinct bases give disjoint splits.
struct SplitSeeds {
  std::uint64_t train = 1001;
  std::uint64_t val = 2002;
  std::uint64_t test = 3003;
};

struct Splits {
  Dataset train, val, test;
};

/// Renders train/val/test for one condition over `route`.
///
/// Sample i of a split shows place route[i % |route|] (traversal i / |route|).
/// Val and test jitter streams are shared by every condition, so the same
/// traversals appear under each condition. Train streams are condition
/// specific and independently shuffled, so two conditions' train sets never
/// contain aligned pairs.
Splits build_split(const WorldConfig& world, std::span<const int> route, const ConditionSpec& condition,
                   const SplitCounts& counts, const SplitSeeds& seeds);

std::vector<int> default_route(const WorldConfig& world);

/// Jitter seed of sample `index` in the stream (`base`, `stream`).
std::uint64_t jitter_seed(std::uint64_t base, std::uint64_t stream, std::size_t index) noexcept;

void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace adaptkit
