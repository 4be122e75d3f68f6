#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "adaptkit/autograd.hpp"
#include "adaptkit/container.hpp"
#include "adaptkit/rng.hpp"
#include "adaptkit/worldgen.hpp"

namespace adaptkit {

struct GeneratorArch {
  std::size_t width1 = 16;
  std::size_t width2 = 32;
  int res_blocks = 2;
};

struct DiscriminatorArch {
  std::size_t width1 = 16;
  std::size_t width2 = 32;
};

ParamSet init_generator(const GeneratorArch& arch, Rng& rng);
/// Images in [0, 1] to images in [0, 1]; N×3×H×W with H, W divisible by 4.
Var generator_forward(Binder& b, const GeneratorArch& arch, Var images);

ParamSet init_discriminator(const DiscriminatorArch& arch, Rng& rng);
/// N×3×H×W to an N×1×(H/8)×(W/8) grid of realness scores.
Var discriminator_forward(Binder& b, const DiscriminatorArch& arch, Var images);

/// g_ab translates reference → condition, g_ba condition → reference.
struct GeneratorPair {
  ParamSet g_ab, g_ba;
  GeneratorArch arch;
  int condition_id = 0;
};

struct DiscriminatorPair {
  ParamSet d_a, d_b;  // d_a judges reference images, d_b condition images
  DiscriminatorArch arch;
};

struct GanModels {
  GeneratorPair gen;
  DiscriminatorPair disc;

  std::uint64_t hash() const noexcept;
};

struct GanHyper {
  double lambda_rec = 10.0;
  double lambda_adv = 1.0;
  std::size_t steps = 2000;
  std::size_t batch = 1;
  std::size_t pool_size = 50;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  /// Written as JSON when training aborts on a non-finite loss; empty to skip.
  std::filesystem::path dump_path;
};

// Least-squares adversarial losses. Scores may have any shape.

/// mean (scores − 1)²
Var generator_adversarial_loss(Var fake_scores);
/// mean (real − 1)² + mean fake²
Var discriminator_loss(Var real_scores, Var fake_scores);
/// mean |input − reconstructed|
Var cycle_loss(Var input, Var reconstructed);
/// λ_rec·rec + λ_adv·adv
Var generator_objective(Var rec, Var adv, const GanHyper& hyper);

/// History buffer of generated images fed to the discriminators. Until full
/// every query is stored and returned; afterwards each image is, with
/// probability 1/2, swapped with a random stored one.
class ImagePool {
 public:
  ImagePool(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {}
  /// Batch in, same-shaped batch out.
  Tensor query(const Tensor& images);
  std::size_t size() const noexcept { return images_.size(); }

 private:
  std::size_t capacity_;
  Rng rng_;
  std::vector<Tensor> images_;
};

struct GanLossRecord {
  std::size_t step;
  double l_gen, l_disc, l_rec, l_adv;
};

struct GanResult {
  GanModels models;
  std::vector<GanLossRecord> history;
};

GanModels init_gan(const GeneratorArch& g, const DiscriminatorArch& d, int condition_id, std::uint64_t seed);

/// Trains from fresh initialization. `ref_set` and `cond_set` are sampled in
/// independent shuffled orders. Throws NumericError (after writing the
/// diagnostic dump, if configured) when a loss becomes non-finite.
GanResult train_pair(const Tensor& ref_set, const Tensor& cond_set, const GanHyper& hyper,
                     const GeneratorArch& garch, const DiscriminatorArch& darch, int condition_id,
                     std::uint64_t seed);

/// Continues training from a given state in place.
std::vector<GanLossRecord> continue_training(GanModels& models, const Tensor& ref_set, const Tensor& cond_set,
                                             const GanHyper& hyper, std::uint64_t seed);

/// Clones `seed`, then continues training on `buffer` as the condition set.
/// `seed` itself is never modified.
GanResult finetune_pair(const GanModels& seed, const Tensor& buffer, const Tensor& ref_set, const GanHyper& hyper,
                        int new_condition_id, std::uint64_t rng_seed);

using Translator = std::function<Tensor(const Tensor&)>;

Tensor translate(const ParamSet& generator, const GeneratorArch& arch, const Tensor& images);

/// Translated images with the source masks, place ids and jitter seeds.
Dataset generate_condition_sequence(const Translator& g_ab, const Dataset& reference, int condition_id);
Dataset generate_condition_sequence(const GeneratorPair& pair, const Dataset& reference);

/// Mean |g_ab(x) − analytic(x)| over `reference`, using each sample's
/// jitter seed as the noise seed of the analytic transform.
double analytic_l1(const GeneratorPair& pair, const Dataset& reference, const ConditionSpec& spec);

void add_gan(Container& c, const GanModels& models, const std::string& prefix);
GanModels load_gan(const Container& c, const std::string& prefix);

void write_loss_csv(const std::filesystem::path& path, std::span<const GanLossRecord> history);

}  // namespace adaptkit
