#include "adaptkit/gan.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "adaptkit/adam.hpp"
#include "adaptkit/errors.hpp"
#include "adaptkit/nn.hpp"
#include "adaptkit/ops.hpp"

namespace adaptkit {

namespace {

constexpr std::size_t kInferBatch = 32;

std::string res_name(int block, int conv) { return "res" + std::to_string(block) + "." + std::to_string(conv); }

}  // namespace

ParamSet init_generator(const GeneratorArch& arch, Rng& rng) {
  ParamSet p;
  nn::add_conv(p, "down1", 3, arch.width1, 4, rng);
  nn::add_norm(p, "down1.n", arch.width1);
  nn::add_conv(p, "down2", arch.width1, arch.width2, 4, rng);
  nn::add_norm(p, "down2.n", arch.width2);
  for (int r = 0; r < arch.res_blocks; ++r) {
    for (int c = 0; c < 2; ++c) {
      nn::add_conv(p, res_name(r, c), arch.width2, arch.width2, 3, rng);
      nn::add_norm(p, res_name(r, c) + ".n", arch.width2);
    }
  }
  nn::add_conv_transpose(p, "up1", arch.width2, arch.width1, 4, rng);
  nn::add_norm(p, "up1.n", arch.width1);
  nn::add_conv_transpose(p, "up2", arch.width1, 3, 4, rng);
  return p;
}

Var generator_forward(Binder& b, const GeneratorArch& arch, Var images) {
  Var x = ops::affine(images, 2.0f, -1.0f);
  x = ops::relu(nn::norm(b, "down1.n", nn::conv(b, "down1", x, 2, 1)));
  x = ops::relu(nn::norm(b, "down2.n", nn::conv(b, "down2", x, 2, 1)));
  for (int r = 0; r < arch.res_blocks; ++r) {
    Var h = ops::relu(nn::norm(b, res_name(r, 0) + ".n", nn::conv(b, res_name(r, 0), x, 1, 1)));
    h = nn::norm(b, res_name(r, 1) + ".n", nn::conv(b, res_name(r, 1), h, 1, 1));
    x = ops::add(x, h);
  }
  x = ops::relu(nn::norm(b, "up1.n", nn::conv_transpose(b, "up1", x, 2, 1)));
  x = ops::tanh(nn::conv_transpose(b, "up2", x, 2, 1));
  return ops::affine(x, 0.5f, 0.5f);
}

ParamSet init_discriminator(const DiscriminatorArch& arch, Rng& rng) {
  ParamSet p;
  nn::add_conv(p, "c1", 3, arch.width1, 4, rng);
  nn::add_conv(p, "c2", arch.width1, arch.width2, 4, rng);
  nn::add_conv(p, "c3", arch.width2, 1, 4, rng);
  return p;
}

Var discriminator_forward(Binder& b, const DiscriminatorArch&, Var images) {
  Var x = ops::affine(images, 2.0f, -1.0f);
  x = ops::leaky_relu(nn::conv(b, "c1", x, 2, 1));
  x = ops::leaky_relu(nn::conv(b, "c2", x, 2, 1));
  return nn::conv(b, "c3", x, 2, 1);
}

std::uint64_t GanModels::hash() const noexcept {
  std::uint64_t h = gen.g_ab.hash();
  for (const ParamSet* p : {&gen.g_ba, &disc.d_a, &disc.d_b}) h = mix64(h ^ p->hash());
  return h;
}

Var generator_adversarial_loss(Var fake_scores) { return ops::squared_error(fake_scores, 1.0f); }

Var discriminator_loss(Var real_scores, Var fake_scores) {
  return ops::add(ops::squared_error(real_scores, 1.0f), ops::squared_error(fake_scores, 0.0f));
}

Var cycle_loss(Var input, Var reconstructed) { return ops::l1_loss(reconstructed, input); }

Var generator_objective(Var rec, Var adv, const GanHyper& hyper) {
  if (hyper.lambda_rec < 0 || hyper.lambda_adv < 0) throw ContractViolation("GAN loss weights must be non-negative");
  return ops::add(ops::scale(rec, static_cast<float>(hyper.lambda_rec)),
                  ops::scale(adv, static_cast<float>(hyper.lambda_adv)));
}

Tensor ImagePool::query(const Tensor& images) {
  if (capacity_ == 0) return images;
  std::vector<Tensor> out;
  for (std::size_t n = 0; n < images.dim(0); ++n) {
    Tensor img = images.slice_batch(n);
    if (images_.size() < capacity_) {
      images_.push_back(img);
      out.push_back(std::move(img));
    } else if (rng_.uniform() < 0.5) {
      const auto j = static_cast<std::size_t>(rng_.below(images_.size()));
      out.push_back(images_[j]);
      images_[j] = std::move(img);
    } else {
      out.push_back(std::move(img));
    }
  }
  Tensor batch = Tensor::stack(out);
  return batch.reshaped(images.shape());
}

GanModels init_gan(const GeneratorArch& g, const DiscriminatorArch& d, int condition_id, std::uint64_t seed) {
  Rng rng(seed);
  GanModels m;
  Rng r0 = rng.split(0), r1 = rng.split(1), r2 = rng.split(2), r3 = rng.split(3);
  m.gen.g_ab = init_generator(g, r0);
  m.gen.g_ba = init_generator(g, r1);
  m.gen.arch = g;
  m.gen.condition_id = condition_id;
  m.disc.d_a = init_discriminator(d, r2);
  m.disc.d_b = init_discriminator(d, r3);
  m.disc.arch = d;
  return m;
}

namespace {

/// Cycles through a set in freshly shuffled order on every pass.
class Sampler {
 public:
  Sampler(std::size_t n, Rng rng) : n_(n), rng_(rng) {}
  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    while (out.size() < batch) {
      if (pos_ == order_.size()) {
        order_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::size_t n_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

double max_abs(const ParamSet& p) {
  double m = 0.0;
  for (const auto& param : p) {
    for (float v : param.value.data()) m = std::max(m, static_cast<double>(std::fabs(v)));
  }
  return m;
}

[[noreturn]] void abort_with_dump(const GanHyper& hyper, const GanModels& m, std::size_t step,
                                  const std::vector<GanLossRecord>& history, const std::string& what) {
  nlohmann::json dump = {{"step", step},
                         {"error", what},
                         {"condition_id", m.gen.condition_id},
                         {"max_abs", {{"g_ab", max_abs(m.gen.g_ab)},
                                      {"g_ba", max_abs(m.gen.g_ba)},
                                      {"d_a", max_abs(m.disc.d_a)},
                                      {"d_b", max_abs(m.disc.d_b)}}}};
  nlohmann::json tail = nlohmann::json::array();
  for (std::size_t i = history.size() > 10 ? history.size() - 10 : 0; i < history.size(); ++i) {
    const auto& r = history[i];
    tail.push_back({r.step, r.l_gen, r.l_disc, r.l_rec, r.l_adv});
  }
  dump["recent_losses"] = tail;
  if (!hyper.dump_path.empty()) write_text_atomic(hyper.dump_path, dump.dump(2));
  throw NumericError("GAN training diverged: " + dump.dump());
}

}  // namespace

std::vector<GanLossRecord> continue_training(GanModels& m, const Tensor& ref_set, const Tensor& cond_set,
                                             const GanHyper& hyper, std::uint64_t seed) {
  if (ref_set.rank() != 4 || cond_set.rank() != 4 || ref_set.dim(0) == 0 || cond_set.dim(0) == 0) {
    throw ContractViolation("GAN training needs non-empty N×3×H×W reference and condition sets");
  }
  if (hyper.batch == 0) throw ContractViolation("GAN batch size must be positive");
  const AdamHyper ah{hyper.lr, hyper.beta1, hyper.beta2, 1e-8};
  Adam opt_gab(ah), opt_gba(ah), opt_da(ah), opt_db(ah);
  Rng rng(seed);
  Sampler ref_sampler(ref_set.dim(0), rng.split(1)), cond_sampler(cond_set.dim(0), rng.split(2));
  ImagePool pool_a(hyper.pool_size, rng.split(3).next_u64()), pool_b(hyper.pool_size, rng.split(4).next_u64());
  const GeneratorArch& ga = m.gen.arch;
  const DiscriminatorArch& da = m.disc.arch;

  std::vector<GanLossRecord> history;
  history.reserve(hyper.steps);
  for (std::size_t step = 0; step < hyper.steps; ++step) {
    const Tensor real_a = ref_set.gather_batch(ref_sampler.next(hyper.batch));
    const Tensor real_b = cond_set.gather_batch(cond_sampler.next(hyper.batch));
    GanLossRecord rec{step, 0, 0, 0, 0};
    try {
      Tensor fake_a, fake_b;
      {
        Tape tape;
        Binder gab(tape, m.gen.g_ab, true), gba(tape, m.gen.g_ba, true);
        Binder dA(tape, m.disc.d_a), dB(tape, m.disc.d_b);
        Var a = tape.constant(real_a), b = tape.constant(real_b);
        Var fb = generator_forward(gab, ga, a);
        Var ra = generator_forward(gba, ga, fb);
        Var fa = generator_forward(gba, ga, b);
        Var rb = generator_forward(gab, ga, fa);
        Var l_adv = ops::add(generator_adversarial_loss(discriminator_forward(dB, da, fb)),
                             generator_adversarial_loss(discriminator_forward(dA, da, fa)));
        Var l_rec = ops::add(cycle_loss(a, ra), cycle_loss(b, rb));
        Var l_gen = generator_objective(l_rec, l_adv, hyper);
        rec.l_adv = l_adv.value().item();
        rec.l_rec = l_rec.value().item();
        rec.l_gen = l_gen.value().item();
        fake_a = fa.value();
        fake_b = fb.value();
        m.gen.g_ab.zero_grad();
        m.gen.g_ba.zero_grad();
        tape.backward(l_gen);
        opt_gab.step(m.gen.g_ab);
        opt_gba.step(m.gen.g_ba);
      }
      {
        Tape tape;
        Binder dA(tape, m.disc.d_a, true), dB(tape, m.disc.d_b, true);
        Var l_da = discriminator_loss(discriminator_forward(dA, da, tape.constant(real_a)),
                                      discriminator_forward(dA, da, tape.constant(pool_a.query(fake_a))));
        Var l_db = discriminator_loss(discriminator_forward(dB, da, tape.constant(real_b)),
                                      discriminator_forward(dB, da, tape.constant(pool_b.query(fake_b))));
        Var l_disc = ops::add(l_da, l_db);
        rec.l_disc = l_disc.value().item();
        m.disc.d_a.zero_grad();
        m.disc.d_b.zero_grad();
        tape.backward(l_disc);
        opt_da.step(m.disc.d_a);
        opt_db.step(m.disc.d_b);
      }
    } catch (const NumericError& e) {
      abort_with_dump(hyper, m, step, history, e.what());
    }
    if (!std::isfinite(rec.l_gen) || !std::isfinite(rec.l_disc)) {
      abort_with_dump(hyper, m, step, history, "non-finite loss");
    }
    history.push_back(rec);
  }
  return history;
}

GanResult train_pair(const Tensor& ref_set, const Tensor& cond_set, const GanHyper& hyper,
                     const GeneratorArch& garch, const DiscriminatorArch& darch, int condition_id,
                     std::uint64_t seed) {
  GanResult r;
  r.models = init_gan(garch, darch, condition_id, Rng(seed).split(100).next_u64());
  r.history = continue_training(r.models, ref_set, cond_set, hyper, seed);
  return r;
}

GanResult finetune_pair(const GanModels& seed, const Tensor& buffer, const Tensor& ref_set, const GanHyper& hyper,
                        int new_condition_id, std::uint64_t rng_seed) {
  if (buffer.rank() != 4 || buffer.dim(0) == 0) throw ContractViolation("finetune_pair needs a non-empty buffer");
  GanResult r;
  r.models = seed;
  r.models.gen.condition_id = new_condition_id;
  r.history = continue_training(r.models, ref_set, buffer, hyper, rng_seed);
  return r;
}

Tensor translate(const ParamSet& generator, const GeneratorArch& arch, const Tensor& images) {
  return nn::infer(generator, images, kInferBatch, [&](Binder& b, Var x) { return generator_forward(b, arch, x); });
}

Dataset generate_condition_sequence(const Translator& g_ab, const Dataset& reference, int condition_id) {
  Tensor out = g_ab(reference.images);
  return reference.with_images(std::move(out), condition_id);
}

Dataset generate_condition_sequence(const GeneratorPair& pair, const Dataset& reference) {
  return generate_condition_sequence([&](const Tensor& x) { return translate(pair.g_ab, pair.arch, x); }, reference,
                                     pair.condition_id);
}

double analytic_l1(const GeneratorPair& pair, const Dataset& reference, const ConditionSpec& spec) {
  const Tensor fake = translate(pair.g_ab, pair.arch, reference.images);
  const Tensor truth = apply_condition(reference.images, spec, reference.jitter_seeds);
  double acc = 0.0;
  for (std::size_t i = 0; i < fake.numel(); ++i) acc += std::fabs(static_cast<double>(fake[i]) - truth[i]);
  return acc / static_cast<double>(fake.numel());
}

void add_gan(Container& c, const GanModels& m, const std::string& prefix) {
  c.add_params(m.gen.g_ab, prefix + "g_ab/");
  c.add_params(m.gen.g_ba, prefix + "g_ba/");
  c.add_params(m.disc.d_a, prefix + "d_a/");
  c.add_params(m.disc.d_b, prefix + "d_b/");
  c.attributes()[prefix + "gan"] = {{"g_width1", m.gen.arch.width1},
                                    {"g_width2", m.gen.arch.width2},
                                    {"g_res_blocks", m.gen.arch.res_blocks},
                                    {"d_width1", m.disc.arch.width1},
                                    {"d_width2", m.disc.arch.width2},
                                    {"condition_id", m.gen.condition_id}};
}

GanModels load_gan(const Container& c, const std::string& prefix) {
  GanModels m;
  try {
    const auto& a = c.attributes().at(prefix + "gan");
    m.gen.arch = {a.at("g_width1").get<std::size_t>(), a.at("g_width2").get<std::size_t>(),
                  a.at("g_res_blocks").get<int>()};
    m.disc.arch = {a.at("d_width1").get<std::size_t>(), a.at("d_width2").get<std::size_t>()};
    m.gen.condition_id = a.at("condition_id").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("missing GAN attributes: ") + e.what());
  }
  m.gen.g_ab = c.params(prefix + "g_ab/");
  m.gen.g_ba = c.params(prefix + "g_ba/");
  m.disc.d_a = c.params(prefix + "d_a/");
  m.disc.d_b = c.params(prefix + "d_b/");
  if (m.gen.g_ab.empty() || m.gen.g_ba.empty() || m.disc.d_a.empty() || m.disc.d_b.empty()) {
    throw CorruptCheckpointError("container lacks GAN parameters under '" + prefix + "'");
  }
  return m;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const GanLossRecord> history) {
  std::ostringstream os;
  os << "step,l_gen,l_disc,l_rec,l_adv\n";
  os.precision(9);
  for (const auto& r : history) os << r.step << ',' << r.l_gen << ',' << r.l_disc << ',' << r.l_rec << ',' << r.l_adv << '\n';
  write_text_atomic(path, os.str());
}

}  // namespace adaptkit
