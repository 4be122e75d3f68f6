#include "adaptkit/orchestrator.hpp"

#include <fstream>

#include "adaptkit/errors.hpp"

namespace adaptkit {

FrameBuffer::FrameBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("frame buffer capacity must be positive");
}

void FrameBuffer::push(const Tensor& frame) {
  Tensor f = frame;
  if (f.rank() == 4 && f.dim(0) == 1) f = f.reshaped({f.dim(1), f.dim(2), f.dim(3)});
  if (f.rank() != 3 || f.dim(0) != 3) throw DimensionError("frame must be 3×H×W");
  if (!frames_.empty() && frames_.front().shape() != f.shape()) throw DimensionError("frame size changed mid-stream");
  if (frames_.size() == capacity_) frames_.pop_front();
  frames_.push_back(std::move(f));
}

Tensor FrameBuffer::stacked() const {
  if (frames_.empty()) throw ContractViolation("empty frame buffer");
  return Tensor::stack(std::vector<Tensor>(frames_.begin(), frames_.end()));
}

void NoveltyPolicy::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("novelty threshold must be positive and finite");
  if (min_fill == 0) throw ConfigError("novelty minimum fill must be positive");
  if (confirmations == 0) throw ConfigError("novelty confirmations must be positive");
}

NoveltyResult novelty_from_descriptor(std::span<const float> d, const ParameterMemory& memory,
                                      const NoveltyPolicy& policy) {
  const MemoryMatch m = memory.query_by_descriptor(d);
  return {m.distance > policy.tau, m.record->id, m.distance};
}

NoveltyResult detect_novelty(const ConditionClassifier& classifier, const ParameterMemory& memory,
                             const FrameBuffer& buffer, const NoveltyPolicy& policy) {
  if (buffer.size() < policy.min_fill) {
    throw ContractViolation("novelty test needs " + std::to_string(policy.min_fill) + " frames, buffer holds " +
                            std::to_string(buffer.size()));
  }
  return novelty_from_descriptor(average_descriptor(classifier, buffer.stacked()), memory, policy);
}

RecordPtr select_adapter(const ConditionClassifier& classifier, const ParameterMemory& memory, const Tensor& frame) {
  Tensor x = frame;
  if (x.rank() == 3) x = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.rank() != 4 || x.dim(0) != 1) throw DimensionError("select_adapter takes one frame");
  const int k = predict(classifier, x)[0];
  const auto records = memory.records();
  const bool any_online = std::any_of(records.begin(), records.end(),
                                      [](const RecordPtr& r) { return r->provenance.origin == RecordOrigin::online; });
  if (any_online) {
    const MemoryMatch m = memory.query_by_descriptor(average_descriptor(classifier, x));
    if (m.record->provenance.origin == RecordOrigin::online) return m.record;
  }
  return memory.query_by_index(k);
}

std::string to_string(OnlinePhase phase) {
  switch (phase) {
    case OnlinePhase::monitoring:
      return "monitoring";
    case OnlinePhase::adapting:
      return "adapting";
    case OnlinePhase::ready:
      return "ready";
  }
  return "unknown";
}

std::uint64_t EventLog::append(OnlinePhase phase, std::string event, nlohmann::json details) {
  std::lock_guard lock(mutex_);
  const std::uint64_t t = events_.size();
  events_.push_back({t, phase, std::move(event), std::move(details)});
  return t;
}

std::vector<OnlineEvent> EventLog::events() const {
  std::lock_guard lock(mutex_);
  return events_;
}

std::uint64_t EventLog::clock() const {
  std::lock_guard lock(mutex_);
  return events_.size();
}

void EventLog::write_jsonl(const std::filesystem::path& path) const {
  std::string out;
  for (const auto& e : events()) {
    nlohmann::json j = {{"timestamp", e.timestamp}, {"state", to_string(e.phase)}, {"event", e.event}};
    j.update(e.details);
    out += j.dump() + "\n";
  }
  write_text_atomic(path, out);
}

OnlineOutcome run_online_adaptation(const Tensor& buffer, ParameterMemory& memory, const OnlineContext& ctx,
                                    const OnlineConfig& cfg, std::uint64_t timestamp) {
  ctx.tasks.verify();
  if (buffer.rank() != 4 || buffer.dim(0) == 0) throw ContractViolation("online adaptation needs a non-empty buffer");
  const std::vector<float> d = average_descriptor(ctx.classifier, buffer);
  const int new_id = memory.next_id(cfg.id_floor);

  const MemoryMatch gan_parent =
      memory.query_by_descriptor(d, [](const AdapterRecord& r) { return r.generators.has_value(); });
  Rng rng(cfg.seed);
  GanResult gan = finetune_pair(*gan_parent.record->generators, buffer, ctx.reference_train.images, cfg.gan, new_id,
                                rng.split(1).next_u64());

  const Dataset generated = generate_condition_sequence(gan.models.gen, ctx.reference_train);
  const Dataset generated_val = generate_condition_sequence(gan.models.gen, ctx.reference_val);

  const MemoryMatch adapter_parent = memory.query_by_descriptor(d);
  AdapterTrainConfig acfg = cfg.adapter;
  acfg.seed = rng.split(2).next_u64();
  AdapterTrainResult trained = train_adapter(new_id, generated, ctx.gt_train, generated_val, ctx.gt_val,
                                             adapter_parent.record->adapter, ctx.tasks, cfg.weighting, acfg);
  ctx.tasks.verify();

  AdapterRecord rec;
  rec.id = new_id;
  rec.name = "online_" + std::to_string(new_id);
  rec.descriptor = d;
  rec.adapter = trained.adapter;
  rec.generators = std::move(gan.models);
  rec.provenance = {RecordOrigin::online, adapter_parent.record->id, timestamp};
  memory.store(std::move(rec));
  return {memory.query_by_index(new_id), gan_parent.record->id, adapter_parent.record->id, std::move(trained)};
}

Orchestrator::Orchestrator(const ConditionClassifier& classifier, ParameterMemory& memory, NoveltyPolicy policy,
                           std::size_t buffer_capacity)
    : classifier_(classifier), memory_(memory), policy_(policy), buffer_(buffer_capacity) {
  policy_.validate();
  if (policy_.min_fill > buffer_capacity) throw ConfigError("novelty minimum fill exceeds the buffer capacity");
}

FrameResult Orchestrator::process(const Tensor& frame) {
  Tensor x = frame;
  if (x.rank() == 3) x = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  FrameResult out;
  const RecordPtr rec = select_adapter(classifier_, memory_, x);
  out.record_id = rec->id;
  out.adapted = adapt(rec->adapter, x);

  std::optional<FrameBuffer> snapshot;
  OnlinePhase phase;
  {
    std::lock_guard lock(mutex_);
    buffer_.push(x);
    phase = phase_;
    if (phase_ == OnlinePhase::monitoring && buffer_.size() >= policy_.min_fill) snapshot = buffer_;
  }
  nlohmann::json details = {{"chosen_id", rec->id}};
  if (snapshot) {
    out.novelty = adaptkit::detect_novelty(classifier_, memory_, *snapshot, policy_);
    details["nearest_id"] = out.novelty->nearest_id;
    details["distance"] = out.novelty->distance;
    details["tau"] = policy_.tau;
    details["novel"] = out.novelty->novel;
    std::lock_guard lock(mutex_);
    novel_streak_ = out.novelty->novel ? novel_streak_ + 1 : 0;
    out.request_episode = novel_streak_ >= policy_.confirmations;
    if (out.request_episode) details["request_episode"] = true;
  }
  log_.append(phase, "frame", std::move(details));
  return out;
}

NoveltyResult Orchestrator::detect_novelty() const {
  FrameBuffer snapshot(buffer_.capacity());
  {
    std::lock_guard lock(mutex_);
    snapshot = buffer_;
  }
  return adaptkit::detect_novelty(classifier_, memory_, snapshot, policy_);
}

OnlineOutcome Orchestrator::adapt_online(const OnlineContext& ctx, const OnlineConfig& cfg) {
  Tensor frames;
  {
    std::lock_guard lock(mutex_);
    if (phase_ != OnlinePhase::monitoring) throw ContractViolation("an online episode is already running");
    frames = buffer_.stacked();
    phase_ = OnlinePhase::adapting;
  }
  const std::uint64_t start = log_.append(OnlinePhase::adapting, "episode_start",
                                          {{"new_id", memory_.next_id(cfg.id_floor)}, {"frames", frames.dim(0)}});
  try {
    OnlineOutcome out = run_online_adaptation(frames, memory_, ctx, cfg, start);
    {
      std::lock_guard lock(mutex_);
      phase_ = OnlinePhase::ready;
    }
    log_.append(OnlinePhase::ready, "record_published",
                {{"new_id", out.record->id},
                 {"gan_parent", out.gan_parent},
                 {"adapter_parent", out.adapter_parent},
                 {"best_epoch", out.training.best_epoch}});
    {
      std::lock_guard lock(mutex_);
      phase_ = OnlinePhase::monitoring;
      novel_streak_ = 0;
    }
    log_.append(OnlinePhase::monitoring, "episode_end", {{"new_id", out.record->id}});
    return out;
  } catch (const std::exception& e) {
    {
      std::lock_guard lock(mutex_);
      phase_ = OnlinePhase::monitoring;
    }
    log_.append(OnlinePhase::monitoring, "rollback", {{"error", e.what()}});
    throw;
  }
}

OnlinePhase Orchestrator::phase() const {
  std::lock_guard lock(mutex_);
  return phase_;
}

Tensor Orchestrator::buffer_snapshot() const {
  std::lock_guard lock(mutex_);
  return buffer_.stacked();
}

std::size_t Orchestrator::buffer_size() const {
  std::lock_guard lock(mutex_);
  return buffer_.size();
}

}  // namespace adaptkit
