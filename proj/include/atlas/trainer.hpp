#pragma once

// Deterministic finetuning from a shared pretrained body.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlas/checkpoint.hpp"
#include "atlas/error.hpp"
#include "atlas/model.hpp"
#include "atlas/param_space.hpp"
#include "atlas/rng.hpp"
#include "atlas/tasks.hpp"

namespace atlas {

enum class OptimizerKind { sgd, adamw };
enum class TrainMode { full, lp_ft };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adamw;
  double base_lr = 1e-3;
  double warmup_fraction = 0.10;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
  std::size_t epochs = 3;
  TrainMode mode = TrainMode::full;
  std::size_t lp_head_steps = 0;
  // Absolute step counts. Empty means {1/3, 2/3, 1} of the total.
  std::vector<std::size_t> checkpoint_stages;
  std::size_t eval_sample_size = 512;
  std::uint64_t eval_seed = 0;
  // Pretraining of the shared body runs on a held-out sample of the ID mixture.
  std::size_t pretrain_examples = 4000;
  std::size_t pretrain_epochs = 1;

  void validate() const {
    require(base_lr > 0.0, "train config: base_lr must be > 0");
    require(warmup_fraction >= 0.0 && warmup_fraction < 1.0, "train config: warmup_fraction must lie in [0,1)");
    require(batch_size >= 1, "train config: batch_size must be >= 1");
    require(weight_decay >= 0.0, "train config: weight_decay must be >= 0");
    require(std::is_sorted(checkpoint_stages.begin(), checkpoint_stages.end()),
            "train config: checkpoint_stages must be ascending");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"optimizer", c.optimizer == OptimizerKind::adamw ? "adamw" : "sgd"},
          {"base_lr", c.base_lr},
          {"warmup_fraction", c.warmup_fraction},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"mode", c.mode == TrainMode::full ? "full" : "lp_ft"},
          {"lp_head_steps", c.lp_head_steps},
          {"checkpoint_stages", c.checkpoint_stages},
          {"eval_sample_size", c.eval_sample_size},
          {"eval_seed", c.eval_seed},
          {"pretrain_examples", c.pretrain_examples},
          {"pretrain_epochs", c.pretrain_epochs}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  const auto opt = j.value("optimizer", std::string("adamw"));
  require(opt == "adamw" || opt == "sgd", "train config: optimizer must be adamw|sgd");
  c.optimizer = opt == "adamw" ? OptimizerKind::adamw : OptimizerKind::sgd;
  c.base_lr = j.value("base_lr", c.base_lr);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  const auto mode = j.value("mode", std::string("full"));
  require(mode == "full" || mode == "lp_ft", "train config: mode must be full|lp_ft");
  c.mode = mode == "full" ? TrainMode::full : TrainMode::lp_ft;
  c.lp_head_steps = j.value("lp_head_steps", c.lp_head_steps);
  c.checkpoint_stages = j.value("checkpoint_stages", c.checkpoint_stages);
  c.eval_sample_size = j.value("eval_sample_size", c.eval_sample_size);
  c.eval_seed = j.value("eval_seed", c.eval_seed);
  c.pretrain_examples = j.value("pretrain_examples", c.pretrain_examples);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  c.validate();
  return c;
}

inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) h = (h ^ ch) * 0x100000001b3ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Linear warmup from 0 to base_lr over warmup_fraction * total_steps, then linear decay to 0.
inline double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& c) {
  require(step <= total_steps, "lr_at: step beyond total_steps");
  if (total_steps == 0) return 0.0;
  const double s = static_cast<double>(step);
  const double total = static_cast<double>(total_steps);
  const double warmup = c.warmup_fraction * total;
  if (s < warmup) return c.base_lr * s / warmup;
  if (total <= warmup) return c.base_lr;
  return c.base_lr * (total - s) / (total - warmup);
}

// ---------------------------------------------------------------------------
// Evaluation on a fixed random sample

/// Loss/accuracy of any parameter vector on one fixed sample of a split. The
/// sample depends only on (split size, n_samples, eval_seed), so every model
/// evaluated through the same evaluator sees identical examples.
class Evaluator {
 public:
  Evaluator(ModelConfig config, const DatasetSplit& split, std::size_t n_samples, std::uint64_t eval_seed,
            std::optional<std::vector<int>> collapse_mapping = std::nullopt)
      : config_(config), collapse_(std::move(collapse_mapping)), split_id_(split.split_id),
        n_samples_(n_samples), eval_seed_(eval_seed) {
    if (n_samples > split.size())
      throw ValidationError("evaluate: n_samples " + std::to_string(n_samples) + " exceeds split size " +
                            std::to_string(split.size()));
    Rng rng(derive_seed(eval_seed, tag_of("eval.sample")));
    indices_ = sample_without_replacement(split.size(), n_samples, rng);
    std::vector<Example> picked;
    picked.reserve(indices_.size());
    for (auto i : indices_) picked.push_back(split.examples[i]);
    batch_ = to_batch(picked, config_.max_len);
  }

  LossAcc operator()(const ParamVector& params) const {
    auto logits = forward(params, batch_, config_);
    if (collapse_) logits = collapse_logits(logits, *collapse_);
    return loss_acc(logits, batch_.labels);
  }

  const Batch& batch() const { return batch_; }
  const ModelConfig& config() const { return config_; }
  const std::vector<std::size_t>& indices() const { return indices_; }
  SplitId split_id() const { return split_id_; }
  std::size_t n_samples() const { return n_samples_; }
  std::uint64_t eval_seed() const { return eval_seed_; }

 private:
  ModelConfig config_;
  std::optional<std::vector<int>> collapse_;
  SplitId split_id_;
  std::size_t n_samples_;
  std::uint64_t eval_seed_;
  std::vector<std::size_t> indices_;
  Batch batch_;
};

inline LossAcc evaluate(const ParamVector& params, const ModelConfig& config, const DatasetSplit& split,
                        std::size_t n_samples, std::uint64_t eval_seed,
                        std::optional<std::vector<int>> collapse_mapping = std::nullopt) {
  return Evaluator(config, split, n_samples, eval_seed, std::move(collapse_mapping))(params);
}

// ---------------------------------------------------------------------------
// Optimizers

class TrainingDiverged : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

/// SGD or AdamW with decoupled weight decay, restricted to a coordinate mask.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::size_t n, double weight_decay, std::vector<bool> trainable)
      : kind_(kind), wd_(weight_decay), trainable_(std::move(trainable)) {
    if (kind_ == OptimizerKind::adamw) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
    }
  }

  void step(ParamVector& params, const ParamVector& grad, double lr) {
    ++t_;
    auto p = params.values();
    auto g = grad.values();
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < p.size(); ++i)
        if (trainable_[i]) p[i] -= lr * (g[i] + wd_ * p[i]);
      return;
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!trainable_[i]) continue;
      m_[i] = beta1 * m_[i] + (1.0 - beta1) * g[i];
      v_[i] = beta2 * v_[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd_ * p[i]);
    }
  }

  std::string digest() const {
    std::string bytes;
    for (double x : m_) bytes.append(reinterpret_cast<const char*>(&x), sizeof x);
    for (double x : v_) bytes.append(reinterpret_cast<const char*>(&x), sizeof x);
    bytes.append(reinterpret_cast<const char*>(&t_), sizeof t_);
    return fnv1a_hex(bytes);
  }

 private:
  OptimizerKind kind_;
  double wd_;
  std::vector<bool> trainable_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop

struct LoopReport {
  std::vector<double> epoch_losses;
  std::size_t steps = 0;
};

namespace detail {

inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

// Runs `total_steps` minibatch updates over `data`, reshuffling each epoch with a
// data_seed-keyed permutation. `on_step(step_done, optimizer)` fires after each update.
template <class OnStep>
LoopReport run_loop(ParamVector& params, const Batch& data, const ModelConfig& mc, const TrainConfig& tc,
                    std::uint64_t data_seed, std::uint64_t stream_tag, std::size_t total_steps,
                    std::vector<bool> trainable, OnStep&& on_step) {
  LoopReport report;
  if (total_steps == 0 || data.rows == 0) return report;
  Optimizer opt(tc.optimizer, params.size(), tc.weight_decay, std::move(trainable));
  ParamVector grad(params.manifest_ptr());
  const std::size_t per_epoch = steps_per_epoch(data.rows, tc.batch_size);
  std::vector<std::size_t> order;
  double epoch_sum = 0.0;
  std::size_t epoch_batches = 0;
  for (std::size_t step = 0; step < total_steps; ++step) {
    const std::size_t epoch = step / per_epoch;
    const std::size_t in_epoch = step % per_epoch;
    if (in_epoch == 0) {
      Rng rng(derive_seed(derive_seed(data_seed, stream_tag), epoch));
      order = permutation(data.rows, rng);
    }
    const std::size_t begin = in_epoch * tc.batch_size;
    const std::size_t end = std::min(begin + tc.batch_size, data.rows);
    const Batch mb = data.select(std::span<const std::size_t>(order).subspan(begin, end - begin));
    const double loss = loss_and_gradient(params, mb, mc, grad);
    if (!std::isfinite(loss))
      throw TrainingDiverged("training diverged: non-finite loss at step " + std::to_string(step));
    opt.step(params, grad, lr_at(step, total_steps, tc));
    epoch_sum += loss;
    ++epoch_batches;
    if (in_epoch + 1 == per_epoch || step + 1 == total_steps) {
      report.epoch_losses.push_back(epoch_sum / static_cast<double>(epoch_batches));
      epoch_sum = 0.0;
      epoch_batches = 0;
    }
    ++report.steps;
    on_step(step + 1, opt);
  }
  if (!params.all_finite()) throw TrainingDiverged("training diverged: non-finite parameters");
  return report;
}

}  // namespace detail

inline void validate_compat(const ModelConfig& mc, const TaskSpec& task) {
  mc.validate();
  task.validate();
  require(mc.max_len >= task.premise_len + task.hypothesis_len + 1,
          "model config: max_len must be >= premise_len + hypothesis_len + 1");
  require(mc.vocab_size >= task.vocab_size, "model config: vocab_size smaller than the task vocabulary");
  require(mc.n_classes >= 2, "model config: binary task needs n_classes >= 2");
}

/// Trains the whole model on a held-out sample of the ID mixture and returns the
/// checkpoint whose body tensors every finetuning run starts from.
inline Checkpoint pretrain_body(const ModelConfig& mc, const TrainConfig& tc, const TaskSpec& task,
                                std::uint64_t body_seed) {
  validate_compat(mc, task);
  tc.validate();
  ParamVector params = init_params(mc, body_seed, derive_seed(body_seed, tag_of("pretrain.head")));
  Checkpoint ckpt;
  ckpt.meta.run_id = "pretrain-" + std::to_string(body_seed);
  ckpt.meta.body_seed = body_seed;
  ckpt.meta.task_id = fnv1a_hex(to_json(task).dump());
  ckpt.model = to_json(mc);
  std::size_t steps = 0;
  std::string digest = "none";
  if (tc.pretrain_examples > 0 && tc.pretrain_epochs > 0) {
    TaskSpec held_out = task;
    held_out.train_size = tc.pretrain_examples;
    const auto data = gen_split(held_out, SplitId::train, derive_seed(task.seed, tag_of("pretrain.data")));
    const Batch batch = to_batch(data, mc.max_len);
    steps = tc.pretrain_epochs * detail::steps_per_epoch(batch.rows, tc.batch_size);
    detail::run_loop(params, batch, mc, tc, body_seed, tag_of("pretrain"), steps,
                     std::vector<bool>(params.size(), true),
                     [&](std::size_t done, const Optimizer& opt) {
                       if (done == steps) digest = opt.digest();
                     });
  }
  ckpt.meta.step = steps;
  ckpt.meta.optimizer_digest = digest;
  ckpt.params = std::move(params);
  return ckpt;
}

struct RunMetrics {
  double id_loss = 0.0;
  double id_accuracy = 0.0;
  double diagnostic_loss = 0.0;
  double diagnostic_accuracy = 0.0;
};

struct RunRecord {
  std::string run_id;
  std::uint64_t body_seed = 0;
  std::uint64_t head_seed = 0;
  std::uint64_t data_seed = 0;
  std::string config_digest;
  std::string fixture;  // "", "heuristic" or "generalizing"
  std::vector<std::size_t> stages;
  std::vector<std::string> checkpoint_paths;
  std::vector<double> epoch_losses;
  std::optional<RunMetrics> metrics;
  bool failed = false;
  std::string failure;
};

inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json j = {{"run_id", r.run_id},
                      {"body_seed", r.body_seed},
                      {"head_seed", r.head_seed},
                      {"data_seed", r.data_seed},
                      {"config_digest", r.config_digest},
                      {"fixture", r.fixture},
                      {"stages", r.stages},
                      {"checkpoint_paths", r.checkpoint_paths},
                      {"epoch_losses", r.epoch_losses},
                      {"failed", r.failed},
                      {"failure", r.failure}};
  if (r.metrics)
    j["metrics"] = {{"id_loss", r.metrics->id_loss},
                    {"id_accuracy", r.metrics->id_accuracy},
                    {"diagnostic_loss", r.metrics->diagnostic_loss},
                    {"diagnostic_accuracy", r.metrics->diagnostic_accuracy}};
  else
    j["metrics"] = nullptr;
  return j;
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.body_seed = j.at("body_seed").get<std::uint64_t>();
  r.head_seed = j.at("head_seed").get<std::uint64_t>();
  r.data_seed = j.at("data_seed").get<std::uint64_t>();
  r.config_digest = j.at("config_digest").get<std::string>();
  r.fixture = j.value("fixture", std::string());
  r.stages = j.at("stages").get<std::vector<std::size_t>>();
  r.checkpoint_paths = j.at("checkpoint_paths").get<std::vector<std::string>>();
  r.epoch_losses = j.value("epoch_losses", std::vector<double>{});
  r.failed = j.value("failed", false);
  r.failure = j.value("failure", std::string());
  if (j.contains("metrics") && !j.at("metrics").is_null()) {
    const auto& m = j.at("metrics");
    r.metrics = RunMetrics{m.at("id_loss").get<double>(), m.at("id_accuracy").get<double>(),
                           m.at("diagnostic_loss").get<double>(), m.at("diagnostic_accuracy").get<double>()};
  }
  return r;
}

struct FinetuneResult {
  RunRecord record;
  std::vector<Checkpoint> checkpoints;  // one per stage, ascending; the last is the final model
};

struct FinetuneRequest {
  std::string run_id;
  std::uint64_t head_seed = 0;
  std::uint64_t data_seed = 0;
  std::string fixture;
};

inline std::vector<std::size_t> resolve_stages(const TrainConfig& tc, std::size_t total) {
  std::vector<std::size_t> stages = tc.checkpoint_stages;
  if (stages.empty()) stages = {total / 3, 2 * total / 3, total};
  std::erase_if(stages, [&](std::size_t s) { return s == 0 || s > total; });
  if (stages.empty() || stages.back() != total) stages.push_back(total);
  stages.erase(std::unique(stages.begin(), stages.end()), stages.end());
  return stages;
}

/// Finetunes from the body of `body`, with a fresh head drawn from head_seed and
/// a data order drawn from data_seed. In lp_ft mode the head is first trained
/// alone for lp_head_steps. Stage counts refer to the full-training phase.
inline FinetuneResult finetune(const Checkpoint& body, const FinetuneRequest& req, const ModelConfig& mc,
                               const TrainConfig& tc, const TaskSpec& task, const DatasetSplit& train) {
  validate_compat(mc, task);
  tc.validate();
  require(!req.run_id.empty(), "finetune: run_id must be nonempty");
  const auto manifest = make_manifest(mc);
  if (!(body.params.manifest() == *manifest)) throw ValidationError("finetune: body manifest does not match config");

  ParamVector params = body.params;
  assign_tensors(params, init_head(mc, req.head_seed));
  const Batch data = to_batch(train, mc.max_len);

  const nlohmann::json digest_src = {{"model", to_json(mc)}, {"train", to_json(tc)}, {"task", to_json(task)}};
  FinetuneResult result;
  auto& rec = result.record;
  rec.run_id = req.run_id;
  rec.body_seed = body.meta.body_seed;
  rec.head_seed = req.head_seed;
  rec.data_seed = req.data_seed;
  rec.config_digest = fnv1a_hex(digest_src.dump());
  rec.fixture = req.fixture;

  CheckpointMeta meta;
  meta.run_id = req.run_id;
  meta.body_seed = body.meta.body_seed;
  meta.head_seed = req.head_seed;
  meta.data_seed = req.data_seed;
  meta.task_id = fnv1a_hex(to_json(task).dump() + train.metadata.dump());

  if (tc.mode == TrainMode::lp_ft && tc.lp_head_steps > 0) {
    const auto head = head_mask(params.manifest());
    detail::run_loop(params, data, mc, tc, req.data_seed, tag_of("lp_head"), tc.lp_head_steps, head,
                     [](std::size_t, const Optimizer&) {});
  }

  const std::size_t total = tc.epochs * detail::steps_per_epoch(data.rows, tc.batch_size);
  rec.stages = resolve_stages(tc, total);
  std::size_t next_stage = 0;
  auto emit = [&](std::size_t step, const std::string& digest) {
    Checkpoint c;
    c.params = params;
    c.meta = meta;
    c.meta.step = step;
    c.meta.optimizer_digest = digest;
    c.model = to_json(mc);
    result.checkpoints.push_back(std::move(c));
  };
  if (total == 0) {
    rec.stages = {0};
    emit(0, "none");
    return result;
  }
  const auto report = detail::run_loop(params, data, mc, tc, req.data_seed, tag_of("finetune"), total,
                                       std::vector<bool>(params.size(), true),
                                       [&](std::size_t done, const Optimizer& opt) {
                                         if (next_stage < rec.stages.size() && done == rec.stages[next_stage]) {
                                           emit(done, opt.digest());
                                           ++next_stage;
                                         }
                                       });
  rec.epoch_losses = report.epoch_losses;
  return result;
}

inline RunMetrics measure(const ParamVector& params, const ModelConfig& mc, const DatasetSplit& id_val,
                          const DatasetSplit& diagnostic, std::size_t n_samples, std::uint64_t eval_seed) {
  const auto id = evaluate(params, mc, id_val, std::min(n_samples, id_val.size()), eval_seed);
  const auto dg = evaluate(params, mc, diagnostic, std::min(n_samples, diagnostic.size()), eval_seed);
  return {id.loss, id.accuracy, dg.loss, dg.accuracy};
}

}  // namespace atlas
