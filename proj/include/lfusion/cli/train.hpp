#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lfusion/cli/checkpoint.hpp"
#include "lfusion/cli/pipeline.hpp"

namespace lfusion {

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(std::size_t step, const nlohmann::json& components)
      : std::runtime_error("non-finite loss at step " + std::to_string(step) + ": " + components.dump()),
        step_(step),
        components_(components) {}
  std::size_t step() const { return step_; }
  const nlohmann::json& components() const { return components_; }

 private:
  std::size_t step_;
  nlohmann::json components_;
};

struct TrainOptions {
  bool write_files = true;  // metrics.jsonl, config.txt and checkpoints under cfg.out_dir
  bool quiet = true;
  /// Called after every optimizer step with (step, loss); tests use it to
  /// inspect the loss curve or to inject faults.
  std::function<void(std::size_t, const LossBreakdown&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;  // per step
  MetricsSummary final_metrics;
};

namespace detail {

inline void append_line(std::ofstream* os, const nlohmann::json& j) {
  if (os) *os << j.dump() << '\n' << std::flush;
}

}  // namespace detail

/// Training pairs of one step after augmentation. Mirroring and the
/// per-frame rigid perturbation draw from the run's stream in a fixed order.
inline std::vector<SensorPair> training_batch(const Dataset& ds, const RunConfig& cfg,
                                              std::vector<std::optional<SensorPair>>& cache,
                                              const std::vector<std::size_t>& indices, std::mt19937_64& rng) {
  const auto& g = ds.spec().sensors;
  std::vector<SensorPair> out;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto i : indices) {
    if (!cache[i]) cache[i] = ds.pair(Split::kTrain, i);
    SensorPair p = *cache[i];
    const double draw = u(rng);
    if (cfg.mirror && draw < cfg.mirror_prob) p = augment_mirror(p, g);
    const std::uint64_t rigid_seed = rng();
    if (cfg.max_rot > 0.0 || cfg.max_trans > 0.0) p = augment_rigid(p, cfg.max_rot, cfg.max_trans, rigid_seed, g);
    out.push_back(std::move(p));
  }
  return out;
}

inline TrainResult run_train(const RunConfig& cfg, const TrainOptions& opt = {}) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::unique_ptr<std::ofstream> metrics;
  if (opt.write_files) {
    fs::create_directories(cfg.out_dir);
    std::ofstream(fs::path(cfg.out_dir) / "config.txt") << to_text(cfg);
    metrics = std::make_unique<std::ofstream>(fs::path(cfg.out_dir) / "metrics.jsonl", std::ios::trunc);
  }
  Detector det(cfg);
  const Dataset ds(cfg.dataset_spec());
  auto params = det.params().tensors();
  auto state = OptimizerState::for_params(params, cfg.lr, cfg.weight_decay, cfg.lr_decay);
  const AdamBetas betas{cfg.beta1, cfg.beta2};
  std::mt19937_64 rng(splitmix64(cfg.seed ^ 0x7a11ed5eedULL));
  std::vector<std::optional<SensorPair>> cache(cfg.train_size);
  std::vector<std::size_t> order(cfg.train_size);
  std::size_t cursor = order.size();
  const std::string config_text = to_text(cfg);

  auto eval_now = [&](std::size_t step) {
    EvalOptions eo;
    eo.split = Split::kVal;
    eo.frames = cfg.eval_frames;
    eo.seed = cfg.seed;
    // Validation uses the same rigid perturbation range as training.
    eo.max_rot = cfg.max_rot;
    eo.max_trans = cfg.max_trans;
    auto s = evaluate(det, ds, eo);
    if (metrics) write_metrics_jsonl(*metrics, s, "val", category_names(), {{"step", step}});
    return s;
  };

  TrainResult res;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<std::size_t> idx;
    while (idx.size() < cfg.batch_size) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    const auto pairs = training_batch(ds, cfg, cache, idx, rng);
    const auto batch = make_batch(pairs, det);
    det.params().zero_grad();
    const auto out = det.forward(batch.bev, batch.camera);
    auto loss = compute_loss(out, batch, cfg.loss);
    if (!loss.finite()) throw NonFiniteLossError(step, loss.to_json());
    loss.total.backward();
    adamw_step(params, state, betas, cfg.eps);
    res.losses.push_back(loss.value);
    if (opt.on_step) opt.on_step(step, loss);
    if (cfg.log_interval && (step % cfg.log_interval == 0 || step == 1)) {
      auto j = loss.to_json();
      j["split"] = "train";
      j["step"] = step;
      j["lr"] = lr_at_step(cfg.lr, step - 1, cfg.lr_decay);
      detail::append_line(metrics.get(), j);
      if (!opt.quiet) std::fprintf(stderr, "step %zu loss %.5f\n", step, loss.value);
    }
    if (cfg.eval_interval && step % cfg.eval_interval == 0 && step != cfg.steps) eval_now(step);
    if (opt.write_files && cfg.checkpoint_interval && step % cfg.checkpoint_interval == 0)
      save_checkpoint(make_checkpoint(det.params(), &state, config_text),
                      (fs::path(cfg.out_dir) / ("step" + std::to_string(step) + ".lfck")).string());
  }
  res.final_metrics = eval_now(cfg.steps);
  res.checkpoint = make_checkpoint(det.params(), &state, config_text);
  if (opt.write_files) save_checkpoint(res.checkpoint, (fs::path(cfg.out_dir) / "final.lfck").string());
  return res;
}

/// Rebuilds the detector described by `cfg` and loads `ckpt` into it. The
/// checkpoint's own config snapshot must describe the same architecture.
inline Detector load_detector(const Checkpoint& ckpt, const RunConfig& cfg) {
  const auto saved = parse_config(ckpt.config_text);
  const auto a = architecture_stamp(saved), b = architecture_stamp(cfg);
  if (a != b) {
    std::string keys;
    for (const auto& k : config_diff(saved, cfg))
      if (k.starts_with("model.") || k.starts_with("data.bev_r") || k.starts_with("data.bev_c") ||
          k.starts_with("data.image") || k == "loss.w_2d")
        keys += (keys.empty() ? "" : ", ") + k;
    char buf[160];
    std::snprintf(buf, sizeof buf, "checkpoint (format v%u, architecture %016llx) does not match config (format v%u, architecture %016llx)",
                  ckpt.version, static_cast<unsigned long long>(a), kCheckpointVersion, static_cast<unsigned long long>(b));
    throw CheckpointMismatchError(std::string(buf) + (keys.empty() ? "" : "; differing keys: " + keys));
  }
  Detector det(cfg);
  restore_checkpoint(ckpt, det.params());
  return det;
}

inline MetricsSummary run_eval(const Checkpoint& ckpt, const RunConfig& cfg, const EvalOptions& opt) {
  const auto det = load_detector(ckpt, cfg);
  return evaluate(det, Dataset(cfg.dataset_spec()), opt);
}

}  // namespace lfusion
