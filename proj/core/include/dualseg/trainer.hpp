#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dualseg/data_pipeline.hpp"
#include "dualseg/evaluation.hpp"
#include "dualseg/network.hpp"
#include "dualseg/objectives.hpp"

namespace dualseg {

struct TrainConfig {
  double learning_rate = 6e-3;
  double weight_decay = 4e-4;
  int max_steps = 1000;
  int batch_labeled = 4;
  int batch_unlabeled = 4;
  std::uint64_t seed = 42;
  int eval_every = 100;  // 0: evaluate only after the last step
  LossWeights weights;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Everything needed to resume optimization bit-exactly.
struct TrainState {
  TrainState(const NetworkConfig& net_config, std::uint64_t seed);

  std::int64_t step = 0;
  DualBranchNet<float> net;
  std::vector<Tensor<float>> adam_m;  // aligned with net.trainable_parameters()
  std::vector<Tensor<float>> adam_v;
  std::mt19937_64 rng;
  std::uint64_t epoch = 0;
  std::uint64_t epoch_seed = 0;
  std::size_t batch_cursor = 0;  // next batch within the current epoch
  double best_val_dice = -1.0;
};

/// One optimization step on a mixed batch: labeled samples feed the
/// supervised loss, unlabeled samples the consistency loss, and a single
/// backward pass covers both. Throws NonFiniteLoss naming the offending term.
LossReport train_step(TrainState& state, const Batch& batch, const TrainConfig& config);

/// Decoupled-weight-decay Adam update from the gradients currently held by
/// the network.
void adam_update(TrainState& state, const TrainConfig& config);

struct EvalRecord {
  std::int64_t step = 0;
  MetricReport metrics;
  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

struct TrainHistory {
  std::vector<LossReport> steps;
  std::vector<EvalRecord> evals;
  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

struct FitOptions {
  std::optional<std::filesystem::path> work_dir;  // best.ckpt / last.ckpt land here
  std::ostream* log = nullptr;                    // JSON-lines training log
  std::function<void(std::int64_t, const LossReport&)> on_step;
};

struct FitResult {
  TrainState state;
  TrainHistory history;
};

FitResult fit(const DatasetSplit& split, const NetworkConfig& net_config, const TrainConfig& train_config,
              const FitOptions& options = {});

/// Continues an existing state up to train_config.max_steps.
TrainHistory resume_fit(TrainState& state, const DatasetSplit& split, const TrainConfig& train_config,
                        const FitOptions& options = {});

// Checkpoint: a directory holding manifest.json plus one raw float32
// payload per array, named `<array name>.f32`. Array names follow
// branch.module.level.block.param, e.g. `a.enc.l3.block2.conv.weight`;
// optimizer moments are stored as `adam_m.<name>` / `adam_v.<name>`.
void save_checkpoint(TrainState& state, const std::filesystem::path& dir);
TrainState load_checkpoint(const std::filesystem::path& dir);
NetworkConfig read_checkpoint_config(const std::filesystem::path& dir);

}  // namespace dualseg
