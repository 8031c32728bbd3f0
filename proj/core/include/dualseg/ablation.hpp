#pragma once

#include <functional>
#include <string>

#include "dualseg/evaluation.hpp"
#include "dualseg/trainer.hpp"

namespace dualseg {

/// Trains the four MEM/CIF combinations on one split with identical seed and
/// budget, and scores each final model on the split's test records.
/// `progress` receives a one-line note as each configuration finishes.
AblationResult run_ablation(const DatasetSplit& split, const NetworkConfig& net_config, const TrainConfig& train_config,
                            const std::function<void(const std::string&)>& progress = {});

}  // namespace dualseg
