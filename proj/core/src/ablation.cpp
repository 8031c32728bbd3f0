#include "dualseg/ablation.hpp"

#include <array>
#include <cstdio>

namespace dualseg {

AblationResult run_ablation(const DatasetSplit& split, const NetworkConfig& net_config, const TrainConfig& train_config,
                            const std::function<void(const std::string&)>& progress) {
  constexpr std::array<std::pair<bool, bool>, 4> kRows{{{false, false}, {true, false}, {false, true}, {true, true}}};
  AblationResult result;
  for (const auto& [mem, cif] : kRows) {
    NetworkConfig cfg = net_config;
    cfg.enable_mem = mem;
    cfg.enable_cif = cif;
    TrainConfig tc = train_config;
    tc.eval_every = 0;
    FitResult run = fit(split, cfg, tc);
    const MetricReport m = evaluate(run.state.net, split.test);
    result.rows.push_back({mem, cif, m.mean_dice, m.mean_sens});
    if (progress) {
      char line[128];
      std::snprintf(line, sizeof line, "mem=%d cif=%d dice=%.4f sens=%.4f", mem, cif, m.mean_dice, m.mean_sens);
      progress(line);
    }
  }
  return result;
}

}  // namespace dualseg
