#include "cli.hpp"

#include <cstdio>
#include <fstream>
#include <map>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dualseg/ablation.hpp"
#include "dualseg/data_pipeline.hpp"
#include "dualseg/error.hpp"
#include "dualseg/evaluation.hpp"
#include "dualseg/trainer.hpp"
#include "run_config.hpp"

namespace dualseg::cli {
namespace {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << text;
}

DatasetSplit build_split(const RunConfig& config) {
  if (!fs::is_directory(config.data_dir)) {
    throw Error(Errc::ConfigError, "data_dir does not exist: " + config.data_dir.string());
  }
  const std::vector<MultiModalVolume> volumes = load_volume_dir(config.data_dir);
  return make_split(volumes, config.label_fraction, config.train.seed, {config.net.crop_h, config.net.crop_w});
}

int cmd_phantom(const RunConfig& config, std::ostream& out) {
  if (!config.phantom) throw Error(Errc::InvalidSpec, "config has no \"phantom\" section");
  const PhantomSpec& spec = *config.phantom;
  const std::vector<MultiModalVolume> volumes = generate_phantom(spec);
  save_volume_dir(volumes, config.data_dir, nlohmann::json{{"phantom", spec}});
  out << "wrote " << volumes.size() << " phantom patients to " << config.data_dir.string() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& config, std::ostream& out) {
  const DatasetSplit split = build_split(config);
  fs::create_directories(config.work_dir);
  write_text(config.work_dir / "split.json", split_manifest(split).dump(2) + "\n");
  write_text(config.work_dir / "run.json", nlohmann::json(config).dump(2) + "\n");

  std::ofstream log(config.work_dir / "train_log.jsonl", std::ios::trunc);
  FitOptions options;
  options.work_dir = config.work_dir;
  options.log = &log;
  const FitResult result = fit(split, config.net, config.train, options);

  const MetricReport& final = result.history.evals.back().metrics;
  char line[160];
  std::snprintf(line, sizeof line, "step %lld  test DSC %.4f  Sens %.4f  (best DSC %.4f)\n",
                static_cast<long long>(result.state.step), final.mean_dice, final.mean_sens, result.state.best_val_dice);
  out << line;
  return kExitOk;
}

int cmd_eval(const RunConfig& config, const fs::path& checkpoint, const std::string& subset,
             const std::string& export_dir, std::ostream& out) {
  const NetworkConfig stored = read_checkpoint_config(checkpoint);
  if (!(stored == config.net)) {
    throw Error(Errc::ConfigError, "config/checkpoint mismatch: checkpoint network is " + nlohmann::json(stored).dump() +
                                       ", config says " + nlohmann::json(config.net).dump());
  }
  TrainState state = load_checkpoint(checkpoint);
  const DatasetSplit split = build_split(config);
  const std::vector<SliceRecord>& records = subset == "labeled" ? split.labeled : split.test;
  const MetricReport report = evaluate(state.net, records);

  fs::create_directories(config.work_dir);
  nlohmann::json j = report;
  j["subset"] = subset;
  j["checkpoint_step"] = state.step;
  write_text(config.work_dir / "metrics.json", j.dump(2) + "\n");
  write_text(config.work_dir / "metrics.txt", format_metric_table(report));

  if (!export_dir.empty()) {
    std::map<std::string, std::vector<SliceRecord>> by_patient;
    for (const SliceRecord& r : records) by_patient[r.patient_id].push_back(r);
    for (const auto& [pid, recs] : by_patient) predict_patient(state.net, recs, export_dir);
  }
  out << format_metric_table(report);
  return kExitOk;
}

int cmd_ablate(const RunConfig& config, std::ostream& out) {
  const DatasetSplit split = build_split(config);
  fs::create_directories(config.work_dir);
  const AblationResult result =
      run_ablation(split, config.net, config.train, [&](const std::string& note) { out << note << '\n' << std::flush; });
  write_text(config.work_dir / "ablation.json", nlohmann::json(result).dump(2) + "\n");
  const std::string table = format_ablation_table(result);
  write_text(config.work_dir / "ablation.txt", table);
  out << table;
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"dualseg: semi-supervised dual-modality segmentation on phantom or converted volumes", "dualseg"};
  app.require_subcommand(1);

  CommonArgs common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config, "Run configuration (JSON)")->required();
    sub->add_option("--set", common.overrides, "Override a config value, e.g. --set train.max_steps=200")
        ->allow_extra_args(false);
  };

  CLI::App* phantom = app.add_subcommand("phantom", "Generate synthetic phantom volumes into data_dir");
  add_common(phantom);

  double label_fraction = -1.0;
  CLI::App* train = app.add_subcommand("train", "Build the split, train, and checkpoint into work_dir");
  add_common(train);
  train->add_option("--label-fraction", label_fraction, "Override label_fraction")->check(CLI::Range(0.0, 1.0));

  std::string checkpoint;
  std::string subset = "test";
  std::string export_dir;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint and write metrics.json");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory (default: <work_dir>/best.ckpt)");
  eval->add_option("--subset", subset, "Records to score")->check(CLI::IsMember({"test", "labeled"}));
  eval->add_option("--export-masks", export_dir, "Write <pid>_<idx>_{pred,gt}.pgm files here");

  CLI::App* ablate = app.add_subcommand("ablate", "Train the four MEM/CIF variants and write ablation.json");
  add_common(ablate);

  std::vector<std::string> argv_store{"dualseg"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const std::string& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    if (!app.get_subcommands().empty()) {
      err << app.get_subcommands().front()->help();
    } else {
      err << app.help();
    }
    return kExitUsage;
  }

  try {
    RunConfig config = load_run_config(common.config, common.overrides);
    if (train->parsed()) {
      if (label_fraction > 0.0) config.label_fraction = label_fraction;
      config.validate();
      return cmd_train(config, out);
    }
    if (eval->parsed()) {
      const fs::path ckpt = checkpoint.empty() ? config.work_dir / "best.ckpt" : fs::path(checkpoint);
      return cmd_eval(config, ckpt, subset, export_dir, out);
    }
    if (ablate->parsed()) return cmd_ablate(config, out);
    return cmd_phantom(config, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == Errc::NonFiniteLoss ? kExitNumerical : kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace dualseg::cli
