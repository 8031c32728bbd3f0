#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualseg/data_pipeline.hpp"
#include "dualseg/network.hpp"
#include "dualseg/trainer.hpp"

namespace dualseg {

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

}  // namespace dualseg

namespace dualseg::cli {

struct RunConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path work_dir = "work";
  double label_fraction = 0.1;
  NetworkConfig net;
  TrainConfig train;
  std::optional<PhantomSpec> phantom;

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);


/// Applies `key.path=value`; the value is parsed as JSON when possible and
/// taken as a string otherwise. Missing intermediate objects are created.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Reads the config file, applies overrides in order, and validates.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

}  // namespace dualseg::cli
