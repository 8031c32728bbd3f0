#include "run_config.hpp"

#include <fstream>

#include "dualseg/error.hpp"

namespace dualseg {

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  j = {{"n_patients", s.n_patients},
       {"dims", {s.dims.d, s.dims.h, s.dims.w}},
       {"lesion_radius_range", {s.lesion_radius_range.first, s.lesion_radius_range.second}},
       {"complementarity", s.complementarity},
       {"noise_sigma", s.noise_sigma},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  const PhantomSpec d;
  s.n_patients = j.value("n_patients", d.n_patients);
  if (j.contains("dims")) {
    const auto dims = j.at("dims").get<std::vector<int>>();
    if (dims.size() != 3) throw Error(Errc::InvalidSpec, "phantom dims must be [D, H, W]");
    s.dims = {dims[0], dims[1], dims[2]};
  } else {
    s.dims = d.dims;
  }
  if (j.contains("lesion_radius_range")) {
    const auto r = j.at("lesion_radius_range").get<std::vector<int>>();
    if (r.size() != 2) throw Error(Errc::InvalidSpec, "lesion_radius_range must be [min, max]");
    s.lesion_radius_range = {r[0], r[1]};
  } else {
    s.lesion_radius_range = d.lesion_radius_range;
  }
  s.complementarity = j.value("complementarity", d.complementarity);
  s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  s.seed = j.value("seed", d.seed);
}

}  // namespace dualseg

namespace dualseg::cli {

void RunConfig::validate() const {
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) {
    throw Error(Errc::ConfigError, "label_fraction must lie in (0, 1]");
  }
  net.validate();
  train.validate();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"data_dir", c.data_dir.string()},
       {"work_dir", c.work_dir.string()},
       {"label_fraction", c.label_fraction},
       {"net", c.net},
       {"train", c.train}};
  if (c.phantom) j["phantom"] = *c.phantom;
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  const RunConfig d;
  c.data_dir = j.value("data_dir", d.data_dir.string());
  c.work_dir = j.value("work_dir", d.work_dir.string());
  c.label_fraction = j.value("label_fraction", d.label_fraction);
  c.net = j.contains("net") ? j.at("net").get<NetworkConfig>() : d.net;
  c.train = j.contains("train") ? j.at("train").get<TrainConfig>() : d.train;
  if (j.contains("phantom") && !j.at("phantom").is_null()) {
    c.phantom = j.at("phantom").get<PhantomSpec>();
  } else {
    c.phantom.reset();
  }
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(Errc::ConfigError, "--set expects key.path=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw Error(Errc::ConfigError, "empty path component in '" + key + "'");
    if (!node->is_object()) throw Error(Errc::ConfigError, "'" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open config " + path.string());
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw Error(Errc::ConfigError, path.string() + " is not a JSON object");
  for (const std::string& o : overrides) apply_override(doc, o);
  RunConfig config;
  try {
    config = doc.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, path.string() + ": " + e.what());
  }
  config.validate();
  return config;
}

}  // namespace dualseg::cli
