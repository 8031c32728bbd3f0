#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dualseg/trainer.hpp"
#include "dualseg/volume_io.hpp"

namespace dualseg {
namespace {

namespace fs = std::filesystem;

constexpr const char* kFormat = "dualseg-checkpoint";
constexpr int kVersion = 1;

nlohmann::json shape_json(const Shape4& s) { return {s.n, s.c, s.h, s.w}; }

struct ArrayRef {
  std::string name;
  std::string role;
  Tensor<float>* tensor;
};

std::vector<ArrayRef> checkpoint_arrays(TrainState& state) {
  std::vector<ArrayRef> out;
  for (Param<float>* p : state.net.parameters()) out.push_back({p->name, p->trainable ? "param" : "buffer", &p->value});
  const ParamRefs<float> trainable = state.net.trainable_parameters();
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    out.push_back({"adam_m." + trainable[i]->name, "adam_m", &state.adam_m[i]});
    out.push_back({"adam_v." + trainable[i]->name, "adam_v", &state.adam_v[i]});
  }
  return out;
}

nlohmann::json read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) throw Error(Errc::CorruptCheckpoint, "missing " + path.string());
  try {
    std::ifstream in(path);
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.value("format", "") != kFormat) throw Error(Errc::CorruptCheckpoint, path.string() + " is not a dualseg checkpoint");
    if (j.value("version", 0) != kVersion) throw Error(Errc::CorruptCheckpoint, path.string() + ": unsupported version");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptCheckpoint, path.string() + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(TrainState& state, const fs::path& dir) {
  if (fs::exists(dir)) fs::remove_all(dir);
  fs::create_directories(dir);

  std::ostringstream rng_state;
  rng_state << state.rng;

  nlohmann::json arrays = nlohmann::json::array();
  for (const ArrayRef& a : checkpoint_arrays(state)) {
    const std::string file = a.name + ".f32";
    write_f32_payload(dir / file, a.tensor->values());
    arrays.push_back({{"name", a.name}, {"role", a.role}, {"shape", shape_json(a.tensor->shape())}, {"dtype", "f32"},
                      {"file", file}});
  }
  const nlohmann::json manifest = {{"format", kFormat},
                                   {"version", kVersion},
                                   {"network", state.net.config()},
                                   {"step", state.step},
                                   {"epoch", state.epoch},
                                   {"epoch_seed", state.epoch_seed},
                                   {"batch_cursor", state.batch_cursor},
                                   {"best_val_dice", state.best_val_dice},
                                   {"rng_state", rng_state.str()},
                                   {"arrays", arrays}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write checkpoint manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

NetworkConfig read_checkpoint_config(const fs::path& dir) {
  const nlohmann::json j = read_manifest(dir);
  try {
    return j.at("network").get<NetworkConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptCheckpoint, dir.string() + ": bad network config: " + e.what());
  }
}

TrainState load_checkpoint(const fs::path& dir) {
  const nlohmann::json j = read_manifest(dir);
  NetworkConfig config;
  try {
    config = j.at("network").get<NetworkConfig>();
    config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptCheckpoint, dir.string() + ": bad network config: " + e.what());
  } catch (const Error& e) {
    throw Error(Errc::CorruptCheckpoint, dir.string() + ": " + e.what());
  }

  TrainState state(config, 0);
  try {
    state.step = j.at("step").get<std::int64_t>();
    state.epoch = j.at("epoch").get<std::uint64_t>();
    state.epoch_seed = j.at("epoch_seed").get<std::uint64_t>();
    state.batch_cursor = j.at("batch_cursor").get<std::size_t>();
    state.best_val_dice = j.at("best_val_dice").get<double>();
    std::istringstream rng_state(j.at("rng_state").get<std::string>());
    rng_state >> state.rng;
    if (!rng_state) throw Error(Errc::CorruptCheckpoint, "unreadable rng_state");
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptCheckpoint, dir.string() + ": " + e.what());
  }

  std::map<std::string, nlohmann::json> listed;
  for (const nlohmann::json& a : j.at("arrays")) listed[a.at("name").get<std::string>()] = a;

  const std::vector<ArrayRef> expected = checkpoint_arrays(state);
  if (listed.size() != expected.size()) {
    throw Error(Errc::CorruptCheckpoint, dir.string() + ": manifest lists " + std::to_string(listed.size()) +
                                             " arrays, model has " + std::to_string(expected.size()));
  }
  for (const ArrayRef& a : expected) {
    auto it = listed.find(a.name);
    if (it == listed.end()) throw Error(Errc::CorruptCheckpoint, dir.string() + ": array " + a.name + " missing");
    const nlohmann::json& entry = it->second;
    const auto shape = entry.at("shape").get<std::vector<int>>();
    const Shape4& want = a.tensor->shape();
    if (shape.size() != 4 || shape[0] != want.n || shape[1] != want.c || shape[2] != want.h || shape[3] != want.w) {
      throw Error(Errc::CorruptCheckpoint, dir.string() + ": " + a.name + " has shape " + entry.at("shape").dump() +
                                               ", model expects " + to_string(want));
    }
    const fs::path payload = dir / entry.at("file").get<std::string>();
    if (!fs::exists(payload)) throw Error(Errc::CorruptCheckpoint, "missing payload " + payload.string());
    std::vector<float> values;
    try {
      values = read_f32_payload(payload);
    } catch (const Error& e) {
      throw Error(Errc::CorruptCheckpoint, e.what());
    }
    if (values.size() != want.count()) {
      throw Error(Errc::CorruptCheckpoint, payload.string() + " holds " + std::to_string(values.size()) +
                                               " values, manifest shape needs " + std::to_string(want.count()));
    }
    *a.tensor = Tensor<float>(want, std::move(values));
  }
  return state;
}

}  // namespace dualseg
