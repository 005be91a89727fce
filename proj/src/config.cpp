#include "fedsched/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fedsched {

using nlohmann::json;

double SimConfig::noise_power_w() const {
  return std::pow(10.0, (noise_psd_dbm_hz - 30.0) / 10.0) * bandwidth_hz;
}

namespace {

template <typename T>
T required(const json& j, const char* field) {
  if (!j.contains(field)) throw ConfigError(std::string("missing field '") + field + "'");
  try {
    return j.at(field).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("field '") + field + "': " + e.what());
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

}  // namespace

void validate(const SimConfig& c) {
  require(c.n_users >= 1, "n_users must be >= 1");
  require(c.n_subcarriers >= 1, "n_subcarriers must be >= 1");
  require(c.noniid_ratio >= 0.0 && c.noniid_ratio <= 1.0, "noniid_ratio must lie in [0,1]");
  require(c.f_min_hz <= c.f_max_hz, "f_min_hz must not exceed f_max_hz");
  require(c.e0_range_j[0] <= c.e0_range_j[1], "e0_range_j low must not exceed high");
  require(c.e0_range_j[1] <= c.e_max_j, "e0_range_j high must not exceed e_max_j");
  require(c.samples_range[0] <= c.samples_range[1], "samples_range low must not exceed high");
  require(c.bandwidth_hz > 0 && c.model_bits > 0 && c.cycles_per_bit > 0 && c.kappa > 0 &&
              c.f_min_hz > 0 && c.p_max_w > 0 && c.e0_range_j[0] > 0 && c.eh_mean_j > 0 &&
              c.e_max_j > 0 && c.samples_range[0] > 0 && c.local_epochs > 0 && c.max_rounds > 0,
          "physical quantities must be strictly positive");
  require(c.target_accuracy >= 0.0 && c.target_accuracy <= 1.0, "target_accuracy must lie in [0,1]");
  require(std::isfinite(c.noise_psd_dbm_hz), "noise_psd_dbm_hz must be finite");
}

SimConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  SimConfig c;
  c.n_users = required<int>(j, "n_users");
  c.n_subcarriers = required<int>(j, "n_subcarriers");
  c.bandwidth_hz = required<double>(j, "bandwidth_hz");
  c.noise_psd_dbm_hz = required<double>(j, "noise_psd_dbm_hz");
  c.model_bits = required<double>(j, "model_bits");
  c.local_epochs = required<int>(j, "local_epochs");
  c.cycles_per_bit = required<double>(j, "cycles_per_bit");
  c.kappa = required<double>(j, "kappa");
  c.f_min_hz = required<double>(j, "f_min_hz");
  c.f_max_hz = required<double>(j, "f_max_hz");
  c.p_max_w = required<double>(j, "p_max_w");
  c.e0_range_j = required<std::array<double, 2>>(j, "e0_range_j");
  c.eh_mean_j = required<double>(j, "eh_mean_j");
  c.e_max_j = required<double>(j, "e_max_j");
  c.noniid_ratio = required<double>(j, "noniid_ratio");
  c.samples_range = required<std::array<int, 2>>(j, "samples_range");
  c.target_accuracy = required<double>(j, "target_accuracy");
  c.max_rounds = required<int>(j, "max_rounds");
  // A run without a seed is not reproducible, which is a validity problem rather than a parse one.
  if (!j.contains("rng_seed")) throw ValidationError("rng_seed is required for a deterministic run");
  c.rng_seed = required<std::uint64_t>(j, "rng_seed");
  validate(c);
  return c;
}

SimConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string to_json(const SimConfig& c) {
  json j = {{"n_users", c.n_users},
            {"n_subcarriers", c.n_subcarriers},
            {"bandwidth_hz", c.bandwidth_hz},
            {"noise_psd_dbm_hz", c.noise_psd_dbm_hz},
            {"model_bits", c.model_bits},
            {"local_epochs", c.local_epochs},
            {"cycles_per_bit", c.cycles_per_bit},
            {"kappa", c.kappa},
            {"f_min_hz", c.f_min_hz},
            {"f_max_hz", c.f_max_hz},
            {"p_max_w", c.p_max_w},
            {"e0_range_j", c.e0_range_j},
            {"eh_mean_j", c.eh_mean_j},
            {"e_max_j", c.e_max_j},
            {"noniid_ratio", c.noniid_ratio},
            {"samples_range", c.samples_range},
            {"target_accuracy", c.target_accuracy},
            {"max_rounds", c.max_rounds},
            {"rng_seed", c.rng_seed}};
  return j.dump(2);
}

}  // namespace fedsched
