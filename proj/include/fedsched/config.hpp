#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace fedsched {

/// Raised when a config file cannot be read or a field is missing or mistyped.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a parsed config violates a physical or structural invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Experiment configuration. Units are SI unless the field name says otherwise.
struct SimConfig {
  int n_users = 20;
  int n_subcarriers = 64;
  double bandwidth_hz = 15e3;
  double noise_psd_dbm_hz = -174.0;
  double model_bits = 51.2e3;
  int local_epochs = 8;
  double cycles_per_bit = 20.0;
  double kappa = 1e-28;
  double f_min_hz = 0.5e9;
  double f_max_hz = 3.0e9;
  double p_max_w = 1.0;
  std::array<double, 2> e0_range_j{0.5, 1.0};
  double eh_mean_j = 0.2;
  double e_max_j = 1.0;
  double noniid_ratio = 0.8;
  std::array<int, 2> samples_range{200, 500};
  double target_accuracy = 0.8;
  int max_rounds = 100;
  std::uint64_t rng_seed = 0;

  /// Noise power per subcarrier N0*B in watts.
  [[nodiscard]] double noise_power_w() const;
};

/// Throws ValidationError on the first violated invariant.
void validate(const SimConfig& cfg);

/// Parses and validates a JSON config. Every field is required.
SimConfig load_config(const std::filesystem::path& path);
SimConfig parse_config(const std::string& json_text);

std::string to_json(const SimConfig& cfg);

}  // namespace fedsched
