#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsched {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Outcome of one global round. per_user_* are aligned with `scheduled`.
struct RoundRecord {
  int round = 0;
  std::vector<int> scheduled;
  std::vector<int> dropped;
  double round_time_s = 0.0;
  std::vector<double> per_user_time_s;
  std::vector<double> per_user_energy_j;
  double accuracy = 0.0;
  double reward = 0.0;

  // Diagnostics, not persisted to CSV.
  std::optional<double> selection_bias;
  double max_grad_norm = 0.0;
};

inline constexpr const char* kRoundCsvHeader = "round,scheduled,dropped,round_time_s,accuracy,reward";

/// Writes records sorted by round index. Floats use 17 significant digits.
void write_round_records(const std::vector<RoundRecord>& records, const std::filesystem::path& path);
std::string format_round_records(const std::vector<RoundRecord>& records);

/// Inverse of format_round_records for the persisted columns.
std::vector<RoundRecord> parse_round_records(const std::string& csv);
std::vector<RoundRecord> read_round_records(const std::filesystem::path& path);

/// "%.17g" formatting shared by every CSV writer.
std::string format_double(double v);

/// Writes `text` to `path`, creating parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace fedsched
