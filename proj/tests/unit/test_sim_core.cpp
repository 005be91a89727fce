#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fedsched/config.hpp"
#include "fedsched/records.hpp"
#include "fedsched/rng.hpp"
#include "json.hpp"

using namespace fedsched;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigDir = fs::path(FEDSCHED_SOURCE_DIR) / "configs";

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "fedsched_sim_core";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::uint64_t> draws(std::uint64_t seed, std::string_view label, int n = 100) {
  Rng rng = make_rng(seed, label);
  std::vector<std::uint64_t> out(n);
  for (auto& x : out) x = rng();
  return out;
}

RoundRecord sample_record(int k, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RoundRecord r;
  r.round = k;
  r.scheduled = {k % 5, 7, 11};
  if (k % 2 == 0) r.dropped = {3};
  r.round_time_s = u(rng) / 3.0;
  r.accuracy = u(rng);
  r.reward = -r.round_time_s;
  return r;
}

}  // namespace

TEST_CASE("default config file loads the published parameters") {
  const SimConfig c = load_config(kConfigDir / "default.json");
  CHECK(c.n_users == 20);
  CHECK(c.n_subcarriers == 64);
  CHECK(c.bandwidth_hz == 15000.0);
  CHECK(c.model_bits == 51200.0);
  CHECK(c.local_epochs == 8);
  CHECK(c.kappa == 1e-28);
  CHECK(c.eh_mean_j == 0.2);
  CHECK(c.e_max_j == 1.0);
  CHECK(c.noise_power_w() == doctest::Approx(5.9716e-17).epsilon(1e-4));

  const SimConfig r = load_config(kConfigDir / "reduced.json");
  CHECK(r.n_users == 8);
  CHECK(r.n_subcarriers == 16);
}

TEST_CASE("config validation") {
  auto j = nlohmann::json::parse(slurp(kConfigDir / "default.json"));
  SUBCASE("f_min above f_max") {
    j["f_min_hz"] = 4e9;
    CHECK_THROWS_AS(parse_config(j.dump()), ValidationError);
  }
  SUBCASE("missing seed") {
    j.erase("rng_seed");
    CHECK_THROWS_AS(parse_config(j.dump()), ValidationError);
  }
  SUBCASE("missing field is named") {
    j.erase("kappa");
    try {
      parse_config(j.dump());
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("kappa") != std::string::npos);
    }
  }
  SUBCASE("mistyped field is named") {
    j["n_users"] = "twenty";
    try {
      parse_config(j.dump());
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("n_users") != std::string::npos);
    }
  }
  SUBCASE("structural invariants") {
    for (auto [field, value] : std::vector<std::pair<std::string, nlohmann::json>>{
             {"n_users", 0}, {"n_subcarriers", 0}, {"noniid_ratio", 1.5}, {"noniid_ratio", -0.1},
             {"bandwidth_hz", 0.0}, {"kappa", -1.0}, {"e0_range_j", {0.5, 2.0}}, {"e0_range_j", {0.9, 0.5}}}) {
      auto bad = j;
      bad[field] = value;
      CHECK_THROWS_AS(parse_config(bad.dump()), ValidationError);
    }
  }
  SUBCASE("not json") { CHECK_THROWS_AS(parse_config("{ n_users: 3"), ConfigError); }
  SUBCASE("unreadable path") { CHECK_THROWS_AS(load_config("/nonexistent/cfg.json"), ConfigError); }
}

TEST_CASE("config json round trip") {
  const SimConfig c = load_config(kConfigDir / "default.json");
  const SimConfig back = parse_config(to_json(c));
  CHECK(to_json(back) == to_json(c));
}

TEST_CASE("labelled random streams") {
  CHECK(draws(42, "channel") == draws(42, "channel"));
  CHECK(draws(42, "channel") != draws(42, "energy"));
  CHECK(draws(42, "channel") != draws(43, "channel"));
  CHECK(derive_seed(42, 0) != derive_seed(42, 1));
  CHECK(derive_seed(42, 3) == derive_seed(42, 3));
}

TEST_CASE("round record csv") {
  Rng rng = make_rng(1, "records");
  std::vector<RoundRecord> recs;
  for (int k = 0; k < 3; ++k) recs.push_back(sample_record(k, rng));

  const fs::path path = scratch("three.csv");
  write_round_records(recs, path);
  const std::string text = slurp(path);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  CHECK(text.rfind(kRoundCsvHeader, 0) == 0);

  write_round_records({}, scratch("empty.csv"));
  CHECK(slurp(scratch("empty.csv")) == std::string(kRoundCsvHeader) + "\n");

  write_round_records(recs, path);
  CHECK(slurp(path) == text);

  // Rows come out in round order whatever the input order.
  std::vector<RoundRecord> shuffled{recs[2], recs[0], recs[1]};
  CHECK(format_round_records(shuffled) == text);

  CHECK_THROWS_AS(write_round_records(recs, "/proc/definitely/not/writable.csv"), IoError);
}

TEST_CASE("round record round trip keeps every printed digit") {
  Rng rng = make_rng(9, "records");
  std::vector<RoundRecord> recs;
  for (int k = 0; k < 200; ++k) recs.push_back(sample_record(k, rng));
  const auto back = parse_round_records(format_round_records(recs));
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].round == recs[i].round);
    CHECK(back[i].scheduled == recs[i].scheduled);
    CHECK(back[i].dropped == recs[i].dropped);
    CHECK(back[i].round_time_s == recs[i].round_time_s);
    CHECK(back[i].accuracy == recs[i].accuracy);
    CHECK(back[i].reward == recs[i].reward);
  }
}
