#include "fedsched/records.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fedsched {

namespace {

std::string join_ids(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(ids[i]);
  }
  return out;
}

std::vector<int> split_ids(const std::string& s) {
  std::vector<int> ids;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ';')) {
    if (!tok.empty()) ids.push_back(std::stoi(tok));
  }
  return ids;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_round_records(const std::vector<RoundRecord>& records) {
  std::vector<const RoundRecord*> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const RoundRecord* a, const RoundRecord* b) { return a->round < b->round; });

  std::string out = kRoundCsvHeader;
  out += '\n';
  for (const RoundRecord* r : sorted) {
    out += std::to_string(r->round) + ',' + join_ids(r->scheduled) + ',' + join_ids(r->dropped) + ',' +
           format_double(r->round_time_s) + ',' + format_double(r->accuracy) + ',' +
           format_double(r->reward) + '\n';
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_round_records(const std::vector<RoundRecord>& records, const std::filesystem::path& path) {
  write_text_file(path, format_round_records(records));
}

std::vector<RoundRecord> parse_round_records(const std::string& csv) {
  std::stringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kRoundCsvHeader) throw IoError("unexpected round-record header");
  std::vector<RoundRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string col;
    while (std::getline(ls, col, ',')) cols.push_back(col);
    if (line.back() == ',') cols.emplace_back();
    if (cols.size() != 6) throw IoError("malformed round-record row: " + line);
    RoundRecord r;
    r.round = std::stoi(cols[0]);
    r.scheduled = split_ids(cols[1]);
    r.dropped = split_ids(cols[2]);
    r.round_time_s = std::stod(cols[3]);
    r.accuracy = std::stod(cols[4]);
    r.reward = std::stod(cols[5]);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RoundRecord> read_round_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_round_records(ss.str());
}

}  // namespace fedsched
