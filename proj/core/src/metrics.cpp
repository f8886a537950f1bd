#include "reatt/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "reatt/errors.hpp"

namespace reatt {

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

namespace {

void write_pairs(std::ostringstream& out, const std::vector<std::pair<std::string, double>>& kv,
                 bool null_for_nan) {
  out << '{';
  for (size_t i = 0; i < kv.size(); ++i) {
    if (i) out << ',';
    out << '"' << kv[i].first << "\":";
    if (null_for_nan && std::isnan(kv[i].second))
      out << "null";
    else
      out << format_real(kv[i].second);
  }
  out << '}';
}

std::string serialize(const MetricRecord& r, bool strip_seconds) {
  std::ostringstream out;
  out << "{\"epoch\":" << r.epoch;
  out << ",\"train_acc\":" << format_real(r.train_acc);
  out << ",\"val_acc\":" << format_real(r.val_acc);
  out << ",\"l_c\":" << format_real(r.l_c);
  out << ",\"l_q\":" << format_real(r.l_q);
  out << ",\"l_r\":" << format_real(r.l_r);
  out << ",\"q\":";
  write_pairs(out, r.q_means, false);
  out << ",\"r\":";
  write_pairs(out, r.r_means, true);
  out << ",\"seconds\":" << format_real(strip_seconds ? 0.0 : r.seconds);
  out << '}';
  return out.str();
}

}  // namespace

std::string to_json_line(const MetricRecord& r) { return serialize(r, false); }

std::string to_json_line_stripped(const MetricRecord& r) { return serialize(r, true); }

MetricRecord metric_from_json_line(const std::string& line) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw IoError("malformed metric line: " + line.substr(0, 120));
  MetricRecord r;
  try {
    r.epoch = j.at("epoch").get<int>();
    r.train_acc = j.at("train_acc").get<double>();
    r.val_acc = j.at("val_acc").get<double>();
    r.l_c = j.at("l_c").get<double>();
    r.l_q = j.at("l_q").get<double>();
    r.l_r = j.at("l_r").get<double>();
    for (const auto& [key, value] : j.at("q").items())
      r.q_means.emplace_back(key, value.get<double>());
    for (const auto& [key, value] : j.at("r").items())
      r.r_means.emplace_back(key, value.is_null() ? std::nan("") : value.get<double>());
    r.seconds = j.at("seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("metric line missing field: ") + e.what());
  }
  return r;
}

void append_metric(const std::string& path, const MetricRecord& r) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open metrics file for append: " + path);
  out << to_json_line(r) << '\n';
  out.flush();
  if (!out) throw IoError("write to metrics file failed: " + path);
}

std::vector<MetricRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file: " + path);
  std::vector<MetricRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(metric_from_json_line(line));
  }
  return out;
}

}  // namespace reatt
