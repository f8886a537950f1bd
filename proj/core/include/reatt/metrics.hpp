#pragma once

#include <string>
#include <utility>
#include <vector>

namespace reatt {

// One row per epoch. Q means carry one entry per enabled (block, kind) pair
// keyed "s0.b1.channel"; R means carry one entry per enabled block keyed
// "s0.b1", NaN when the block was not scheduled that epoch (serialized null).
struct MetricRecord {
  int epoch = 0;
  double train_acc = 0;
  double val_acc = 0;
  double l_c = 0;
  double l_q = 0;
  double l_r = 0;
  std::vector<std::pair<std::string, double>> q_means;
  std::vector<std::pair<std::string, double>> r_means;
  double seconds = 0;
};

// Decimal with 9 significant digits; parse-then-reserialize is a fixed point.
std::string format_real(double v);

std::string to_json_line(const MetricRecord& r);
// Identical serialization with the wall-clock field zeroed, for comparing
// runs that must agree on everything reproducible.
std::string to_json_line_stripped(const MetricRecord& r);

MetricRecord metric_from_json_line(const std::string& line);  // IoError on malformed input

void append_metric(const std::string& path, const MetricRecord& r);  // appends one line, flushes
std::vector<MetricRecord> read_metrics(const std::string& path);     // IoError if unreadable

}  // namespace reatt
