#pragma once

#include <string>
#include <vector>

#include "reatt/backbone.hpp"
#include "reatt/config.hpp"
#include "reatt/data.hpp"
#include "reatt/metrics.hpp"
#include "reatt/reward.hpp"

namespace reatt {

// Per-element action statistics over an evaluation set (population variance).
struct AttentionSnapshot {
  BlockId id;
  ActionKind kind{};
  std::vector<double> mean;
  std::vector<double> variance;
};

// Two-pass mean/variance of every action over the split, in eval mode and
// gradient-free. Costs two forward sweeps.
template <typename T>
std::vector<AttentionSnapshot> snapshot_attention(Network<T>& net, const DataSplit<T>& split,
                                                  int64_t batch_size);

// Writes per-block attention-distribution plots (mean line, 3x-variance band)
// and per-block Q/R-over-epochs plots as PNGs, each with a JSON sidecar that
// reloads to the plotted values. Empty history: warns and writes nothing.
// Returns the written file paths.
std::vector<std::string> emit_plots(const std::vector<MetricRecord>& history,
                                    const std::vector<AttentionSnapshot>& snapshots,
                                    const std::string& output_dir, const PlotConfig& plots);

// One bypass evaluation per block in inference mode over the split.
struct AblationRow {
  BlockId id;
  double mean_reward = 0;
  double mean_p_full = 0;
  double mean_p_bypassed = 0;
  double accuracy_full = 0;
};

template <typename T>
std::vector<AblationRow> ablation_report(Network<T>& net, const DataSplit<T>& split,
                                         const RewardConfig& cfg, int64_t batch_size);

#define REATT_EXTERN_DIAG(T)                                                                  \
  extern template std::vector<AttentionSnapshot> snapshot_attention<T>(                       \
      Network<T>&, const DataSplit<T>&, int64_t);                                            \
  extern template std::vector<AblationRow> ablation_report<T>(Network<T>&, const DataSplit<T>&, \
                                                              const RewardConfig&, int64_t);

REATT_EXTERN_DIAG(float)
REATT_EXTERN_DIAG(double)
#undef REATT_EXTERN_DIAG

}  // namespace reatt
