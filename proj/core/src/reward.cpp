#include "reatt/reward.hpp"

#include <algorithm>

#include "reatt/errors.hpp"

namespace reatt {

void RewardConfig::validate() const {
  if (gamma < 0) throw ConfigError("reward.gamma must be >= 0");
  if (!(ratio_epsilon > 0) || ratio_epsilon > 1e-6)
    throw ConfigError("reward.ratio_epsilon must lie in (0, 1e-6]");
}

template <typename T>
T compute_reward(T p_full, T p_bypassed, bool correct, const RewardConfig& cfg) {
  if (!correct) return static_cast<T>(-cfg.gamma);
  return T(1) - p_bypassed / (p_full + static_cast<T>(cfg.ratio_epsilon));
}

std::vector<BlockId> select_bypass_blocks(int64_t epoch, const std::vector<StageSpec>& stages,
                                          const std::vector<int>& enabled_stages) {
  std::vector<BlockId> out;
  for (size_t s = 0; s < stages.size(); ++s) {
    if (!enabled_stages.empty() &&
        std::find(enabled_stages.begin(), enabled_stages.end(), static_cast<int>(s)) ==
            enabled_stages.end())
      continue;
    out.push_back({static_cast<int>(s),
                   static_cast<int>(epoch % static_cast<int64_t>(stages[s].num_blocks))});
  }
  return out;
}

template <typename T>
std::map<BlockId, Prediction<T>> bypass_forward(Network<T>& net, const Tensor<T>& batch,
                                                const std::vector<BlockId>& block_ids,
                                                bool training) {
  std::map<BlockId, Prediction<T>> out;
  NoGradGuard no_grad;
  ForwardOptions options;
  options.training = training;
  options.update_running = false;
  options.record_traces = false;
  for (const BlockId& id : block_ids) {
    Overrides<T> ov;
    ov[id].mean_substitute_self = true;
    out[id] = net.forward(batch, ov, options).prediction;
  }
  return out;
}

template <typename T>
RewardRecord<T> make_reward_record(BlockId id, const Prediction<T>& full,
                                   const Prediction<T>& bypassed,
                                   const std::vector<int>& labels, const RewardConfig& cfg) {
  const Tensor<T>& pf = full.probabilities;
  const Tensor<T>& pb = bypassed.probabilities;
  if (!pf.same_shape(pb)) throw ShapeError("make_reward_record: prediction shape mismatch");
  const int64_t b = pf.dim(0);
  if (static_cast<int64_t>(labels.size()) != b)
    throw ShapeError("make_reward_record: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(b));

  const std::vector<int> top = argmax_rows(pf);
  RewardRecord<T> rec;
  rec.id = id;
  rec.reward.resize(static_cast<size_t>(b));
  rec.p_full.resize(static_cast<size_t>(b));
  rec.p_bypassed.resize(static_cast<size_t>(b));
  rec.correct.resize(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    const bool ok = top[static_cast<size_t>(i)] == y;
    const T p_full = pf.at(i, y);
    const T p_byp = pb.at(i, y);
    rec.p_full[static_cast<size_t>(i)] = p_full;
    rec.p_bypassed[static_cast<size_t>(i)] = p_byp;
    rec.correct[static_cast<size_t>(i)] = ok ? 1 : 0;
    rec.reward[static_cast<size_t>(i)] = compute_reward(p_full, p_byp, ok, cfg);
  }
  return rec;
}

#define REATT_INSTANTIATE_REWARD(T)                                                \
  template T compute_reward<T>(T, T, bool, const RewardConfig&);                   \
  template std::map<BlockId, Prediction<T>> bypass_forward<T>(                     \
      Network<T>&, const Tensor<T>&, const std::vector<BlockId>&, bool);           \
  template RewardRecord<T> make_reward_record<T>(BlockId, const Prediction<T>&,    \
                                                 const Prediction<T>&,             \
                                                 const std::vector<int>&,          \
                                                 const RewardConfig&);

REATT_INSTANTIATE_REWARD(float)
REATT_INSTANTIATE_REWARD(double)
#undef REATT_INSTANTIATE_REWARD

}  // namespace reatt
