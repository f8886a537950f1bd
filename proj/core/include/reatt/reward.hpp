#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "reatt/backbone.hpp"

namespace reatt {

struct RewardConfig {
  double gamma = 1.0;
  // Guards the p_bypassed / p_full division. Kept well below the reward
  // tolerance so the hand-computed ratio cases hold to 1e-9.
  double ratio_epsilon = 1e-12;

  void validate() const;  // ConfigError naming the violated invariant
};

// Per-sample rewards of one bypassed block, with the probabilities that
// produced them.
template <typename T>
struct RewardRecord {
  BlockId id;
  std::vector<T> reward;
  std::vector<T> p_full;
  std::vector<T> p_bypassed;
  std::vector<uint8_t> correct;
};

// Eq-1 branch: 1 - p_bypassed/(p_full + eps) when the full-attention argmax
// hits the label, -gamma otherwise.
template <typename T>
T compute_reward(T p_full, T p_bypassed, bool correct, const RewardConfig& cfg);

// Round-robin schedule: stage s bypasses block (epoch mod num_blocks_s).
// Only stages listed in enabled_stages contribute (empty = all).
std::vector<BlockId> select_bypass_blocks(int64_t epoch, const std::vector<StageSpec>& stages,
                                          const std::vector<int>& enabled_stages);

// One extra forward pass per listed block, each with only that block's
// actions replaced by their per-sample means. Runs gradient-free and leaves
// BN running statistics untouched.
template <typename T>
std::map<BlockId, Prediction<T>> bypass_forward(Network<T>& net, const Tensor<T>& batch,
                                                const std::vector<BlockId>& block_ids,
                                                bool training);

// Assembles per-sample rewards from the paired passes. `labels` indexes the
// probability rows; correctness is argmax-based on the full pass.
template <typename T>
RewardRecord<T> make_reward_record(BlockId id, const Prediction<T>& full,
                                   const Prediction<T>& bypassed,
                                   const std::vector<int>& labels, const RewardConfig& cfg);

#define REATT_EXTERN_REWARD(T)                                                            \
  extern template T compute_reward<T>(T, T, bool, const RewardConfig&);                   \
  extern template std::map<BlockId, Prediction<T>> bypass_forward<T>(                     \
      Network<T>&, const Tensor<T>&, const std::vector<BlockId>&, bool);                  \
  extern template RewardRecord<T> make_reward_record<T>(BlockId, const Prediction<T>&,    \
                                                        const Prediction<T>&,             \
                                                        const std::vector<int>&,          \
                                                        const RewardConfig&);

REATT_EXTERN_REWARD(float)
REATT_EXTERN_REWARD(double)
#undef REATT_EXTERN_REWARD

}  // namespace reatt
