#pragma once

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "reatt/actors.hpp"
#include "reatt/critic.hpp"
#include "reatt/layers.hpp"

namespace reatt {

enum class AttentionKind { none, channel, spatial_channel, style };

std::string to_string(AttentionKind kind);
AttentionKind attention_kind_from_string(const std::string& s);  // ConfigError on unknown

struct StageSpec {
  int num_blocks = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  int stride_in = 1;  // stride of the stage's first block
};

struct NetworkConfig {
  std::vector<StageSpec> stages;
  int num_classes = 10;
  AttentionKind attention_kind = AttentionKind::channel;
  int reduction_ratio = 16;
  int input_height = 32;
  int input_width = 32;
  int input_channels = 3;

  void validate() const;  // throws ConfigError naming the violated invariant
  int total_blocks() const;
};

// Standard desk-scale layout: three stages at `base`, 2·base, 4·base channels
// with strides 1, 2, 2. blocks_per_stage = 3 gives the 20-layer network.
NetworkConfig desk_config(int blocks_per_stage, AttentionKind kind, int num_classes,
                          int input_hw, int input_channels = 3, int base_channels = 16);

struct BlockId {
  int stage = 0;
  int block = 0;
  friend auto operator<=>(const BlockId&, const BlockId&) = default;
};

std::string to_string(BlockId id);  // "s1.b2"

template <typename T>
struct Prediction {
  Var<T> logits;              // (B, K) graph node
  Tensor<T> probabilities;    // softmax rows of logits
};

// First maximum wins ties, matching the reward's correctness test.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& m);

// One record per actor evaluation. `state` is the block's residual-branch
// output before any recalibration (the critic's state input).
template <typename T>
struct BlockTrace {
  BlockId id;
  ActionKind kind{};
  Var<T> state;
  AttentionAction<T> applied;
  AttentionAction<T> native;
  bool overridden = false;
};

// Per-block substitution request for a forward pass.
template <typename T>
struct BlockOverride {
  // When set, every actor of the block is replaced by the per-sample mean of
  // its own live output (the reward bypass).
  bool mean_substitute_self = false;
  // Otherwise: explicit replacement values per action kind; kinds not listed
  // keep the actor's native output.
  std::map<ActionKind, Tensor<T>> values;
};

template <typename T>
using Overrides = std::map<BlockId, BlockOverride<T>>;

struct ForwardOptions {
  bool training = false;        // batch-norm statistics source
  bool update_running = false;  // advance BN running averages (main pass only)
  bool record_traces = true;
};

// Spec-level helpers: descriptor extraction and broadcast recalibration.
template <typename T>
Var<T> extract(const Var<T>& f);  // (B,C,H,W) -> (B,C) spatial mean
template <typename T>
Var<T> recalibrate(const Var<T>& f, const AttentionAction<T>& a);

template <typename T>
struct PreActBlock {
  BatchNorm<T> bn1, bn2;
  Conv2d<T> conv1, conv2;
  Conv2d<T> shortcut;  // valid only when has_projection
  bool has_projection = false;
  std::optional<ChannelActor<T>> channel_actor;
  std::optional<SpatialActor<T>> spatial_actor;
  std::optional<StyleActor<T>> style_actor;
};

template <typename T>
class Network {
 public:
  Network(NetworkConfig config, uint64_t seed);

  const NetworkConfig& config() const { return config_; }

  ParamRegistry<T>& backbone_params() { return backbone_; }
  ParamRegistry<T>& actor_params() { return actors_; }
  ParamRegistry<T>& critic_params() { return critics_; }
  const ParamRegistry<T>& backbone_params() const { return backbone_; }
  const ParamRegistry<T>& actor_params() const { return actors_; }
  const ParamRegistry<T>& critic_params() const { return critics_; }

  int actor_count() const { return actor_count_; }
  int critic_count() const { return static_cast<int>(critic_bank_.size()); }

  ScalarLstm<T>& critic_for(int stage, ActionKind kind);  // LookupError if absent
  // (stage, kind) pairs in rollout order: stages ascending, channel before spatial.
  std::vector<std::pair<int, ActionKind>> critic_keys() const;

  // Action kinds carried by every attention-equipped block, in application order.
  std::vector<ActionKind> block_action_kinds() const;

  std::vector<BlockId> block_ids() const;

  struct ForwardResult {
    Prediction<T> prediction;
    std::vector<BlockTrace<T>> traces;
  };

  // batch: (B, C_in, H, W). Throws LookupError for unknown override ids and
  // ShapeError for mismatched batches or override values.
  ForwardResult forward(const Tensor<T>& batch, const Overrides<T>& overrides,
                        const ForwardOptions& options);

  int64_t forward_pass_count() const { return forward_passes_; }

 private:
  NetworkConfig config_;
  ParamRegistry<T> backbone_, actors_, critics_;
  Conv2d<T> stem_;
  std::vector<std::vector<PreActBlock<T>>> stages_;
  BatchNorm<T> head_bn_;
  Dense<T> head_fc_;
  std::map<std::pair<int, ActionKind>, ScalarLstm<T>> critic_bank_;
  int actor_count_ = 0;
  int64_t forward_passes_ = 0;
};

extern template class Network<float>;
extern template class Network<double>;

#define REATT_EXTERN_BACKBONE(T)                                                    \
  extern template std::vector<int> argmax_rows<T>(const Tensor<T>&);                \
  extern template Var<T> extract<T>(const Var<T>&);                                 \
  extern template Var<T> recalibrate<T>(const Var<T>&, const AttentionAction<T>&);

REATT_EXTERN_BACKBONE(float)
REATT_EXTERN_BACKBONE(double)
#undef REATT_EXTERN_BACKBONE

}  // namespace reatt
