#pragma once

#include <string>

#include "reatt/layers.hpp"

namespace reatt {

enum class ActionKind { channel, spatial, style };

std::string to_string(ActionKind kind);

// The continuous action of one attention module. Channel and style actions
// are (B, C); spatial actions are (B, 1, H, W). Every element lies in (0, 1).
template <typename T>
struct AttentionAction {
  ActionKind kind{};
  Var<T> values;
};

// SENet-style squeeze/excite pair. With use_max_branch the module becomes the
// max-augmented variant: the two pooled descriptors pass through the shared
// FC pair and are summed before the sigmoid.
template <typename T>
struct ChannelActor {
  Dense<T> fc0;  // (hidden, C)
  Dense<T> fc1;  // (C, hidden)
  bool use_max_branch = false;

  AttentionAction<T> forward(const Var<T>& f) const;
};

// 7x7 convolution over the stacked channel-mean and channel-max maps.
template <typename T>
struct SpatialActor {
  Conv2d<T> conv;  // (1, 2, 7, 7), pad 3

  AttentionAction<T> forward(const Var<T>& f) const;
};

// Style recalibration: per-channel affine combination of spatial mean and
// (population) standard deviation, batch-normalized across channels.
template <typename T>
struct StyleActor {
  Var<T> cfc_w;  // (C, 2): column 0 weighs the mean, column 1 the std
  Var<T> cfc_b;  // (C)
  BatchNorm<T> bn;

  AttentionAction<T> forward(const Var<T>& f, bool training, bool update_running) const;
};

// The excitation width C/r, floored at 4 (and never above C).
int64_t reduced_width(int64_t channels, int64_t reduction_ratio);

template <typename T>
ChannelActor<T> make_channel_actor(ParamRegistry<T>& reg, Rng& rng, const std::string& prefix,
                                   int64_t channels, int64_t reduction_ratio,
                                   bool use_max_branch);

template <typename T>
SpatialActor<T> make_spatial_actor(ParamRegistry<T>& reg, Rng& rng, const std::string& prefix);

template <typename T>
StyleActor<T> make_style_actor(ParamRegistry<T>& reg, Rng& rng, const std::string& prefix,
                               int64_t channels);

// Contract-level entry points. channel_attention always uses the plain
// average-pool path; cbam_channel_attention always uses both branches.
template <typename T>
AttentionAction<T> channel_attention(const Var<T>& f, const ChannelActor<T>& p);
template <typename T>
AttentionAction<T> cbam_channel_attention(const Var<T>& f, const ChannelActor<T>& p);
template <typename T>
AttentionAction<T> spatial_attention(const Var<T>& f, const SpatialActor<T>& p);
template <typename T>
AttentionAction<T> style_attention(const Var<T>& f, const StyleActor<T>& p, bool training,
                                   bool update_running);

// Every element of each sample's action replaced by that sample's mean.
// The result is detached from the graph (it only feeds bypass passes).
template <typename T>
AttentionAction<T> mean_substitute(const AttentionAction<T>& a);

#define REATT_EXTERN_ACTORS(T)                                                               \
  extern template struct ChannelActor<T>;                                                    \
  extern template struct SpatialActor<T>;                                                    \
  extern template struct StyleActor<T>;                                                      \
  extern template ChannelActor<T> make_channel_actor<T>(ParamRegistry<T>&, Rng&,            \
                                                        const std::string&, int64_t,        \
                                                        int64_t, bool);                     \
  extern template SpatialActor<T> make_spatial_actor<T>(ParamRegistry<T>&, Rng&,            \
                                                        const std::string&);                \
  extern template StyleActor<T> make_style_actor<T>(ParamRegistry<T>&, Rng&,                \
                                                    const std::string&, int64_t);           \
  extern template AttentionAction<T> channel_attention<T>(const Var<T>&,                    \
                                                          const ChannelActor<T>&);          \
  extern template AttentionAction<T> cbam_channel_attention<T>(const Var<T>&,               \
                                                               const ChannelActor<T>&);     \
  extern template AttentionAction<T> spatial_attention<T>(const Var<T>&,                    \
                                                          const SpatialActor<T>&);          \
  extern template AttentionAction<T> style_attention<T>(const Var<T>&, const StyleActor<T>&, \
                                                        bool, bool);                        \
  extern template AttentionAction<T> mean_substitute<T>(const AttentionAction<T>&);

REATT_EXTERN_ACTORS(float)
REATT_EXTERN_ACTORS(double)
#undef REATT_EXTERN_ACTORS

}  // namespace reatt
