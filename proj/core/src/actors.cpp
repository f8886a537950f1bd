#include "reatt/actors.hpp"

#include <algorithm>

#include "reatt/errors.hpp"

namespace reatt {

std::string to_string(ActionKind kind) {
  switch (kind) {
    case ActionKind::channel: return "channel";
    case ActionKind::spatial: return "spatial";
    case ActionKind::style: return "style";
  }
  return "?";
}

int64_t reduced_width(int64_t channels, int64_t reduction_ratio) {
  return std::min(channels, std::max<int64_t>(channels / reduction_ratio, 4));
}

template <typename T>
AttentionAction<T> ChannelActor<T>::forward(const Var<T>& f) const {
  auto excite = [this](const Var<T>& descriptor) {
    return fc1.forward(relu(fc0.forward(descriptor)));
  };
  Var<T> z = excite(global_avg_pool(f));
  if (use_max_branch) z = add(z, excite(global_max_pool(f)));
  return {ActionKind::channel, sigmoid(z)};
}

template <typename T>
AttentionAction<T> SpatialActor<T>::forward(const Var<T>& f) const {
  Var<T> maps = concat_channels(channel_mean_map(f), channel_max_map(f));
  return {ActionKind::spatial, sigmoid(conv.forward(maps))};
}

template <typename T>
AttentionAction<T> StyleActor<T>::forward(const Var<T>& f, bool training,
                                          bool update_running) const {
  const int64_t c = cfc_b->value.numel();
  Var<T> w_avg = reshape(slice_cols(cfc_w, 0, 1), {c});
  Var<T> w_std = reshape(slice_cols(cfc_w, 1, 1), {c});
  Var<T> z = add_rowvec(add(mul_rowvec(global_avg_pool(f), w_avg),
                            mul_rowvec(spatial_std_pool(f), w_std)),
                        cfc_b);
  return {ActionKind::style, sigmoid(bn.forward(z, training, update_running))};
}

template <typename T>
ChannelActor<T> make_channel_actor(ParamRegistry<T>& reg, Rng& rng, const std::string& prefix,
                                   int64_t channels, int64_t reduction_ratio,
                                   bool use_max_branch) {
  const int64_t hidden = reduced_width(channels, reduction_ratio);
  ChannelActor<T> a;
  a.fc0 = make_dense<T>(reg, rng, prefix + ".fc0", channels, hidden, true);
  a.fc1 = make_dense<T>(reg, rng, prefix + ".fc1", hidden, channels, true);
  a.use_max_branch = use_max_branch;
  return a;
}

template <typename T>
SpatialActor<T> make_spatial_actor(ParamRegistry<T>& reg, Rng& rng, const std::string& prefix) {
  SpatialActor<T> a;
  a.conv = make_conv2d<T>(reg, rng, prefix + ".conv", 2, 1, 7, 7, 1, 3, true);
  return a;
}

template <typename T>
StyleActor<T> make_style_actor(ParamRegistry<T>& reg, Rng& rng, const std::string& prefix,
                               int64_t channels) {
  StyleActor<T> a;
  Tensor<T> w({channels, 2});
  const double bound = 1.0 / std::sqrt(2.0);
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.uniform(-bound, bound));
  a.cfc_w = reg.add(prefix + ".cfc.w", std::move(w));
  a.cfc_b = reg.add(prefix + ".cfc.b", Tensor<T>::zeros({channels}));
  a.bn = make_batch_norm<T>(reg, prefix + ".bn", channels);
  return a;
}

template <typename T>
AttentionAction<T> channel_attention(const Var<T>& f, const ChannelActor<T>& p) {
  ChannelActor<T> plain = p;
  plain.use_max_branch = false;
  return plain.forward(f);
}

template <typename T>
AttentionAction<T> cbam_channel_attention(const Var<T>& f, const ChannelActor<T>& p) {
  ChannelActor<T> augmented = p;
  augmented.use_max_branch = true;
  return augmented.forward(f);
}

template <typename T>
AttentionAction<T> spatial_attention(const Var<T>& f, const SpatialActor<T>& p) {
  return p.forward(f);
}

template <typename T>
AttentionAction<T> style_attention(const Var<T>& f, const StyleActor<T>& p, bool training,
                                   bool update_running) {
  return p.forward(f, training, update_running);
}

template <typename T>
AttentionAction<T> mean_substitute(const AttentionAction<T>& a) {
  if (!a.values) throw ShapeError("mean_substitute: empty action");
  const Tensor<T>& v = a.values->value;
  const int64_t b = v.dim(0);
  const int64_t per_sample = v.numel() / std::max<int64_t>(b, 1);
  if (per_sample == 0) throw ShapeError("mean_substitute: action has no elements per sample");
  Tensor<T> out(v.shape());
  for (int64_t i = 0; i < b; ++i) {
    // Extended-precision accumulation keeps the substitution exactly
    // idempotent and makes it a bitwise no-op on constant actions.
    long double acc = 0;
    const T* src = v.data() + i * per_sample;
    for (int64_t k = 0; k < per_sample; ++k) acc += static_cast<long double>(src[k]);
    const T m = static_cast<T>(acc / static_cast<long double>(per_sample));
    T* dst = out.data() + i * per_sample;
    for (int64_t k = 0; k < per_sample; ++k) dst[k] = m;
  }
  return {a.kind, make_constant(std::move(out))};
}

#define REATT_INSTANTIATE_ACTORS(T)                                                          \
  template struct ChannelActor<T>;                                                           \
  template struct SpatialActor<T>;                                                           \
  template struct StyleActor<T>;                                                             \
  template ChannelActor<T> make_channel_actor<T>(ParamRegistry<T>&, Rng&, const std::string&, \
                                                 int64_t, int64_t, bool);                    \
  template SpatialActor<T> make_spatial_actor<T>(ParamRegistry<T>&, Rng&,                    \
                                                 const std::string&);                        \
  template StyleActor<T> make_style_actor<T>(ParamRegistry<T>&, Rng&, const std::string&,    \
                                             int64_t);                                       \
  template AttentionAction<T> channel_attention<T>(const Var<T>&, const ChannelActor<T>&);   \
  template AttentionAction<T> cbam_channel_attention<T>(const Var<T>&,                       \
                                                        const ChannelActor<T>&);             \
  template AttentionAction<T> spatial_attention<T>(const Var<T>&, const SpatialActor<T>&);   \
  template AttentionAction<T> style_attention<T>(const Var<T>&, const StyleActor<T>&, bool,  \
                                                 bool);                                      \
  template AttentionAction<T> mean_substitute<T>(const AttentionAction<T>&);

REATT_INSTANTIATE_ACTORS(float)
REATT_INSTANTIATE_ACTORS(double)
#undef REATT_INSTANTIATE_ACTORS

}  // namespace reatt
