#include "reatt/critic.hpp"

#include "reatt/errors.hpp"

namespace reatt {

template <typename T>
Var<T> reduce_state(const Var<T>& f, ActionKind kind) {
  if (f->value.rank() != 4)
    throw ShapeError("reduce_state: expected (B,C,H,W), got " +
                     Tensor<T>::shape_str(f->value.shape()));
  if (kind == ActionKind::spatial) {
    const int64_t b = f->value.dim(0);
    const int64_t hw = f->value.dim(2) * f->value.dim(3);
    return reshape(channel_mean_map(f), {b, hw});
  }
  return global_avg_pool(f);
}

template <typename T>
Var<T> flatten_action(const AttentionAction<T>& a) {
  if (a.kind == ActionKind::spatial) {
    const int64_t b = a.values->value.dim(0);
    return reshape(a.values, {b, a.values->value.numel() / b});
  }
  return a.values;
}

template <typename T>
CriticState<T> critic_step(const Var<T>& f_reduced, const Var<T>& action_flat,
                           const CriticState<T>& state, const ScalarLstm<T>& p) {
  if (f_reduced->value.rank() != 2 || action_flat->value.rank() != 2)
    throw ShapeError("critic_step: F̃ and A must be rank 2");
  if (f_reduced->value.dim(1) != action_flat->value.dim(1))
    throw ShapeError("critic_step: F̃ length " + std::to_string(f_reduced->value.dim(1)) +
                     " != action length " + std::to_string(action_flat->value.dim(1)));
  if (f_reduced->value.dim(0) != action_flat->value.dim(0))
    throw ShapeError("critic_step: batch mismatch");
  const int64_t d = 2 * f_reduced->value.dim(1);
  if (p.w->value.rank() != 2 || p.w->value.dim(0) != 4 || p.w->value.dim(1) != d + 1)
    throw ShapeError("critic_step: gate weights are " + Tensor<T>::shape_str(p.w->value.shape()) +
                     ", expected (4," + std::to_string(d + 1) + ")");

  Var<T> x = concat_cols<T>({detach(f_reduced), action_flat, state.h});
  Var<T> z = linear(x, p.w, p.b);  // (B, 4)
  Var<T> i = sigmoid(slice_cols(z, 0, 1));
  Var<T> f = sigmoid(slice_cols(z, 1, 1));
  Var<T> g = tanh_op(slice_cols(z, 2, 1));
  Var<T> o = sigmoid(slice_cols(z, 3, 1));
  Var<T> c_next = add(mul(f, state.c), mul(i, g));
  Var<T> h_next = mul(o, tanh_op(c_next));
  return {h_next, c_next};
}

int64_t critic_param_count(int64_t c) { return 4 * (2 * c + 2); }

int64_t critic_param_count_approx(int64_t c) { return 4 * (2 * c + 1); }

template <typename T>
ScalarLstm<T> make_scalar_lstm(ParamRegistry<T>& reg, Rng& rng, const std::string& prefix,
                               int64_t width) {
  Tensor<T> w({4, 2 * width + 1});
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.uniform(-0.1, 0.1));
  Tensor<T> b({4});
  b[1] = T(1);  // forget gate starts open
  ScalarLstm<T> p;
  p.w = reg.add(prefix + ".w", std::move(w));
  p.b = reg.add(prefix + ".b", std::move(b));
  return p;
}

#define REATT_INSTANTIATE_CRITIC(T)                                                 \
  template Var<T> reduce_state<T>(const Var<T>&, ActionKind);                       \
  template Var<T> flatten_action<T>(const AttentionAction<T>&);                     \
  template CriticState<T> critic_step<T>(const Var<T>&, const Var<T>&,              \
                                         const CriticState<T>&, const ScalarLstm<T>&); \
  template ScalarLstm<T> make_scalar_lstm<T>(ParamRegistry<T>&, Rng&,               \
                                             const std::string&, int64_t);

REATT_INSTANTIATE_CRITIC(float)
REATT_INSTANTIATE_CRITIC(double)
#undef REATT_INSTANTIATE_CRITIC

}  // namespace reatt
