#pragma once

#include <string>

#include "reatt/actors.hpp"
#include "reatt/ops.hpp"
#include "reatt/param.hpp"

namespace reatt {

// One per-stage critic: an LSTM cell whose hidden and cell states are scalar
// per sample. Four gate transforms map the (2C + 1)-vector [F̃ ‖ A ‖ h] to a
// scalar each. Rows of w are the gates in the order i, f, g, o.
template <typename T>
struct ScalarLstm {
  Var<T> w;  // (4, D + 1) with D = len(F̃) + len(A) ... = 2C (or 2·H·W)
  Var<T> b;  // (4)
};

template <typename T>
struct CriticState {
  Var<T> h;  // (B, 1)
  Var<T> c;  // (B, 1)
};

// Hidden and cell start at exactly zero at every stage entry.
template <typename T>
CriticState<T> zero_critic_state(int64_t batch) {
  return {make_constant(Tensor<T>::zeros({batch, 1})),
          make_constant(Tensor<T>::zeros({batch, 1}))};
}

// Reduces a feature map to the shape of the action it is paired with:
// channel/style -> spatial average (B, C); spatial -> channel average
// flattened row-major to (B, H·W).
template <typename T>
Var<T> reduce_state(const Var<T>& f, ActionKind kind);

// Flattens an action to (B, len) for concatenation with F̃.
template <typename T>
Var<T> flatten_action(const AttentionAction<T>& a);

// One recurrence step. F̃ is detached inside: the critic never backpropagates
// into the backbone through its state input, only through the action and the
// carried hidden state.
template <typename T>
CriticState<T> critic_step(const Var<T>& f_reduced, const Var<T>& action_flat,
                           const CriticState<T>& state, const ScalarLstm<T>& p);

// Eq-style identity: the Q-value is the hidden state itself.
template <typename T>
Var<T> q_value(const CriticState<T>& state) {
  return state.h;
}

// Exact trainable size of one critic: 4 gates × ((2C + 1) weights + 1 bias).
// The bias-free approximation quoted in discussions of the budget is
// 4 × (2C + 1).
int64_t critic_param_count(int64_t c);
int64_t critic_param_count_approx(int64_t c);

// Weights uniform in [-0.1, 0.1]; forget-gate bias 1, the rest 0. `width` is
// the length of each half of the gate input (C, or H·W for spatial critics);
// the built cell takes [F̃ ‖ A ‖ h] of length 2·width + 1.
template <typename T>
ScalarLstm<T> make_scalar_lstm(ParamRegistry<T>& reg, Rng& rng, const std::string& prefix,
                               int64_t width);

#define REATT_EXTERN_CRITIC(T)                                                              \
  extern template Var<T> reduce_state<T>(const Var<T>&, ActionKind);                       \
  extern template Var<T> flatten_action<T>(const AttentionAction<T>&);                     \
  extern template CriticState<T> critic_step<T>(const Var<T>&, const Var<T>&,              \
                                                const CriticState<T>&,                     \
                                                const ScalarLstm<T>&);                     \
  extern template ScalarLstm<T> make_scalar_lstm<T>(ParamRegistry<T>&, Rng&,               \
                                                    const std::string&, int64_t);

REATT_EXTERN_CRITIC(float)
REATT_EXTERN_CRITIC(double)
#undef REATT_EXTERN_CRITIC

}  // namespace reatt
