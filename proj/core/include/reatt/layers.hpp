#pragma once

#include <cmath>
#include <string>

#include "reatt/ops.hpp"
#include "reatt/param.hpp"
#include "reatt/rng.hpp"

namespace reatt {

template <typename T>
struct Conv2d {
  Var<T> w;  // (O, C, kh, kw)
  Var<T> b;  // (O) or null
  int stride = 1;
  int pad = 0;

  Var<T> forward(const Var<T>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct Dense {
  Var<T> w;  // (O, I)
  Var<T> b;  // (O) or null

  Var<T> forward(const Var<T>& x) const { return linear(x, w, b); }
};

template <typename T>
struct BatchNorm {
  Var<T> gamma, beta;
  std::shared_ptr<Tensor<T>> running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  // `training` selects batch statistics; running averages move only when both
  // flags are set (bypass passes normalize with batch statistics but must not
  // disturb state).
  Var<T> forward(const Var<T>& x, bool training, bool update_running) const {
    return batch_norm(x, gamma, beta, *running_mean, *running_var, training,
                      training && update_running, momentum, eps);
  }
};

// Kaiming-normal fan-out weights, zero bias.
template <typename T>
Conv2d<T> make_conv2d(ParamRegistry<T>& reg, Rng& rng, const std::string& name, int64_t in_ch,
                      int64_t out_ch, int kh, int kw, int stride, int pad, bool bias) {
  Tensor<T> w({out_ch, in_ch, kh, kw});
  const double stddev = std::sqrt(2.0 / static_cast<double>(out_ch * kh * kw));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, stddev));
  Conv2d<T> c;
  c.w = reg.add(name + ".w", std::move(w));
  if (bias) c.b = reg.add(name + ".b", Tensor<T>::zeros({out_ch}));
  c.stride = stride;
  c.pad = pad;
  return c;
}

// Uniform(-1/sqrt(in), 1/sqrt(in)) weights, zero bias.
template <typename T>
Dense<T> make_dense(ParamRegistry<T>& reg, Rng& rng, const std::string& name, int64_t in,
                    int64_t out, bool bias) {
  Tensor<T> w({out, in});
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.uniform(-bound, bound));
  Dense<T> d;
  d.w = reg.add(name + ".w", std::move(w));
  if (bias) d.b = reg.add(name + ".b", Tensor<T>::zeros({out}));
  return d;
}

template <typename T>
BatchNorm<T> make_batch_norm(ParamRegistry<T>& reg, const std::string& name, int64_t channels) {
  BatchNorm<T> bn;
  bn.gamma = reg.add(name + ".gamma", Tensor<T>::full({channels}, T(1)));
  bn.beta = reg.add(name + ".beta", Tensor<T>::zeros({channels}));
  bn.running_mean = reg.add_buffer(name + ".running_mean", Tensor<T>::zeros({channels}));
  bn.running_var = reg.add_buffer(name + ".running_var", Tensor<T>::full({channels}, T(1)));
  return bn;
}

}  // namespace reatt
