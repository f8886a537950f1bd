#pragma once

#include <vector>

#include "reatt/autograd.hpp"
#include "reatt/tensor.hpp"

namespace reatt {

// Differentiable ops over graph nodes. Shapes follow the conventions:
// activations (B,C,H,W), descriptors (B,C), spatial maps (B,1,H,W),
// logits (B,K). All ops validate shapes and throw ShapeError on mismatch.

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> square(const Var<T>& a);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> mul_scalar(const Var<T>& a, T s);

template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> tanh_op(const Var<T>& a);

// y = x * W^T + b; x (B,I), w (O,I), b (O) or empty.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

// x (B,C,H,W), w (O,C,kh,kw), b (O) or empty; zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad);

// Batch normalization over the channel axis. x is (B,C) or (B,C,H,W);
// statistics are per channel over every other axis. Population variance is
// used both for normalization and for the running-average update.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                  bool update_running, T momentum, T eps);

template <typename T> Var<T> global_avg_pool(const Var<T>& x);   // (B,C,H,W) -> (B,C)
template <typename T> Var<T> global_max_pool(const Var<T>& x);   // (B,C,H,W) -> (B,C)
template <typename T> Var<T> spatial_std_pool(const Var<T>& x);  // (B,C,H,W) -> (B,C), population
template <typename T> Var<T> channel_mean_map(const Var<T>& x);  // (B,C,H,W) -> (B,1,H,W)
template <typename T> Var<T> channel_max_map(const Var<T>& x);   // (B,C,H,W) -> (B,1,H,W)

// Broadcast recalibration: x (B,C,H,W) * a (B,C) or * s (B,1,H,W).
template <typename T> Var<T> mul_channel(const Var<T>& x, const Var<T>& a);
template <typename T> Var<T> mul_spatial(const Var<T>& x, const Var<T>& s);

// Row-broadcast arithmetic: x (B,C) combined with v (C).
template <typename T> Var<T> mul_rowvec(const Var<T>& x, const Var<T>& v);
template <typename T> Var<T> add_rowvec(const Var<T>& x, const Var<T>& v);

template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);  // (B,Ki) -> (B,sum)
template <typename T> Var<T> slice_cols(const Var<T>& x, int64_t start, int64_t len);
template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);  // along dim 1

template <typename T> Var<T> reshape(const Var<T>& x, std::vector<int64_t> shape);
template <typename T> Var<T> sum_all(const Var<T>& x);   // -> shape (1)
template <typename T> Var<T> mean_all(const Var<T>& x);  // -> shape (1)

// Row-wise softmax of a (B,K) tensor (value-level helper).
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& logits);

// Mean cross-entropy over the batch; labels in [0,K). If probs_out is given
// it receives softmax(logits).
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels,
                             Tensor<T>* probs_out);

#define REATT_EXTERN_OPS(T)                                                                  \
  extern template Var<T> add<T>(const Var<T>&, const Var<T>&);                              \
  extern template Var<T> sub<T>(const Var<T>&, const Var<T>&);                              \
  extern template Var<T> mul<T>(const Var<T>&, const Var<T>&);                              \
  extern template Var<T> square<T>(const Var<T>&);                                          \
  extern template Var<T> add_scalar<T>(const Var<T>&, T);                                   \
  extern template Var<T> mul_scalar<T>(const Var<T>&, T);                                   \
  extern template Var<T> relu<T>(const Var<T>&);                                            \
  extern template Var<T> sigmoid<T>(const Var<T>&);                                         \
  extern template Var<T> tanh_op<T>(const Var<T>&);                                         \
  extern template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);            \
  extern template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int);  \
  extern template Var<T> batch_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&,         \
                                       Tensor<T>&, Tensor<T>&, bool, bool, T, T);           \
  extern template Var<T> global_avg_pool<T>(const Var<T>&);                                 \
  extern template Var<T> global_max_pool<T>(const Var<T>&);                                 \
  extern template Var<T> spatial_std_pool<T>(const Var<T>&);                                \
  extern template Var<T> channel_mean_map<T>(const Var<T>&);                                \
  extern template Var<T> channel_max_map<T>(const Var<T>&);                                 \
  extern template Var<T> mul_channel<T>(const Var<T>&, const Var<T>&);                      \
  extern template Var<T> mul_spatial<T>(const Var<T>&, const Var<T>&);                      \
  extern template Var<T> mul_rowvec<T>(const Var<T>&, const Var<T>&);                       \
  extern template Var<T> add_rowvec<T>(const Var<T>&, const Var<T>&);                       \
  extern template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                        \
  extern template Var<T> slice_cols<T>(const Var<T>&, int64_t, int64_t);                    \
  extern template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                  \
  extern template Var<T> reshape<T>(const Var<T>&, std::vector<int64_t>);                   \
  extern template Var<T> sum_all<T>(const Var<T>&);                                         \
  extern template Var<T> mean_all<T>(const Var<T>&);                                        \
  extern template Tensor<T> softmax_rows<T>(const Tensor<T>&);                              \
  extern template Var<T> softmax_cross_entropy<T>(const Var<T>&, const std::vector<int>&,   \
                                                  Tensor<T>*);

REATT_EXTERN_OPS(float)
REATT_EXTERN_OPS(double)
#undef REATT_EXTERN_OPS

}  // namespace reatt
