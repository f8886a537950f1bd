#include "reatt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "reatt/errors.hpp"
#include "reatt/gemm.hpp"

namespace reatt {

namespace {

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw ShapeError(std::string(op) + ": mismatched shapes " +
                     Tensor<T>::shape_str(a->value.shape()) + " vs " +
                     Tensor<T>::shape_str(b->value.shape()));
}

template <typename T>
void check_rank(const Var<T>& x, int rank, const char* op) {
  if (x->value.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     Tensor<T>::shape_str(x->value.shape()));
}

// col is (C*kh*kw, OH*OW) for one sample.
template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t OH, int64_t OW, T* col) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < kh; ++i) {
      for (int64_t j = 0; j < kw; ++j) {
        T* dst = col + ((c * kh + i) * kw + j) * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          const int64_t h = oh * stride - pad + i;
          if (h < 0 || h >= H) {
            for (int64_t ow = 0; ow < OW; ++ow) dst[oh * OW + ow] = T(0);
            continue;
          }
          const T* src = x + (c * H + h) * W;
          for (int64_t ow = 0; ow < OW; ++ow) {
            const int64_t w = ow * stride - pad + j;
            dst[oh * OW + ow] = (w >= 0 && w < W) ? src[w] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t OH, int64_t OW, T* x) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < kh; ++i) {
      for (int64_t j = 0; j < kw; ++j) {
        const T* src = col + ((c * kh + i) * kw + j) * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          const int64_t h = oh * stride - pad + i;
          if (h < 0 || h >= H) continue;
          T* dst = x + (c * H + h) * W;
          for (int64_t ow = 0; ow < OW; ++ow) {
            const int64_t w = ow * stride - pad + j;
            if (w >= 0 && w < W) dst[w] += src[oh * OW + ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> y(a->value.shape());
  const int64_t n = y.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = a->value[i] + b->value[i];
  return make_node<T>(std::move(y), {a, b}, [a, b](Node<T>& node) {
    if (a->requires_grad) a->accumulate(node.grad);
    if (b->requires_grad) b->accumulate(node.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a, b, "sub");
  Tensor<T> y(a->value.shape());
  const int64_t n = y.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = a->value[i] - b->value[i];
  return make_node<T>(std::move(y), {a, b}, [a, b](Node<T>& node) {
    if (a->requires_grad) a->accumulate(node.grad);
    if (b->requires_grad) {
      Tensor<T> g(node.grad.shape());
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = -node.grad[i];
      b->accumulate(g);
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> y(a->value.shape());
  const int64_t n = y.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = a->value[i] * b->value[i];
  return make_node<T>(std::move(y), {a, b}, [a, b](Node<T>& node) {
    const int64_t m = node.grad.numel();
    if (a->requires_grad) {
      Tensor<T> g(node.grad.shape());
      for (int64_t i = 0; i < m; ++i) g[i] = node.grad[i] * b->value[i];
      a->accumulate(g);
    }
    if (b->requires_grad) {
      Tensor<T> g(node.grad.shape());
      for (int64_t i = 0; i < m; ++i) g[i] = node.grad[i] * a->value[i];
      b->accumulate(g);
    }
  });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  Tensor<T> y(a->value.shape());
  const int64_t n = y.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = a->value[i] * a->value[i];
  return make_node<T>(std::move(y), {a}, [a](Node<T>& node) {
    if (!a->requires_grad) return;
    Tensor<T> g(node.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = T(2) * a->value[i] * node.grad[i];
    a->accumulate(g);
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> y(a->value.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] + s;
  return make_node<T>(std::move(y), {a}, [a](Node<T>& node) {
    if (a->requires_grad) a->accumulate(node.grad);
  });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T s) {
  Tensor<T> y(a->value.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] * s;
  return make_node<T>(std::move(y), {a}, [a, s](Node<T>& node) {
    if (!a->requires_grad) return;
    Tensor<T> g(node.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = s * node.grad[i];
    a->accumulate(g);
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> y(a->value.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] > T(0) ? a->value[i] : T(0);
  return make_node<T>(std::move(y), {a}, [a](Node<T>& node) {
    if (!a->requires_grad) return;
    Tensor<T> g(node.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] = a->value[i] > T(0) ? node.grad[i] : T(0);
    a->accumulate(g);
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> y(a->value.shape());
  for (int64_t i = 0; i < y.numel(); ++i) {
    const T x = a->value[i];
    y[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                     : std::exp(x) / (T(1) + std::exp(x));
  }
  return make_node<T>(std::move(y), {a}, [a](Node<T>& node) {
    if (!a->requires_grad) return;
    Tensor<T> g(node.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) {
      const T s = node.value[i];
      g[i] = node.grad[i] * s * (T(1) - s);
    }
    a->accumulate(g);
  });
}

template <typename T>
Var<T> tanh_op(const Var<T>& a) {
  Tensor<T> y(a->value.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::tanh(a->value[i]);
  return make_node<T>(std::move(y), {a}, [a](Node<T>& node) {
    if (!a->requires_grad) return;
    Tensor<T> g(node.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) {
      const T t = node.value[i];
      g[i] = node.grad[i] * (T(1) - t * t);
    }
    a->accumulate(g);
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  check_rank(x, 2, "linear");
  check_rank(w, 2, "linear weight");
  const int64_t B = x->value.dim(0), I = x->value.dim(1), O = w->value.dim(0);
  if (w->value.dim(1) != I)
    throw ShapeError("linear: weight is " + Tensor<T>::shape_str(w->value.shape()) +
                     " but input has " + std::to_string(I) + " features");
  if (b && !(b->value.rank() == 1 && b->value.dim(0) == O))
    throw ShapeError("linear: bias must have shape (" + std::to_string(O) + ")");

  Tensor<T> y({B, O});
  detail::gemm(false, true, B, O, I, T(1), x->value.data(), I, w->value.data(), I, T(0),
               y.data(), O);
  if (b) {
    for (int64_t i = 0; i < B; ++i)
      for (int64_t o = 0; o < O; ++o) y.at(i, o) += b->value[o];
  }
  return make_node<T>(std::move(y), {x, w, b}, [x, w, b, B, I, O](Node<T>& node) {
    if (x->requires_grad) {
      Tensor<T> g({B, I});
      detail::gemm(false, false, B, I, O, T(1), node.grad.data(), O, w->value.data(), I, T(0),
                   g.data(), I);
      x->accumulate(g);
    }
    if (w->requires_grad) {
      Tensor<T> g({O, I});
      detail::gemm(true, false, O, I, B, T(1), node.grad.data(), O, x->value.data(), I, T(0),
                   g.data(), I);
      w->accumulate(g);
    }
    if (b && b->requires_grad) {
      Tensor<T> g({O});
      for (int64_t i = 0; i < B; ++i)
        for (int64_t o = 0; o < O; ++o) g[o] += node.grad.at(i, o);
      b->accumulate(g);
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  check_rank(x, 4, "conv2d");
  check_rank(w, 4, "conv2d weight");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
  const int64_t B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
                W = x->value.dim(3);
  const int64_t O = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  if (w->value.dim(1) != C)
    throw ShapeError("conv2d: weight expects " + std::to_string(w->value.dim(1)) +
                     " input channels, input has " + std::to_string(C));
  const int64_t OH = (H + 2 * pad - kh) / stride + 1;
  const int64_t OW = (W + 2 * pad - kw) / stride + 1;
  if (H + 2 * pad < kh || W + 2 * pad < kw)
    throw ShapeError("conv2d: kernel larger than padded input");
  if (b && !(b->value.rank() == 1 && b->value.dim(0) == O))
    throw ShapeError("conv2d: bias must have shape (" + std::to_string(O) + ")");

  const int64_t ckk = C * kh * kw;
  const int64_t spatial = OH * OW;
  Tensor<T> y({B, O, OH, OW});
  std::vector<T> col(static_cast<size_t>(ckk * spatial));
  for (int64_t n = 0; n < B; ++n) {
    im2col(x->value.data() + n * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW, col.data());
    detail::gemm(false, false, O, spatial, ckk, T(1), w->value.data(), ckk, col.data(), spatial,
                 T(0), y.data() + n * O * spatial, spatial);
  }
  if (b) {
    for (int64_t n = 0; n < B; ++n)
      for (int64_t o = 0; o < O; ++o) {
        T* dst = y.data() + (n * O + o) * spatial;
        const T bias = b->value[o];
        for (int64_t s = 0; s < spatial; ++s) dst[s] += bias;
      }
  }

  auto back = [x, w, b, B, C, H, W, O, kh, kw, stride, pad, OH, OW, ckk,
               spatial](Node<T>& node) {
    std::vector<T> col(static_cast<size_t>(ckk * spatial));
    Tensor<T> gw, gx;
    if (w->requires_grad) gw = Tensor<T>::zeros(w->value.shape());
    if (x->requires_grad) gx = Tensor<T>::zeros(x->value.shape());
    for (int64_t n = 0; n < B; ++n) {
      const T* gy = node.grad.data() + n * O * spatial;
      if (w->requires_grad) {
        im2col(x->value.data() + n * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW,
               col.data());
        detail::gemm(false, true, O, ckk, spatial, T(1), gy, spatial, col.data(), spatial, T(1),
                     gw.data(), ckk);
      }
      if (x->requires_grad) {
        detail::gemm(true, false, ckk, spatial, O, T(1), w->value.data(), ckk, gy, spatial,
                     T(0), col.data(), spatial);
        col2im_add(col.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                   gx.data() + n * C * H * W);
      }
    }
    if (w->requires_grad) w->accumulate(gw);
    if (x->requires_grad) x->accumulate(gx);
    if (b && b->requires_grad) {
      Tensor<T> gb({O});
      for (int64_t n = 0; n < B; ++n)
        for (int64_t o = 0; o < O; ++o) {
          const T* gy = node.grad.data() + (n * O + o) * spatial;
          T acc = 0;
          for (int64_t s = 0; s < spatial; ++s) acc += gy[s];
          gb[o] += acc;
        }
      b->accumulate(gb);
    }
  };
  return make_node<T>(std::move(y), {x, w, b}, std::move(back));
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                  bool update_running, T momentum, T eps) {
  const int rank = x->value.rank();
  if (rank != 2 && rank != 4) throw ShapeError("batch_norm: input must be rank 2 or 4");
  const int64_t B = x->value.dim(0), C = x->value.dim(1);
  const int64_t S = rank == 4 ? x->value.dim(2) * x->value.dim(3) : 1;
  const int64_t N = B * S;
  if (gamma->value.numel() != C || beta->value.numel() != C)
    throw ShapeError("batch_norm: gamma/beta must have " + std::to_string(C) + " elements");
  if (running_mean.numel() != C || running_var.numel() != C)
    throw ShapeError("batch_norm: running statistics must have " + std::to_string(C) +
                     " elements");
  if (training && N < 2) throw ShapeError("batch_norm: need at least 2 values per channel");

  std::vector<T> mean(static_cast<size_t>(C)), inv_std(static_cast<size_t>(C));
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      T m = 0;
      for (int64_t n = 0; n < B; ++n) {
        const T* src = x->value.data() + (n * C + c) * S;
        for (int64_t s = 0; s < S; ++s) m += src[s];
      }
      m /= static_cast<T>(N);
      T v = 0;
      for (int64_t n = 0; n < B; ++n) {
        const T* src = x->value.data() + (n * C + c) * S;
        for (int64_t s = 0; s < S; ++s) {
          const T d = src[s] - m;
          v += d * d;
        }
      }
      v /= static_cast<T>(N);
      mean[static_cast<size_t>(c)] = m;
      inv_std[static_cast<size_t>(c)] = T(1) / std::sqrt(v + eps);
      if (update_running) {
        running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * m;
        running_var[c] = (T(1) - momentum) * running_var[c] + momentum * v;
      }
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[static_cast<size_t>(c)] = running_mean[c];
      inv_std[static_cast<size_t>(c)] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor<T> xhat(x->value.shape());
  Tensor<T> y(x->value.shape());
  for (int64_t n = 0; n < B; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* src = x->value.data() + (n * C + c) * S;
      T* xh = xhat.data() + (n * C + c) * S;
      T* dst = y.data() + (n * C + c) * S;
      const T m = mean[static_cast<size_t>(c)];
      const T is = inv_std[static_cast<size_t>(c)];
      const T g = gamma->value[c];
      const T bt = beta->value[c];
      for (int64_t s = 0; s < S; ++s) {
        xh[s] = (src[s] - m) * is;
        dst[s] = g * xh[s] + bt;
      }
    }

  auto back = [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), training,
               B, C, S, N](Node<T>& node) {
    // Per-channel reductions shared by all three gradients.
    std::vector<T> sum_dy(static_cast<size_t>(C), T(0));
    std::vector<T> sum_dy_xhat(static_cast<size_t>(C), T(0));
    for (int64_t n = 0; n < B; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const T* gy = node.grad.data() + (n * C + c) * S;
        const T* xh = xhat.data() + (n * C + c) * S;
        T a = 0, bsum = 0;
        for (int64_t s = 0; s < S; ++s) {
          a += gy[s];
          bsum += gy[s] * xh[s];
        }
        sum_dy[static_cast<size_t>(c)] += a;
        sum_dy_xhat[static_cast<size_t>(c)] += bsum;
      }
    if (gamma->requires_grad) {
      Tensor<T> g(gamma->value.shape());
      for (int64_t c = 0; c < C; ++c) g[c] = sum_dy_xhat[static_cast<size_t>(c)];
      gamma->accumulate(g);
    }
    if (beta->requires_grad) {
      Tensor<T> g(beta->value.shape());
      for (int64_t c = 0; c < C; ++c) g[c] = sum_dy[static_cast<size_t>(c)];
      beta->accumulate(g);
    }
    if (x->requires_grad) {
      Tensor<T> gx(x->value.shape());
      for (int64_t n = 0; n < B; ++n)
        for (int64_t c = 0; c < C; ++c) {
          const T* gy = node.grad.data() + (n * C + c) * S;
          const T* xh = xhat.data() + (n * C + c) * S;
          T* dst = gx.data() + (n * C + c) * S;
          const T scale = gamma->value[c] * inv_std[static_cast<size_t>(c)];
          if (training) {
            const T mdy = sum_dy[static_cast<size_t>(c)] / static_cast<T>(N);
            const T mdyx = sum_dy_xhat[static_cast<size_t>(c)] / static_cast<T>(N);
            for (int64_t s = 0; s < S; ++s)
              dst[s] = scale * (gy[s] - mdy - xh[s] * mdyx);
          } else {
            for (int64_t s = 0; s < S; ++s) dst[s] = scale * gy[s];
          }
        }
      x->accumulate(gx);
    }
  };
  return make_node<T>(std::move(y), {x, gamma, beta}, std::move(back));
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  check_rank(x, 4, "global_avg_pool");
  const int64_t B = x->value.dim(0), C = x->value.dim(1);
  const int64_t S = x->value.dim(2) * x->value.dim(3);
  Tensor<T> y({B, C});
  for (int64_t n = 0; n < B; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* src = x->value.data() + (n * C + c) * S;
      T acc = 0;
      for (int64_t s = 0; s < S; ++s) acc += src[s];
      y.at(n, c) = acc / static_cast<T>(S);
    }
  return make_node<T>(std::move(y), {x}, [x, B, C, S](Node<T>& node) {
    if (!x->requires_grad) return;
    Tensor<T> g(x->value.shape());
    for (int64_t n = 0; n < B; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const T v = node.grad.at(n, c) / static_cast<T>(S);
        T* dst = g.data() + (n * C + c) * S;
        for (int64_t s = 0; s < S; ++s) dst[s] = v;
      }
    x->accumulate(g);
  });
}

template <typename T>
Var<T> global_max_pool(const Var<T>& x) {
  check_rank(x, 4, "global_max_pool");
  const int64_t B = x->value.dim(0), C = x->value.dim(1);
  const int64_t S = x->value.dim(2) * x->value.dim(3);
  if (S == 0) throw ShapeError("global_max_pool: empty spatial extent");
  Tensor<T> y({B, C});
  std::vector<int64_t> argmax(static_cast<size_t>(B * C));
  for (int64_t n = 0; n < B; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* src = x->value.data() + (n * C + c) * S;
      int64_t best = 0;
      for (int64_t s = 1; s < S; ++s)
        if (src[s] > src[best]) best = s;  // first maximum wins ties
      y.at(n, c) = src[best];
      argmax[static_cast<size_t>(n * C + c)] = best;
    }
  return make_node<T>(std::move(y), {x},
                      [x, B, C, S, argmax = std::move(argmax)](Node<T>& node) {
                        if (!x->requires_grad) return;
                        Tensor<T> g(x->value.shape());
                        for (int64_t i = 0; i < B * C; ++i)
                          g[i * S + argmax[static_cast<size_t>(i)]] = node.grad[i];
                        x->accumulate(g);
                      });
}

template <typename T>
Var<T> spatial_std_pool(const Var<T>& x) {
  check_rank(x, 4, "spatial_std_pool");
  const int64_t B = x->value.dim(0), C = x->value.dim(1);
  const int64_t S = x->value.dim(2) * x->value.dim(3);
  if (S == 0) throw ShapeError("spatial_std_pool: empty spatial extent");
  Tensor<T> y({B, C});
  Tensor<T> mu({B, C});
  for (int64_t n = 0; n < B; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* src = x->value.data() + (n * C + c) * S;
      T m = 0;
      for (int64_t s = 0; s < S; ++s) m += src[s];
      m /= static_cast<T>(S);
      T v = 0;
      for (int64_t s = 0; s < S; ++s) {
        const T d = src[s] - m;
        v += d * d;
      }
      mu.at(n, c) = m;
      y.at(n, c) = std::sqrt(v / static_cast<T>(S));  // population std
    }
  return make_node<T>(std::move(y), {x}, [x, B, C, S, mu = std::move(mu)](Node<T>& node) {
    if (!x->requires_grad) return;
    Tensor<T> g(x->value.shape());
    for (int64_t n = 0; n < B; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const T sd = node.value.at(n, c);
        if (sd == T(0)) continue;  // flat patch: subgradient 0
        const T scale = node.grad.at(n, c) / (static_cast<T>(S) * sd);
        const T m = mu.at(n, c);
        const T* src = x->value.data() + (n * C + c) * S;
        T* dst = g.data() + (n * C + c) * S;
        for (int64_t s = 0; s < S; ++s) dst[s] = scale * (src[s] - m);
      }
    x->accumulate(g);
  });
}

template <typename T>
Var<T> channel_mean_map(const Var<T>& x) {
  check_rank(x, 4, "channel_mean_map");
  const int64_t B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
                W = x->value.dim(3);
  const int64_t S = H * W;
  Tensor<T> y({B, 1, H, W});
  for (int64_t n = 0; n < B; ++n)
    for (int64_t s = 0; s < S; ++s) {
      T acc = 0;
      for (int64_t c = 0; c < C; ++c) acc += x->value[(n * C + c) * S + s];
      y[n * S + s] = acc / static_cast<T>(C);
    }
  return make_node<T>(std::move(y), {x}, [x, B, C, S](Node<T>& node) {
    if (!x->requires_grad) return;
    Tensor<T> g(x->value.shape());
    for (int64_t n = 0; n < B; ++n)
      for (int64_t s = 0; s < S; ++s) {
        const T v = node.grad[n * S + s] / static_cast<T>(C);
        for (int64_t c = 0; c < C; ++c) g[(n * C + c) * S + s] = v;
      }
    x->accumulate(g);
  });
}

template <typename T>
Var<T> channel_max_map(const Var<T>& x) {
  check_rank(x, 4, "channel_max_map");
  const int64_t B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
                W = x->value.dim(3);
  if (C == 0) throw ShapeError("channel_max_map: zero channels");
  const int64_t S = H * W;
  Tensor<T> y({B, 1, H, W});
  std::vector<int64_t> argmax(static_cast<size_t>(B * S));
  for (int64_t n = 0; n < B; ++n)
    for (int64_t s = 0; s < S; ++s) {
      int64_t best = 0;
      T bv = x->value[(n * C + 0) * S + s];
      for (int64_t c = 1; c < C; ++c) {
        const T v = x->value[(n * C + c) * S + s];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      y[n * S + s] = bv;
      argmax[static_cast<size_t>(n * S + s)] = best;
    }
  return make_node<T>(std::move(y), {x},
                      [x, B, C, S, argmax = std::move(argmax)](Node<T>& node) {
                        if (!x->requires_grad) return;
                        Tensor<T> g(x->value.shape());
                        for (int64_t n = 0; n < B; ++n)
                          for (int64_t s = 0; s < S; ++s) {
                            const int64_t c = argmax[static_cast<size_t>(n * S + s)];
                            g[(n * C + c) * S + s] = node.grad[n * S + s];
                          }
                        x->accumulate(g);
                      });
}

template <typename T>
Var<T> mul_channel(const Var<T>& x, const Var<T>& a) {
  check_rank(x, 4, "mul_channel");
  check_rank(a, 2, "mul_channel scale");
  const int64_t B = x->value.dim(0), C = x->value.dim(1);
  const int64_t S = x->value.dim(2) * x->value.dim(3);
  if (a->value.dim(0) != B || a->value.dim(1) != C)
    throw ShapeError("mul_channel: scale " + Tensor<T>::shape_str(a->value.shape()) +
                     " does not match input " + Tensor<T>::shape_str(x->value.shape()));
  Tensor<T> y(x->value.shape());
  for (int64_t n = 0; n < B; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T s = a->value.at(n, c);
      const T* src = x->value.data() + (n * C + c) * S;
      T* dst = y.data() + (n * C + c) * S;
      for (int64_t i = 0; i < S; ++i) dst[i] = src[i] * s;
    }
  return make_node<T>(std::move(y), {x, a}, [x, a, B, C, S](Node<T>& node) {
    if (x->requires_grad) {
      Tensor<T> g(x->value.shape());
      for (int64_t n = 0; n < B; ++n)
        for (int64_t c = 0; c < C; ++c) {
          const T s = a->value.at(n, c);
          const T* gy = node.grad.data() + (n * C + c) * S;
          T* dst = g.data() + (n * C + c) * S;
          for (int64_t i = 0; i < S; ++i) dst[i] = gy[i] * s;
        }
      x->accumulate(g);
    }
    if (a->requires_grad) {
      Tensor<T> g({B, C});
      for (int64_t n = 0; n < B; ++n)
        for (int64_t c = 0; c < C; ++c) {
          const T* gy = node.grad.data() + (n * C + c) * S;
          const T* src = x->value.data() + (n * C + c) * S;
          T acc = 0;
          for (int64_t i = 0; i < S; ++i) acc += gy[i] * src[i];
          g.at(n, c) = acc;
        }
      a->accumulate(g);
    }
  });
}

template <typename T>
Var<T> mul_spatial(const Var<T>& x, const Var<T>& s) {
  check_rank(x, 4, "mul_spatial");
  check_rank(s, 4, "mul_spatial map");
  const int64_t B = x->value.dim(0), C = x->value.dim(1);
  const int64_t S = x->value.dim(2) * x->value.dim(3);
  if (s->value.dim(0) != B || s->value.dim(1) != 1 || s->value.dim(2) != x->value.dim(2) ||
      s->value.dim(3) != x->value.dim(3))
    throw ShapeError("mul_spatial: map " + Tensor<T>::shape_str(s->value.shape()) +
                     " does not match input " + Tensor<T>::shape_str(x->value.shape()));
  Tensor<T> y(x->value.shape());
  for (int64_t n = 0; n < B; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* map = s->value.data() + n * S;
      const T* src = x->value.data() + (n * C + c) * S;
      T* dst = y.data() + (n * C + c) * S;
      for (int64_t i = 0; i < S; ++i) dst[i] = src[i] * map[i];
    }
  return make_node<T>(std::move(y), {x, s}, [x, s, B, C, S](Node<T>& node) {
    if (x->requires_grad) {
      Tensor<T> g(x->value.shape());
      for (int64_t n = 0; n < B; ++n)
        for (int64_t c = 0; c < C; ++c) {
          const T* map = s->value.data() + n * S;
          const T* gy = node.grad.data() + (n * C + c) * S;
          T* dst = g.data() + (n * C + c) * S;
          for (int64_t i = 0; i < S; ++i) dst[i] = gy[i] * map[i];
        }
      x->accumulate(g);
    }
    if (s->requires_grad) {
      Tensor<T> g(s->value.shape());
      for (int64_t n = 0; n < B; ++n)
        for (int64_t c = 0; c < C; ++c) {
          const T* gy = node.grad.data() + (n * C + c) * S;
          const T* src = x->value.data() + (n * C + c) * S;
          T* dst = g.data() + n * S;
          for (int64_t i = 0; i < S; ++i) dst[i] += gy[i] * src[i];
        }
      s->accumulate(g);
    }
  });
}

template <typename T>
Var<T> mul_rowvec(const Var<T>& x, const Var<T>& v) {
  check_rank(x, 2, "mul_rowvec");
  const int64_t B = x->value.dim(0), C = x->value.dim(1);
  if (v->value.numel() != C)
    throw ShapeError("mul_rowvec: vector has " + std::to_string(v->value.numel()) +
                     " elements, rows have " + std::to_string(C));
  Tensor<T> y(x->value.shape());
  for (int64_t i = 0; i < B; ++i)
    for (int64_t c = 0; c < C; ++c) y.at(i, c) = x->value.at(i, c) * v->value[c];
  return make_node<T>(std::move(y), {x, v}, [x, v, B, C](Node<T>& node) {
    if (x->requires_grad) {
      Tensor<T> g(x->value.shape());
      for (int64_t i = 0; i < B; ++i)
        for (int64_t c = 0; c < C; ++c) g.at(i, c) = node.grad.at(i, c) * v->value[c];
      x->accumulate(g);
    }
    if (v->requires_grad) {
      Tensor<T> g(v->value.shape());
      for (int64_t i = 0; i < B; ++i)
        for (int64_t c = 0; c < C; ++c) g[c] += node.grad.at(i, c) * x->value.at(i, c);
      v->accumulate(g);
    }
  });
}

template <typename T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& v) {
  check_rank(x, 2, "add_rowvec");
  const int64_t B = x->value.dim(0), C = x->value.dim(1);
  if (v->value.numel() != C)
    throw ShapeError("add_rowvec: vector has " + std::to_string(v->value.numel()) +
                     " elements, rows have " + std::to_string(C));
  Tensor<T> y(x->value.shape());
  for (int64_t i = 0; i < B; ++i)
    for (int64_t c = 0; c < C; ++c) y.at(i, c) = x->value.at(i, c) + v->value[c];
  return make_node<T>(std::move(y), {x, v}, [x, v, B, C](Node<T>& node) {
    if (x->requires_grad) x->accumulate(node.grad);
    if (v->requires_grad) {
      Tensor<T> g(v->value.shape());
      for (int64_t i = 0; i < B; ++i)
        for (int64_t c = 0; c < C; ++c) g[c] += node.grad.at(i, c);
      v->accumulate(g);
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int64_t B = parts[0]->value.dim(0);
  int64_t total = 0;
  for (const auto& p : parts) {
    check_rank(p, 2, "concat_cols");
    if (p->value.dim(0) != B) throw ShapeError("concat_cols: batch sizes differ");
    total += p->value.dim(1);
  }
  Tensor<T> y({B, total});
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t K = p->value.dim(1);
    for (int64_t i = 0; i < B; ++i)
      for (int64_t k = 0; k < K; ++k) y.at(i, off + k) = p->value.at(i, k);
    off += K;
  }
  std::vector<Var<T>> parents(parts.begin(), parts.end());
  return make_node<T>(std::move(y), parents, [parts, B, total](Node<T>& node) {
    int64_t off = 0;
    for (const auto& p : parts) {
      const int64_t K = p->value.dim(1);
      if (p->requires_grad) {
        Tensor<T> g({B, K});
        for (int64_t i = 0; i < B; ++i)
          for (int64_t k = 0; k < K; ++k) g.at(i, k) = node.grad.at(i, off + k);
        p->accumulate(g);
      }
      off += K;
    }
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, int64_t start, int64_t len) {
  check_rank(x, 2, "slice_cols");
  const int64_t B = x->value.dim(0), K = x->value.dim(1);
  if (start < 0 || len < 0 || start + len > K)
    throw ShapeError("slice_cols: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of " + std::to_string(K));
  Tensor<T> y({B, len});
  for (int64_t i = 0; i < B; ++i)
    for (int64_t k = 0; k < len; ++k) y.at(i, k) = x->value.at(i, start + k);
  return make_node<T>(std::move(y), {x}, [x, B, start, len](Node<T>& node) {
    if (!x->requires_grad) return;
    Tensor<T> g(x->value.shape());
    for (int64_t i = 0; i < B; ++i)
      for (int64_t k = 0; k < len; ++k) g.at(i, start + k) = node.grad.at(i, k);
    x->accumulate(g);
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  check_rank(a, 4, "concat_channels");
  check_rank(b, 4, "concat_channels");
  const int64_t B = a->value.dim(0), Ca = a->value.dim(1), Cb = b->value.dim(1);
  const int64_t H = a->value.dim(2), W = a->value.dim(3);
  if (b->value.dim(0) != B || b->value.dim(2) != H || b->value.dim(3) != W)
    throw ShapeError("concat_channels: " + Tensor<T>::shape_str(a->value.shape()) + " vs " +
                     Tensor<T>::shape_str(b->value.shape()));
  const int64_t S = H * W;
  Tensor<T> y({B, Ca + Cb, H, W});
  for (int64_t n = 0; n < B; ++n) {
    std::copy(a->value.data() + n * Ca * S, a->value.data() + (n + 1) * Ca * S,
              y.data() + n * (Ca + Cb) * S);
    std::copy(b->value.data() + n * Cb * S, b->value.data() + (n + 1) * Cb * S,
              y.data() + n * (Ca + Cb) * S + Ca * S);
  }
  return make_node<T>(std::move(y), {a, b}, [a, b, B, Ca, Cb, S](Node<T>& node) {
    if (a->requires_grad) {
      Tensor<T> g(a->value.shape());
      for (int64_t n = 0; n < B; ++n)
        std::copy(node.grad.data() + n * (Ca + Cb) * S,
                  node.grad.data() + n * (Ca + Cb) * S + Ca * S, g.data() + n * Ca * S);
      a->accumulate(g);
    }
    if (b->requires_grad) {
      Tensor<T> g(b->value.shape());
      for (int64_t n = 0; n < B; ++n)
        std::copy(node.grad.data() + n * (Ca + Cb) * S + Ca * S,
                  node.grad.data() + (n + 1) * (Ca + Cb) * S, g.data() + n * Cb * S);
      b->accumulate(g);
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<int64_t> shape) {
  Tensor<T> y = x->value.reshaped(std::move(shape));
  return make_node<T>(std::move(y), {x}, [x](Node<T>& node) {
    if (!x->requires_grad) return;
    x->accumulate(node.grad.reshaped(x->value.shape()));
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  T acc = 0;
  for (int64_t i = 0; i < x->value.numel(); ++i) acc += x->value[i];
  Tensor<T> y({1});
  y[0] = acc;
  return make_node<T>(std::move(y), {x}, [x](Node<T>& node) {
    if (!x->requires_grad) return;
    x->accumulate(Tensor<T>::full(x->value.shape(), node.grad[0]));
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  const int64_t n = x->value.numel();
  if (n == 0) throw ShapeError("mean_all: empty tensor");
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += x->value[i];
  Tensor<T> y({1});
  y[0] = acc / static_cast<T>(n);
  return make_node<T>(std::move(y), {x}, [x, n](Node<T>& node) {
    if (!x->requires_grad) return;
    x->accumulate(Tensor<T>::full(x->value.shape(), node.grad[0] / static_cast<T>(n)));
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax_rows: expected rank 2");
  const int64_t B = logits.dim(0), K = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (int64_t i = 0; i < B; ++i) {
    T m = logits.at(i, 0);
    for (int64_t k = 1; k < K; ++k) m = std::max(m, logits.at(i, k));
    T z = 0;
    for (int64_t k = 0; k < K; ++k) {
      p.at(i, k) = std::exp(logits.at(i, k) - m);
      z += p.at(i, k);
    }
    for (int64_t k = 0; k < K; ++k) p.at(i, k) /= z;
  }
  return p;
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels,
                             Tensor<T>* probs_out) {
  check_rank(logits, 2, "softmax_cross_entropy");
  const int64_t B = logits->value.dim(0), K = logits->value.dim(1);
  if (static_cast<int64_t>(labels.size()) != B)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(B));
  for (int y : labels)
    if (y < 0 || y >= K)
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");

  Tensor<T> p = softmax_rows(logits->value);
  T loss = 0;
  for (int64_t i = 0; i < B; ++i) {
    // log p[y] computed from logits directly for stability.
    T m = logits->value.at(i, 0);
    for (int64_t k = 1; k < K; ++k) m = std::max(m, logits->value.at(i, k));
    T z = 0;
    for (int64_t k = 0; k < K; ++k) z += std::exp(logits->value.at(i, k) - m);
    loss -= logits->value.at(i, labels[static_cast<size_t>(i)]) - m - std::log(z);
  }
  loss /= static_cast<T>(B);
  if (probs_out) *probs_out = p;

  Tensor<T> y({1});
  y[0] = loss;
  return make_node<T>(std::move(y), {logits},
                      [logits, labels, p = std::move(p), B, K](Node<T>& node) {
                        if (!logits->requires_grad) return;
                        const T g = node.grad[0] / static_cast<T>(B);
                        Tensor<T> gl({B, K});
                        for (int64_t i = 0; i < B; ++i)
                          for (int64_t k = 0; k < K; ++k) {
                            T v = p.at(i, k);
                            if (k == labels[static_cast<size_t>(i)]) v -= T(1);
                            gl.at(i, k) = g * v;
                          }
                        logits->accumulate(gl);
                      });
}

#define REATT_INSTANTIATE_OPS(T)                                                          \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                   \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                   \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                   \
  template Var<T> square<T>(const Var<T>&);                                               \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                        \
  template Var<T> mul_scalar<T>(const Var<T>&, T);                                        \
  template Var<T> relu<T>(const Var<T>&);                                                 \
  template Var<T> sigmoid<T>(const Var<T>&);                                              \
  template Var<T> tanh_op<T>(const Var<T>&);                                              \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                 \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int);       \
  template Var<T> batch_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&, \
                                Tensor<T>&, bool, bool, T, T);                            \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                      \
  template Var<T> global_max_pool<T>(const Var<T>&);                                      \
  template Var<T> spatial_std_pool<T>(const Var<T>&);                                     \
  template Var<T> channel_mean_map<T>(const Var<T>&);                                     \
  template Var<T> channel_max_map<T>(const Var<T>&);                                      \
  template Var<T> mul_channel<T>(const Var<T>&, const Var<T>&);                           \
  template Var<T> mul_spatial<T>(const Var<T>&, const Var<T>&);                           \
  template Var<T> mul_rowvec<T>(const Var<T>&, const Var<T>&);                            \
  template Var<T> add_rowvec<T>(const Var<T>&, const Var<T>&);                            \
  template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                             \
  template Var<T> slice_cols<T>(const Var<T>&, int64_t, int64_t);                         \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                       \
  template Var<T> reshape<T>(const Var<T>&, std::vector<int64_t>);                        \
  template Var<T> sum_all<T>(const Var<T>&);                                              \
  template Var<T> mean_all<T>(const Var<T>&);                                             \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                   \
  template Var<T> softmax_cross_entropy<T>(const Var<T>&, const std::vector<int>&,        \
                                           Tensor<T>*);

REATT_INSTANTIATE_OPS(float)
REATT_INSTANTIATE_OPS(double)
#undef REATT_INSTANTIATE_OPS

}  // namespace reatt
