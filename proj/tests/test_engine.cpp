#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "reatt/errors.hpp"
#include "reatt/ops.hpp"

using namespace reatt;

namespace {

Var<double> leaf(const Tensor<double>& t, bool req = true) {
  return make_leaf(Tensor<double>(t), req);
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Weighted scalar readout so finite differences see distinct per-element
// paths. Weights are cached per shape: rebuilding the loss for a finite
// difference must evaluate the same function.
struct Weighted {
  Rng rng{99};
  std::map<std::vector<int64_t>, Var<double>> cache;

  Var<double> operator()(const Var<double>& x) {
    Var<double>& w = cache[x->value.shape()];
    if (!w) w = make_constant(oracle::random_tensor(rng, x->value.shape()));
    return sum_all(mul(x, w));
  }
};

}  // namespace

TEST_CASE("elementwise ops compute values and gradients") {
  Rng rng(11);
  Tensor<double> ta = oracle::random_tensor(rng, {2, 3});
  Tensor<double> tb = oracle::random_tensor(rng, {2, 3});
  auto a = leaf(ta), b = leaf(tb);
  Weighted weighted;

  auto sum_node = add(a, b);
  auto diff = sub(a, b);
  auto prod = mul(a, b);
  auto sq = square(a);
  for (int64_t i = 0; i < ta.numel(); ++i) {
    CHECK(sum_node->value[i] == doctest::Approx(ta[i] + tb[i]).epsilon(1e-15));
    CHECK(diff->value[i] == doctest::Approx(ta[i] - tb[i]).epsilon(1e-15));
    CHECK(prod->value[i] == doctest::Approx(ta[i] * tb[i]).epsilon(1e-15));
    CHECK(sq->value[i] == doctest::Approx(ta[i] * ta[i]).epsilon(1e-15));
  }

  backward(sum_all(prod));
  for (int64_t i = 0; i < ta.numel(); ++i) {
    CHECK(a->grad[i] == doctest::Approx(tb[i]).epsilon(1e-12));
    CHECK(b->grad[i] == doctest::Approx(ta[i]).epsilon(1e-12));
  }

  auto report = gradcheck::compare(
      {{"a", a}, {"b", b}},
      [&] { return sum_all(square(add(mul(a, b), sub(a, b)))); });
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("scalar ops shift and scale") {
  Rng rng(12);
  auto a = leaf(oracle::random_tensor(rng, {4}));
  auto shifted = add_scalar(a, 2.5);
  auto scaled = mul_scalar(a, -3.0);
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(shifted->value[i] == doctest::Approx(a->value[i] + 2.5).epsilon(1e-15));
    CHECK(scaled->value[i] == doctest::Approx(a->value[i] * -3.0).epsilon(1e-15));
  }
  backward(sum_all(scaled));
  for (int64_t i = 0; i < 4; ++i) CHECK(a->grad[i] == doctest::Approx(-3.0).epsilon(1e-15));
}

TEST_CASE("activations match closed forms") {
  Tensor<double> tx({7}, {-20.0, -2.0, -0.5, 0.0, 0.5, 2.0, 20.0});
  auto x = leaf(tx);
  auto r = relu(x);
  auto s = sigmoid(x);
  auto t = tanh_op(x);
  for (int64_t i = 0; i < 7; ++i) {
    CHECK(r->value[i] == doctest::Approx(std::max(0.0, tx[i])).epsilon(1e-15));
    CHECK(s->value[i] == doctest::Approx(1.0 / (1.0 + std::exp(-tx[i]))).epsilon(1e-14));
    CHECK(t->value[i] == doctest::Approx(std::tanh(tx[i])).epsilon(1e-14));
  }
  CHECK(s->value[3] == 0.5);

  Rng rng(13);
  auto y = leaf(oracle::random_tensor(rng, {6}, -2.0, 2.0));
  auto report = gradcheck::compare(
      {{"y", y}}, [&] { return sum_all(mul(sigmoid(y), tanh_op(y))); });
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("linear matches the dense oracle") {
  Rng rng(14);
  Tensor<double> tx = oracle::random_tensor(rng, {3, 5});
  Tensor<double> tw = oracle::random_tensor(rng, {4, 5});
  Tensor<double> tb = oracle::random_tensor(rng, {4});
  auto x = leaf(tx), w = leaf(tw), b = leaf(tb);
  Weighted weighted;

  auto y = linear(x, w, b);
  CHECK(max_abs_diff(y->value, oracle::dense(tx, tw, tb)) < 1e-12);

  auto y_nb = linear(x, w, Var<double>{});
  CHECK(max_abs_diff(y_nb->value, oracle::dense(tx, tw, Tensor<double>{})) < 1e-12);

  auto report = gradcheck::compare({{"x", x}, {"w", w}, {"b", b}},
                                   [&] { return weighted(linear(x, w, b)); });
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("conv2d matches the loop oracle") {
  Rng rng(15);
  Tensor<double> tx = oracle::random_tensor(rng, {2, 3, 5, 6});
  Tensor<double> tw = oracle::random_tensor(rng, {4, 3, 3, 3});
  Tensor<double> tb = oracle::random_tensor(rng, {4});
  auto x = leaf(tx), w = leaf(tw), b = leaf(tb);

  SUBCASE("stride 1 pad 1") {
    auto y = conv2d(x, w, b, 1, 1);
    CHECK(y->value.shape() == std::vector<int64_t>{2, 4, 5, 6});
    CHECK(max_abs_diff(y->value, oracle::conv2d(tx, tw, tb, 1, 1)) < 1e-12);
  }
  SUBCASE("stride 2 pad 1") {
    auto y = conv2d(x, w, b, 2, 1);
    CHECK(y->value.shape() == std::vector<int64_t>{2, 4, 3, 3});
    CHECK(max_abs_diff(y->value, oracle::conv2d(tx, tw, tb, 2, 1)) < 1e-12);
  }
  SUBCASE("7x7 pad 3 without bias") {
    Tensor<double> tw7 = oracle::random_tensor(rng, {1, 2, 7, 7});
    Tensor<double> tx7 = oracle::random_tensor(rng, {1, 2, 6, 6});
    auto y = conv2d(leaf(tx7), leaf(tw7), Var<double>{}, 1, 3);
    CHECK(y->value.shape() == std::vector<int64_t>{1, 1, 6, 6});
    CHECK(max_abs_diff(y->value, oracle::conv2d(tx7, tw7, Tensor<double>{}, 1, 3)) < 1e-12);
  }
  SUBCASE("gradients agree with finite differences") {
    Tensor<double> sx = oracle::random_tensor(rng, {1, 2, 4, 4});
    Tensor<double> sw = oracle::random_tensor(rng, {2, 2, 3, 3});
    Tensor<double> sb = oracle::random_tensor(rng, {2});
    auto cx = leaf(sx), cw = leaf(sw), cb = leaf(sb);
    Weighted weighted;
    auto report = gradcheck::compare(
        {{"x", cx}, {"w", cw}, {"b", cb}},
        [&] { return weighted(conv2d(cx, cw, cb, 2, 1)); });
    CHECK(report.max_rel_err < 1e-5);
  }
}

TEST_CASE("batch_norm uses batch statistics in training and running statistics in eval") {
  Rng rng(16);
  Tensor<double> tx = oracle::random_tensor(rng, {4, 3, 2, 2});
  Tensor<double> tg = oracle::random_tensor(rng, {3}, 0.5, 1.5);
  Tensor<double> tbeta = oracle::random_tensor(rng, {3});
  auto x = leaf(tx), gamma = leaf(tg), beta = leaf(tbeta);
  const double eps = 1e-5;

  oracle::BatchNormRef ref = oracle::batch_norm(tx, tg, tbeta, eps);

  SUBCASE("training output and running update") {
    Tensor<double> rm = Tensor<double>::zeros({3});
    Tensor<double> rv = Tensor<double>::full({3}, 1.0);
    auto y = batch_norm(x, gamma, beta, rm, rv, true, true, 0.1, eps);
    CHECK(max_abs_diff(y->value, ref.out) < 1e-12);
    for (int64_t c = 0; c < 3; ++c) {
      CHECK(rm[c] == doctest::Approx(0.1 * ref.mean[static_cast<size_t>(c)]).epsilon(1e-12));
      CHECK(rv[c] == doctest::Approx(0.9 + 0.1 * ref.var[static_cast<size_t>(c)]).epsilon(1e-12));
    }
  }
  SUBCASE("update_running=false leaves state untouched") {
    Tensor<double> rm = Tensor<double>::full({3}, 0.25);
    Tensor<double> rv = Tensor<double>::full({3}, 2.0);
    auto y = batch_norm(x, gamma, beta, rm, rv, true, false, 0.1, eps);
    CHECK(max_abs_diff(y->value, ref.out) < 1e-12);
    for (int64_t c = 0; c < 3; ++c) {
      CHECK(rm[c] == 0.25);
      CHECK(rv[c] == 2.0);
    }
  }
  SUBCASE("eval normalizes with the running averages") {
    Tensor<double> rm({3}, {0.1, -0.2, 0.3});
    Tensor<double> rv({3}, {1.5, 0.7, 2.2});
    auto y = batch_norm(x, gamma, beta, rm, rv, false, false, 0.1, eps);
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t s = 0; s < 4; ++s) {
          const double expect =
              (tx[(n * 3 + c) * 4 + s] - rm[c]) / std::sqrt(rv[c] + eps) * tg[c] + tbeta[c];
          CHECK(y->value[(n * 3 + c) * 4 + s] == doctest::Approx(expect).epsilon(1e-12));
        }
  }
  SUBCASE("rank-2 input normalizes over the batch only") {
    Tensor<double> t2 = oracle::random_tensor(rng, {5, 3});
    Tensor<double> rm = Tensor<double>::zeros({3});
    Tensor<double> rv = Tensor<double>::full({3}, 1.0);
    auto y = batch_norm(leaf(t2), gamma, beta, rm, rv, true, false, 0.1, eps);
    CHECK(max_abs_diff(y->value, oracle::batch_norm(t2, tg, tbeta, eps).out) < 1e-12);
  }
  SUBCASE("training-mode gradients agree with finite differences") {
    Weighted weighted;
    Tensor<double> rm = Tensor<double>::zeros({3});
    Tensor<double> rv = Tensor<double>::full({3}, 1.0);
    auto report = gradcheck::compare(
        {{"x", x}, {"gamma", gamma}, {"beta", beta}},
        [&] { return weighted(batch_norm(x, gamma, beta, rm, rv, true, false, 0.1, eps)); });
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("pooling ops match their oracles") {
  Rng rng(17);
  Tensor<double> tx = oracle::random_tensor(rng, {3, 4, 3, 5});
  auto x = leaf(tx);
  Weighted weighted;

  CHECK(max_abs_diff(global_avg_pool(x)->value, oracle::global_avg_pool(tx)) < 1e-12);
  CHECK(max_abs_diff(global_max_pool(x)->value, oracle::global_max_pool(tx)) < 1e-12);
  CHECK(max_abs_diff(spatial_std_pool(x)->value, oracle::spatial_std_pool(tx)) < 1e-12);
  CHECK(max_abs_diff(channel_mean_map(x)->value, oracle::channel_mean_map(tx)) < 1e-12);
  CHECK(max_abs_diff(channel_max_map(x)->value, oracle::channel_max_map(tx)) < 1e-12);

  auto report = gradcheck::compare({{"x", x}}, [&] {
    auto parts = concat_cols<double>({global_avg_pool(x), spatial_std_pool(x)});
    return weighted(parts);
  });
  CHECK(report.max_rel_err < 1e-4);

  auto max_report = gradcheck::compare(
      {{"x", x}}, [&] { return weighted(global_max_pool(x)); });
  CHECK(max_report.max_rel_err < 1e-5);

  auto map_report = gradcheck::compare(
      {{"x", x}}, [&] { return weighted(channel_max_map(x)); });
  CHECK(map_report.max_rel_err < 1e-5);
}

TEST_CASE("broadcast recalibration ops") {
  Rng rng(18);
  Tensor<double> tx = oracle::random_tensor(rng, {2, 3, 2, 4});
  Tensor<double> ta = oracle::random_tensor(rng, {2, 3});
  Tensor<double> ts = oracle::random_tensor(rng, {2, 1, 2, 4});
  auto x = leaf(tx), a = leaf(ta), s = leaf(ts);
  Weighted weighted;

  auto yc = mul_channel(x, a);
  auto ys = mul_spatial(x, s);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 4; ++j) {
          CHECK(yc->value.at(n, c, i, j) ==
                doctest::Approx(tx.at(n, c, i, j) * ta.at(n, c)).epsilon(1e-15));
          CHECK(ys->value.at(n, c, i, j) ==
                doctest::Approx(tx.at(n, c, i, j) * ts.at(n, 0, i, j)).epsilon(1e-15));
        }

  Tensor<double> tv = oracle::random_tensor(rng, {3});
  Tensor<double> tm = oracle::random_tensor(rng, {2, 3});
  auto v = leaf(tv), m = leaf(tm);
  auto rv = mul_rowvec(m, v);
  auto av = add_rowvec(m, v);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 3; ++c) {
      CHECK(rv->value.at(n, c) == doctest::Approx(tm.at(n, c) * tv[c]).epsilon(1e-15));
      CHECK(av->value.at(n, c) == doctest::Approx(tm.at(n, c) + tv[c]).epsilon(1e-15));
    }

  auto report = gradcheck::compare(
      {{"x", x}, {"a", a}, {"s", s}, {"v", v}, {"m", m}}, [&] {
        auto y = mul_spatial(mul_channel(x, a), s);
        auto pooled = global_avg_pool(y);
        return weighted(add_rowvec(mul_rowvec(add(pooled, m), v), v));
      });
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("concat, slice and reshape") {
  Rng rng(19);
  Tensor<double> ta = oracle::random_tensor(rng, {2, 2});
  Tensor<double> tb = oracle::random_tensor(rng, {2, 3});
  auto a = leaf(ta), b = leaf(tb);
  Weighted weighted;

  auto joined = concat_cols<double>({a, b});
  CHECK(joined->value.shape() == std::vector<int64_t>{2, 5});
  for (int64_t n = 0; n < 2; ++n) {
    for (int64_t j = 0; j < 2; ++j) CHECK(joined->value.at(n, j) == ta.at(n, j));
    for (int64_t j = 0; j < 3; ++j) CHECK(joined->value.at(n, 2 + j) == tb.at(n, j));
  }

  auto back = slice_cols(joined, 2, 3);
  CHECK(max_abs_diff(back->value, tb) < 1e-15);

  Tensor<double> t1 = oracle::random_tensor(rng, {2, 1, 3, 3});
  Tensor<double> t2 = oracle::random_tensor(rng, {2, 2, 3, 3});
  auto cc = concat_channels(leaf(t1, false), leaf(t2, false));
  CHECK(cc->value.shape() == std::vector<int64_t>{2, 3, 3, 3});
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 3; ++j) {
        CHECK(cc->value.at(n, 0, i, j) == t1.at(n, 0, i, j));
        CHECK(cc->value.at(n, 1, i, j) == t2.at(n, 0, i, j));
        CHECK(cc->value.at(n, 2, i, j) == t2.at(n, 1, i, j));
      }

  auto flat = reshape(cc, {2, 27});
  CHECK(flat->value.shape() == std::vector<int64_t>{2, 27});
  for (int64_t i = 0; i < 54; ++i) CHECK(flat->value[i] == cc->value[i]);

  auto report = gradcheck::compare({{"a", a}, {"b", b}}, [&] {
    auto j = concat_cols<double>({a, b});
    return weighted(slice_cols(j, 1, 3));
  });
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("reductions") {
  Tensor<double> tx({2, 2}, {1.0, 2.0, 3.0, 4.0});
  auto x = leaf(tx);
  CHECK(sum_all(x)->value[0] == doctest::Approx(10.0).epsilon(1e-15));
  CHECK(mean_all(x)->value[0] == doctest::Approx(2.5).epsilon(1e-15));
  backward(mean_all(x));
  for (int64_t i = 0; i < 4; ++i) CHECK(x->grad[i] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax and cross entropy match the long-double oracle") {
  Rng rng(20);
  Tensor<double> tl = oracle::random_tensor(rng, {4, 6}, -3.0, 3.0);
  std::vector<int> labels = {0, 5, 2, 2};

  Tensor<double> probs = softmax_rows(tl);
  for (int64_t n = 0; n < 4; ++n) {
    long double row = 0.0L;
    for (int64_t k = 0; k < 6; ++k) row += probs.at(n, k);
    CHECK(static_cast<double>(row) == doctest::Approx(1.0).epsilon(1e-12));
  }

  auto logits = leaf(tl);
  Tensor<double> probs_out;
  auto loss = softmax_cross_entropy(logits, labels, &probs_out);
  CHECK(loss->value[0] == doctest::Approx(oracle::softmax_cross_entropy(tl, labels)).epsilon(1e-12));
  CHECK(max_abs_diff(probs_out, probs) < 1e-12);

  Tensor<double> uniform = Tensor<double>::zeros({3, 10});
  auto u = softmax_cross_entropy<double>(leaf(uniform, false), {1, 2, 3}, nullptr);
  CHECK(u->value[0] == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  auto report = gradcheck::compare(
      {{"logits", logits}},
      [&] { return softmax_cross_entropy<double>(logits, labels, nullptr); });
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("backward passes on a shared graph are independent") {
  Rng rng(21);
  auto x = leaf(oracle::random_tensor(rng, {3}));
  auto y = leaf(oracle::random_tensor(rng, {3}));

  auto l1 = sum_all(mul(x, y));
  auto l2 = mean_all(square(x));

  backward(l1);
  std::vector<double> gx1(x->grad.data(), x->grad.data() + 3);
  for (int64_t i = 0; i < 3; ++i) CHECK(gx1[static_cast<size_t>(i)] == doctest::Approx(y->value[i]));

  backward(l2);
  for (int64_t i = 0; i < 3; ++i)
    CHECK(x->grad[i] == doctest::Approx(2.0 * x->value[i] / 3.0).epsilon(1e-12));
  // l2 does not reach y; its old gradient survives untouched.
  for (int64_t i = 0; i < 3; ++i) CHECK(y->grad[i] == doctest::Approx(x->value[i]));

  backward(l1);
  for (int64_t i = 0; i < 3; ++i)
    CHECK(x->grad[i] == doctest::Approx(gx1[static_cast<size_t>(i)]).epsilon(1e-15));
}

TEST_CASE("no-grad mode and detach cut the graph") {
  Rng rng(22);
  auto x = leaf(oracle::random_tensor(rng, {4}));
  auto y = leaf(oracle::random_tensor(rng, {4}));

  {
    NoGradGuard guard;
    auto z = sigmoid(x);
    CHECK_FALSE(z->requires_grad);
    CHECK(z->parents.empty());
  }
  CHECK(grad_enabled());

  auto z = mul(detach(x), y);
  backward(sum_all(z));
  CHECK(x->grad.empty());
  for (int64_t i = 0; i < 4; ++i) CHECK(y->grad[i] == doctest::Approx(x->value[i]));
}

TEST_CASE("shape violations throw ShapeError") {
  auto a = leaf(Tensor<double>::zeros({2, 3}), false);
  auto b = leaf(Tensor<double>::zeros({3, 2}), false);
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(mul(a, b), ShapeError);
  CHECK_THROWS_AS(linear(a, leaf(Tensor<double>::zeros({4, 5}), false), Var<double>{}),
                  ShapeError);
  auto img = leaf(Tensor<double>::zeros({1, 3, 4, 4}), false);
  CHECK_THROWS_AS(conv2d(img, leaf(Tensor<double>::zeros({2, 2, 3, 3}), false), Var<double>{}, 1, 1),
                  ShapeError);
  CHECK_THROWS_AS(mul_channel(img, leaf(Tensor<double>::zeros({1, 2}), false)), ShapeError);
}

TEST_CASE("backward requires a scalar loss") {
  auto x = leaf(Tensor<double>::zeros({2, 2}));
  auto y = add(x, x);
  CHECK_THROWS_AS(backward(y), std::invalid_argument);
}
