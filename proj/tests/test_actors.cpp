#include <cmath>
#include <cstring>
#include <vector>

#include <doctest.h>

#include "oracles.hpp"
#include "reatt/actors.hpp"

using namespace reatt;

namespace {

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

bool all_in_open_unit(const Tensor<double>& t) {
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!(t[i] > 0.0 && t[i] < 1.0)) return false;
  return true;
}

bool bitwise_equal(const Tensor<double>& a, const Tensor<double>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.numel())) == 0;
}

}  // namespace

TEST_CASE("channel attention matches the squeeze-excite oracle") {
  Rng rng(31);
  ParamRegistry<double> reg;
  auto actor = make_channel_actor<double>(reg, rng, "a", 8, 4, false);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor<double> f = oracle::random_tensor(rng, {3, 8, 4, 5}, -2.0, 2.0);
    auto action = channel_attention(make_constant(Tensor<double>(f)), actor);
    CHECK(action.kind == ActionKind::channel);
    Tensor<double> expect =
        oracle::se_channel(f, actor.fc0.w->value, actor.fc0.b->value, actor.fc1.w->value,
                           actor.fc1.b->value);
    CHECK(max_abs_diff(action.values->value, expect) < 1e-12);
    CHECK(all_in_open_unit(action.values->value));
  }
}

TEST_CASE("cbam channel attention sums both branches before the sigmoid") {
  Rng rng(32);
  ParamRegistry<double> reg;
  auto actor = make_channel_actor<double>(reg, rng, "a", 6, 2, true);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor<double> f = oracle::random_tensor(rng, {2, 6, 5, 3}, -2.0, 2.0);
    auto action = cbam_channel_attention(make_constant(Tensor<double>(f)), actor);
    Tensor<double> expect =
        oracle::cbam_channel(f, actor.fc0.w->value, actor.fc0.b->value, actor.fc1.w->value,
                             actor.fc1.b->value);
    CHECK(max_abs_diff(action.values->value, expect) < 1e-12);

    // Summing the two sigmoided branches instead would disagree.
    Tensor<double> avg_only =
        oracle::se_channel(f, actor.fc0.w->value, actor.fc0.b->value, actor.fc1.w->value,
                           actor.fc1.b->value);
    CHECK(max_abs_diff(action.values->value, avg_only) > 1e-6);
  }
}

TEST_CASE("ChannelActor::forward follows its branch flag") {
  Rng rng(33);
  ParamRegistry<double> reg;
  auto plain = make_channel_actor<double>(reg, rng, "p", 5, 2, false);
  auto both = make_channel_actor<double>(reg, rng, "b", 5, 2, true);
  Tensor<double> f = oracle::random_tensor(rng, {2, 5, 3, 3});
  auto fv = make_constant(Tensor<double>(f));

  CHECK(bitwise_equal(plain.forward(fv).values->value,
                      channel_attention(fv, plain).values->value));
  CHECK(bitwise_equal(both.forward(fv).values->value,
                      cbam_channel_attention(fv, both).values->value));
}

TEST_CASE("spatial attention matches the 7x7 oracle") {
  Rng rng(34);
  ParamRegistry<double> reg;
  auto actor = make_spatial_actor<double>(reg, rng, "s");
  for (int rep = 0; rep < 10; ++rep) {
    Tensor<double> f = oracle::random_tensor(rng, {2, 8, 6, 6}, -2.0, 2.0);
    auto action = spatial_attention(make_constant(Tensor<double>(f)), actor);
    CHECK(action.kind == ActionKind::spatial);
    CHECK(action.values->value.shape() == std::vector<int64_t>{2, 1, 6, 6});
    Tensor<double> expect = oracle::spatial_gate(f, actor.conv.w->value, actor.conv.b->value);
    CHECK(max_abs_diff(action.values->value, expect) < 1e-12);
    CHECK(all_in_open_unit(action.values->value));
  }
}

TEST_CASE("style attention matches the SRM oracle in training mode") {
  Rng rng(35);
  ParamRegistry<double> reg;
  auto actor = make_style_actor<double>(reg, rng, "st", 7);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor<double> f = oracle::random_tensor(rng, {4, 7, 3, 4}, -2.0, 2.0);
    auto action = style_attention(make_constant(Tensor<double>(f)), actor, true, false);
    CHECK(action.kind == ActionKind::style);
    Tensor<double> expect =
        oracle::style_gate(f, actor.cfc_w->value, actor.cfc_b->value, actor.bn.gamma->value,
                           actor.bn.beta->value, 1e-5);
    CHECK(max_abs_diff(action.values->value, expect) < 1e-12);
  }
}

TEST_CASE("style attention moves running statistics only when asked") {
  Rng rng(36);
  ParamRegistry<double> reg;
  auto actor = make_style_actor<double>(reg, rng, "st", 5);
  Tensor<double> f = oracle::random_tensor(rng, {6, 5, 4, 4});
  auto fv = make_constant(Tensor<double>(f));

  Tensor<double> rm_before = *actor.bn.running_mean;
  style_attention(fv, actor, true, false);
  CHECK(bitwise_equal(*actor.bn.running_mean, rm_before));

  style_attention(fv, actor, true, true);
  CHECK_FALSE(bitwise_equal(*actor.bn.running_mean, rm_before));

  // Eval mode normalizes with the stored averages and never updates them.
  Tensor<double> rm_mid = *actor.bn.running_mean;
  auto eval_a = style_attention(fv, actor, false, false);
  auto eval_b = style_attention(fv, actor, false, true);
  CHECK(bitwise_equal(*actor.bn.running_mean, rm_mid));
  CHECK(bitwise_equal(eval_a.values->value, eval_b.values->value));
}

TEST_CASE("reduced_width floors at 4 and caps at C") {
  CHECK(reduced_width(64, 16) == 4);
  CHECK(reduced_width(64, 4) == 16);
  CHECK(reduced_width(32, 16) == 4);
  CHECK(reduced_width(16, 16) == 4);
  CHECK(reduced_width(8, 16) == 4);
  CHECK(reduced_width(3, 16) == 3);
  CHECK(reduced_width(4, 1) == 4);
  CHECK(reduced_width(128, 16) == 8);
}

TEST_CASE("mean_substitute replaces each sample by its own mean") {
  Rng rng(37);

  SUBCASE("channel action") {
    Tensor<double> vals = oracle::random_tensor(rng, {3, 6}, 0.1, 0.9);
    AttentionAction<double> a{ActionKind::channel, make_leaf(Tensor<double>(vals), true)};
    auto m = mean_substitute(a);
    CHECK(m.kind == ActionKind::channel);
    CHECK_FALSE(m.values->requires_grad);
    for (int64_t n = 0; n < 3; ++n) {
      long double acc = 0.0L;
      for (int64_t c = 0; c < 6; ++c) acc += vals.at(n, c);
      const double mean = static_cast<double>(acc / 6.0L);
      for (int64_t c = 0; c < 6; ++c)
        CHECK(m.values->value.at(n, c) == doctest::Approx(mean).epsilon(1e-15));
    }
  }

  SUBCASE("substitution is bitwise idempotent") {
    Tensor<double> vals = oracle::random_tensor(rng, {4, 1, 5, 5}, 0.0, 1.0);
    AttentionAction<double> a{ActionKind::spatial, make_constant(std::move(vals))};
    auto once = mean_substitute(a);
    auto twice = mean_substitute(once);
    CHECK(bitwise_equal(once.values->value, twice.values->value));
  }

  SUBCASE("a constant action is bitwise preserved") {
    Tensor<double> vals = Tensor<double>::full({3, 5}, 0.5);
    // A value whose mean is not exactly representable must still map to itself
    // once substituted.
    Tensor<double> odd = Tensor<double>::full({2, 7}, 1.0 / 3.0);
    for (const auto& t : {vals, odd}) {
      AttentionAction<double> a{ActionKind::style, make_constant(Tensor<double>(t))};
      CHECK(bitwise_equal(mean_substitute(a).values->value, t));
    }
  }
}

TEST_CASE("zeroed channel actor emits the constant one-half gate") {
  Rng rng(38);
  ParamRegistry<double> reg;
  auto actor = make_channel_actor<double>(reg, rng, "z", 6, 2, false);
  for (const auto& p : reg.params()) p.var->value.fill(0.0);
  Tensor<double> f = oracle::random_tensor(rng, {2, 6, 3, 3});
  auto action = channel_attention(make_constant(std::move(f)), actor);
  for (int64_t i = 0; i < action.values->value.numel(); ++i)
    CHECK(action.values->value[i] == 0.5);
}
