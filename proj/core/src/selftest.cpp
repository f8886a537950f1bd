#include "reatt/selftest.hpp"

#include <cmath>
#include <sstream>

#include "reatt/actors.hpp"
#include "reatt/critic.hpp"
#include "reatt/metrics.hpp"
#include "reatt/ops.hpp"
#include "reatt/reward.hpp"
#include "reatt/rng.hpp"

namespace reatt {

namespace {

using D = double;

Tensor<D> random_tensor(Rng& rng, std::vector<int64_t> shape, double scale) {
  Tensor<D> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

SelfTestResult check(const std::string& name, double err, double tol) {
  SelfTestResult r{name, err <= tol, ""};
  if (!r.passed) {
    std::ostringstream os;
    os << "error " << err << " exceeds " << tol;
    r.detail = os.str();
  }
  return r;
}

SelfTestResult sigmoid_oracle() {
  Rng rng(11);
  Tensor<D> x = random_tensor(rng, {4, 9}, 3.0);
  auto y = sigmoid(make_constant(x));
  double err = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    long double ref = 1.0L / (1.0L + std::exp(static_cast<long double>(-x[i])));
    err = std::max(err, std::abs(static_cast<double>(ref) - y->value[i]));
  }
  return check("sigmoid matches closed form", err, 1e-14);
}

SelfTestResult softmax_ce_oracle() {
  Rng rng(12);
  Tensor<D> logits = random_tensor(rng, {5, 7}, 2.0);
  std::vector<int> labels = {0, 3, 6, 2, 2};
  auto loss = softmax_cross_entropy<D>(make_constant(logits), labels, nullptr);
  long double total = 0;
  for (int64_t b = 0; b < 5; ++b) {
    long double mx = logits.at(b, 0);
    for (int64_t k = 1; k < 7; ++k) mx = std::max<long double>(mx, logits.at(b, k));
    long double denom = 0;
    for (int64_t k = 0; k < 7; ++k) denom += std::exp(static_cast<long double>(logits.at(b, k)) - mx);
    total += -(static_cast<long double>(logits.at(b, labels[static_cast<size_t>(b)])) - mx -
               std::log(denom));
  }
  double err = std::abs(static_cast<double>(total / 5) - loss->value[0]);
  return check("cross-entropy matches log-softmax oracle", err, 1e-12);
}

SelfTestResult channel_actor_oracle() {
  Rng rng(13);
  ParamRegistry<D> reg;
  Rng init(14);
  auto actor = make_channel_actor<D>(reg, init, "a", 8, 4, false);
  Tensor<D> f = random_tensor(rng, {2, 8, 3, 3}, 1.0);
  auto act = channel_attention(make_constant(f), actor);

  const Tensor<D>& w0 = actor.fc0.w->value;
  const Tensor<D>& b0 = actor.fc0.b->value;
  const Tensor<D>& w1 = actor.fc1.w->value;
  const Tensor<D>& b1 = actor.fc1.b->value;
  const int64_t hidden = w0.dim(0);
  double err = 0;
  for (int64_t b = 0; b < 2; ++b) {
    std::vector<long double> pooled(8, 0.0L);
    for (int64_t c = 0; c < 8; ++c) {
      long double s = 0;
      for (int64_t i = 0; i < 9; ++i) s += f[(b * 8 + c) * 9 + i];
      pooled[static_cast<size_t>(c)] = s / 9.0L;
    }
    std::vector<long double> mid(static_cast<size_t>(hidden), 0.0L);
    for (int64_t o = 0; o < hidden; ++o) {
      long double s = b0[o];
      for (int64_t c = 0; c < 8; ++c) s += static_cast<long double>(w0.at(o, c)) * pooled[static_cast<size_t>(c)];
      mid[static_cast<size_t>(o)] = std::max<long double>(s, 0.0L);
    }
    for (int64_t c = 0; c < 8; ++c) {
      long double s = b1[c];
      for (int64_t o = 0; o < hidden; ++o) s += static_cast<long double>(w1.at(c, o)) * mid[static_cast<size_t>(o)];
      long double ref = 1.0L / (1.0L + std::exp(-s));
      err = std::max(err, std::abs(static_cast<double>(ref) - act.values->value.at(b, c)));
    }
  }
  return check("channel actor matches squeeze-excite oracle", err, 1e-12);
}

SelfTestResult std_pool_oracle() {
  Rng rng(15);
  Tensor<D> f = random_tensor(rng, {3, 4, 2, 5}, 1.5);
  auto sd = spatial_std_pool(make_constant(f));
  double err = 0;
  for (int64_t b = 0; b < 3; ++b) {
    for (int64_t c = 0; c < 4; ++c) {
      long double mean = 0;
      for (int64_t i = 0; i < 10; ++i) mean += f[(b * 4 + c) * 10 + i];
      mean /= 10.0L;
      long double var = 0;
      for (int64_t i = 0; i < 10; ++i) {
        long double d = f[(b * 4 + c) * 10 + i] - mean;
        var += d * d;
      }
      long double ref = std::sqrt(var / 10.0L);
      err = std::max(err, std::abs(static_cast<double>(ref) - sd->value.at(b, c)));
    }
  }
  return check("spatial std pooling matches population oracle", err, 1e-12);
}

SelfTestResult lstm_oracle() {
  Rng rng(16);
  ParamRegistry<D> reg;
  Rng init(17);
  auto lstm = make_scalar_lstm<D>(reg, init, "c", 3);
  const int64_t batch = 3;
  Tensor<D> f = random_tensor(rng, {batch, 3}, 1.0);
  Tensor<D> a = random_tensor(rng, {batch, 3}, 0.5);
  Tensor<D> h0 = random_tensor(rng, {batch, 1}, 0.3);
  Tensor<D> c0 = random_tensor(rng, {batch, 1}, 0.3);
  CriticState<D> state{make_constant(h0), make_constant(c0)};
  auto next = critic_step(make_constant(f), make_constant(a), state, lstm);

  const Tensor<D>& w = lstm.w->value;
  const Tensor<D>& bias = lstm.b->value;
  double err = 0;
  for (int64_t b = 0; b < batch; ++b) {
    long double x[7];
    for (int64_t i = 0; i < 3; ++i) x[i] = f.at(b, i);
    for (int64_t i = 0; i < 3; ++i) x[3 + i] = a.at(b, i);
    x[6] = h0[b];
    long double z[4];
    for (int g = 0; g < 4; ++g) {
      long double s = bias[g];
      for (int64_t i = 0; i < 7; ++i) s += static_cast<long double>(w.at(g, i)) * x[i];
      z[g] = s;
    }
    auto sig = [](long double v) { return 1.0L / (1.0L + std::exp(-v)); };
    long double i_g = sig(z[0]), f_g = sig(z[1]), g_g = std::tanh(z[2]), o_g = sig(z[3]);
    long double c_next = f_g * static_cast<long double>(c0[b]) + i_g * g_g;
    long double h_next = o_g * std::tanh(c_next);
    err = std::max(err, std::abs(static_cast<double>(h_next) - next.h->value[b]));
    err = std::max(err, std::abs(static_cast<double>(c_next) - next.c->value[b]));
  }
  return check("critic recurrence matches LSTM oracle", err, 1e-12);
}

SelfTestResult reward_cases() {
  RewardConfig cfg;
  double err = std::abs(compute_reward<double>(0.8, 0.4, true, cfg) - 0.5);
  err = std::max(err, std::abs(compute_reward<double>(0.8, 0.4, false, cfg) - (-1.0)));
  err = std::max(err, std::abs(compute_reward<double>(0.6, 0.0, true, cfg) - 1.0));
  err = std::max(err, std::abs(compute_reward<double>(0.7, 0.7, true, cfg)));
  return check("reward branches match hand values", err, 1e-9);
}

SelfTestResult substitution_idempotent() {
  Rng rng(18);
  Tensor<D> raw = random_tensor(rng, {2, 16}, 1.0);
  for (int64_t i = 0; i < raw.numel(); ++i) raw[i] = 1.0 / (1.0 + std::exp(-raw[i]));
  AttentionAction<D> a{ActionKind::channel, make_constant(raw)};
  auto once = mean_substitute(a);
  auto twice = mean_substitute(once);
  for (int64_t i = 0; i < raw.numel(); ++i) {
    if (once.values->value[i] != twice.values->value[i]) {
      return {"mean substitution is idempotent", false,
              "second substitution changed element " + std::to_string(i)};
    }
  }
  Tensor<D> flat = Tensor<D>::full({2, 16}, 0.37);
  AttentionAction<D> c{ActionKind::channel, make_constant(flat)};
  auto sub = mean_substitute(c);
  for (int64_t i = 0; i < flat.numel(); ++i) {
    if (sub.values->value[i] != flat[i]) {
      return {"mean substitution is idempotent", false,
              "constant action was not preserved bitwise"};
    }
  }
  return {"mean substitution is idempotent", true, ""};
}

SelfTestResult gradient_probe() {
  Rng rng(19);
  auto w = make_leaf(random_tensor(rng, {3, 5}, 0.4), true);
  auto b = make_leaf(random_tensor(rng, {3}, 0.1), true);
  Tensor<D> x = random_tensor(rng, {4, 5}, 1.0);
  std::vector<int> labels = {0, 2, 1, 2};

  auto loss_value = [&]() {
    auto logits = linear(make_constant(x), w, b);
    return softmax_cross_entropy<D>(logits, labels, nullptr);
  };
  auto loss = loss_value();
  backward(loss);
  Tensor<D> grad = w->grad;

  double err = 0;
  const double h = 1e-6;
  for (int64_t i = 0; i < w->value.numel(); ++i) {
    const double keep = w->value[i];
    w->value[i] = keep + h;
    double up = loss_value()->value[0];
    w->value[i] = keep - h;
    double dn = loss_value()->value[0];
    w->value[i] = keep;
    double fd = (up - dn) / (2 * h);
    double denom = std::max(1.0, std::abs(fd));
    err = std::max(err, std::abs(fd - grad[i]) / denom);
  }
  return check("autograd matches central differences", err, 1e-6);
}

SelfTestResult schedule_round_robin() {
  std::vector<StageSpec> stages(2);
  stages[0].num_blocks = 3;
  stages[1].num_blocks = 2;
  for (int64_t epoch = 0; epoch < 7; ++epoch) {
    auto picks = select_bypass_blocks(epoch, stages, {});
    if (picks.size() != 2 || picks[0].block != static_cast<int>(epoch % 3) ||
        picks[1].block != static_cast<int>(epoch % 2)) {
      return {"bypass schedule cycles per stage", false,
              "wrong pick at epoch " + std::to_string(epoch)};
    }
  }
  return {"bypass schedule cycles per stage", true, ""};
}

SelfTestResult metric_round_trip() {
  MetricRecord r;
  r.epoch = 3;
  r.train_acc = 0.8125;
  r.val_acc = 0.79;
  r.l_c = 1.2345678911234;
  r.l_q = -0.0078125;
  r.l_r = 0.25;
  r.q_means = {{"s0.b0.channel", 0.03125}, {"s0.b1.channel", -0.111111111}};
  r.r_means = {{"s0.b0", 0.5}, {"s0.b1", std::nan("")}};
  r.seconds = 1.5;
  std::string once = to_json_line(r);
  std::string twice = to_json_line(metric_from_json_line(once));
  if (once != twice) {
    return {"metric line serialization is a fixed point", false, once + " vs " + twice};
  }
  return {"metric line serialization is a fixed point", true, ""};
}

}  // namespace

std::vector<SelfTestResult> run_selftests() {
  return {
      sigmoid_oracle(),      softmax_ce_oracle(),     channel_actor_oracle(),
      std_pool_oracle(),     lstm_oracle(),           reward_cases(),
      substitution_idempotent(), gradient_probe(),    schedule_round_robin(),
      metric_round_trip(),
  };
}

}  // namespace reatt
