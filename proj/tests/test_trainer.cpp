#include <cmath>
#include <cstring>
#include <vector>

#include <doctest.h>

#include "oracles.hpp"
#include "reatt/errors.hpp"
#include "reatt/trainer.hpp"

using namespace reatt;

namespace {

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<size_t>(a.numel())) == 0;
}

template <typename T>
bool registries_bitwise_equal(const ParamRegistry<T>& a, const ParamRegistry<T>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.params().size(); ++i) {
    if (a.params()[i].name != b.params()[i].name) return false;
    if (!bitwise_equal(a.params()[i].var->value, b.params()[i].var->value)) return false;
  }
  return true;
}

template <typename T>
std::vector<Tensor<T>> registry_snapshot(const ParamRegistry<T>& reg) {
  std::vector<Tensor<T>> out;
  for (const auto& p : reg.params()) out.push_back(p.var->value);
  return out;
}

template <typename T>
bool snapshot_matches(const std::vector<Tensor<T>>& snap, const ParamRegistry<T>& reg) {
  if (snap.size() != reg.params().size()) return false;
  for (size_t i = 0; i < snap.size(); ++i)
    if (!bitwise_equal(snap[i], reg.params()[i].var->value)) return false;
  return true;
}

NetworkConfig toy_net_config() { return desk_config(1, AttentionKind::channel, 4, 8); }

struct ToyBatch {
  Tensor<double> images;
  std::vector<int> labels;
};

ToyBatch toy_batch(uint64_t seed, int64_t b = 8) {
  Rng rng(seed);
  ToyBatch out{oracle::random_tensor(rng, {b, 3, 8, 8}, 0.0, 1.0), {}};
  for (int64_t i = 0; i < b; ++i) out.labels.push_back(static_cast<int>(i % 4));
  return out;
}

TrainConfig base_train_config() {
  TrainConfig cfg;
  cfg.mode = TrainMode::reinforced;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.lr.initial = 0.05;
  return cfg;
}

}  // namespace

TEST_CASE("learning rate schedule decays at the listed epochs") {
  LrSchedule lr;
  CHECK(lr.rate_at(0) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(lr.rate_at(29) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(lr.rate_at(30) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(lr.rate_at(44) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(lr.rate_at(45) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(lr.rate_at(59) == doctest::Approx(0.001).epsilon(1e-12));

  LrSchedule flat{0.2, {}, 0.5};
  CHECK(flat.rate_at(100) == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("train config validation") {
  TrainConfig cfg = base_train_config();
  CHECK_NOTHROW(cfg.validate(3));

  SUBCASE("batch size") {
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(3), ConfigError);
  }
  SUBCASE("negative lambda") {
    cfg.lambda_q = -0.1;
    CHECK_THROWS_AS(cfg.validate(3), ConfigError);
  }
  SUBCASE("stage out of range") {
    cfg.enabled_stages = {3};
    CHECK_THROWS_AS(cfg.validate(3), ConfigError);
  }
  SUBCASE("effective stages sort and default") {
    CHECK(cfg.effective_stages(3) == std::vector<int>{0, 1, 2});
    cfg.enabled_stages = {2, 0};
    CHECK(cfg.effective_stages(3) == std::vector<int>{0, 2});
  }
  SUBCASE("mode strings round-trip") {
    CHECK(train_mode_from_string("reinforced") == TrainMode::reinforced);
    CHECK(train_mode_from_string("supervised") == TrainMode::supervised);
    CHECK(to_string(TrainMode::supervised) == "supervised");
    CHECK_THROWS_AS(train_mode_from_string("rl"), ConfigError);
  }
}

TEST_CASE("sgd replicates the hand-rolled momentum update") {
  Rng rng(71);
  ParamRegistry<double> reg;
  auto p = reg.add("p", oracle::random_tensor(rng, {5}));
  Tensor<double> initial = p->value;
  Sgd<double> opt(reg.params(), 0.9, 1e-2);

  std::vector<double> buf(5, 0.0);
  std::vector<double> expect(initial.data(), initial.data() + 5);
  for (int step = 0; step < 4; ++step) {
    Tensor<double> g = oracle::random_tensor(rng, {5});
    for (int64_t i = 0; i < 5; ++i) {
      const double eff = g[i] + 1e-2 * expect[static_cast<size_t>(i)];
      buf[static_cast<size_t>(i)] = 0.9 * buf[static_cast<size_t>(i)] + eff;
      expect[static_cast<size_t>(i)] -= 0.05 * buf[static_cast<size_t>(i)];
    }
    opt.step(0.05, {g});
    for (int64_t i = 0; i < 5; ++i)
      CHECK(p->value[i] == doctest::Approx(expect[static_cast<size_t>(i)]).epsilon(1e-12));
  }

  SUBCASE("an empty gradient acts as zero") {
    Sgd<double> opt2(reg.params(), 0.9, 0.0);
    Tensor<double> before = p->value;
    opt2.step(0.05, {Tensor<double>{}});
    CHECK(bitwise_equal(before, p->value));
  }
  SUBCASE("count mismatch throws") {
    CHECK_THROWS_AS(opt.step(0.05, {}), ShapeError);
  }
  SUBCASE("shape mismatch throws") {
    CHECK_THROWS_AS(opt.step(0.05, {Tensor<double>::zeros({2})}), ShapeError);
  }
}

TEST_CASE("loss helpers match their definitions") {
  SUBCASE("classification loss equals the cross-entropy oracle") {
    Rng rng(72);
    Tensor<double> logits = oracle::random_tensor(rng, {5, 4}, -2.0, 2.0);
    std::vector<int> labels = {0, 3, 1, 2, 2};
    Prediction<double> pred{make_constant(Tensor<double>(logits)), softmax_rows(logits)};
    Tensor<double> probs;
    auto l = classification_loss<double>(pred, labels, &probs);
    CHECK(l->value[0] ==
          doctest::Approx(oracle::softmax_cross_entropy(logits, labels)).epsilon(1e-12));
    CHECK(bitwise_equal(probs, pred.probabilities));
  }
  SUBCASE("quality loss is the negated mean Q") {
    auto q1 = make_constant(Tensor<double>({2, 1}, {0.2, 0.4}));
    auto q2 = make_constant(Tensor<double>({2, 1}, {0.6, 0.0}));
    auto l = quality_loss<double>({q1, q2});
    CHECK(l->value[0] == doctest::Approx(-0.3).epsilon(1e-12));
    CHECK(quality_loss<double>({})->value[0] == 0.0);
  }
  SUBCASE("regression loss is the mean squared gap") {
    auto q1 = make_constant(Tensor<double>({2, 1}, {1.0, 0.0}));
    auto q2 = make_constant(Tensor<double>({2, 1}, {0.5, 0.5}));
    auto l = regression_loss<double>({q1, q2}, {{1.0, 1.0}, {0.5, -0.5}});
    // gaps: 0, -1, 0, 1 -> mean square 0.5
    CHECK(l->value[0] == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("train_step keeps the update partition") {
  auto batch = toy_batch(81);

  SUBCASE("lambda_r=0 leaves critics bitwise unchanged") {
    Network<double> net(toy_net_config(), 17);
    TrainConfig cfg = base_train_config();
    cfg.lambda_q = 1.0;
    cfg.lambda_r = 0.0;
    Trainer<double> tr(net, cfg, RewardConfig{});
    auto critics_before = registry_snapshot(net.critic_params());
    auto backbone_before = registry_snapshot(net.backbone_params());
    auto bundle = tr.train_step(batch.images, batch.labels, 0);
    CHECK(snapshot_matches(critics_before, net.critic_params()));
    CHECK(std::isfinite(bundle.l_r));
    CHECK_FALSE(snapshot_matches(backbone_before, net.backbone_params()));
  }

  SUBCASE("lambda_q=0 tracks the supervised trajectory bitwise") {
    Network<double> rl_net(toy_net_config(), 17);
    Network<double> sup_net(toy_net_config(), 17);
    REQUIRE(registries_bitwise_equal(rl_net.backbone_params(), sup_net.backbone_params()));

    TrainConfig rl_cfg = base_train_config();
    rl_cfg.lambda_q = 0.0;
    rl_cfg.lambda_r = 1.0;
    TrainConfig sup_cfg = base_train_config();
    sup_cfg.mode = TrainMode::supervised;

    Trainer<double> rl(rl_net, rl_cfg, RewardConfig{});
    Trainer<double> sup(sup_net, sup_cfg, RewardConfig{});

    auto critics_before = registry_snapshot(rl_net.critic_params());
    for (int step = 0; step < 3; ++step) {
      rl.train_step(batch.images, batch.labels, 0);
      sup.train_step(batch.images, batch.labels, 0);
      CHECK(registries_bitwise_equal(rl_net.backbone_params(), sup_net.backbone_params()));
      CHECK(registries_bitwise_equal(rl_net.actor_params(), sup_net.actor_params()));
    }
    // The regression loss still trains the critics.
    CHECK_FALSE(snapshot_matches(critics_before, rl_net.critic_params()));
  }

  SUBCASE("lambda_q>0 moves actors away from supervised after the backbone-equal first step") {
    Network<double> rl_net(toy_net_config(), 17);
    Network<double> sup_net(toy_net_config(), 17);

    TrainConfig rl_cfg = base_train_config();
    rl_cfg.lambda_q = 1.0;
    rl_cfg.lambda_r = 1.0;
    TrainConfig sup_cfg = base_train_config();
    sup_cfg.mode = TrainMode::supervised;

    Trainer<double> rl(rl_net, rl_cfg, RewardConfig{});
    Trainer<double> sup(sup_net, sup_cfg, RewardConfig{});
    rl.train_step(batch.images, batch.labels, 0);
    sup.train_step(batch.images, batch.labels, 0);

    // The backbone sees only the classification gradient on step one; the
    // actor update carries the extra quality term.
    CHECK(registries_bitwise_equal(rl_net.backbone_params(), sup_net.backbone_params()));
    CHECK_FALSE(registries_bitwise_equal(rl_net.actor_params(), sup_net.actor_params()));
  }

  SUBCASE("supervised mode reports empty rollout metrics") {
    Network<double> net(toy_net_config(), 17);
    TrainConfig cfg = base_train_config();
    cfg.mode = TrainMode::supervised;
    Trainer<double> tr(net, cfg, RewardConfig{});
    auto critics_before = registry_snapshot(net.critic_params());
    auto bundle = tr.train_step(batch.images, batch.labels, 0);
    CHECK(bundle.l_q == 0.0);
    CHECK(bundle.l_r == 0.0);
    CHECK(bundle.q_means.empty());
    CHECK(bundle.r_means.empty());
    CHECK(snapshot_matches(critics_before, net.critic_params()));
  }
}

TEST_CASE("train_step fills the loss bundle") {
  auto batch = toy_batch(82);
  Network<double> net(toy_net_config(), 19);
  TrainConfig cfg = base_train_config();
  Trainer<double> tr(net, cfg, RewardConfig{});

  auto bundle = tr.train_step(batch.images, batch.labels, 0);
  CHECK(bundle.batch == 8);
  CHECK(bundle.correct >= 0);
  CHECK(bundle.correct <= 8);
  CHECK(std::isfinite(bundle.l_c));
  CHECK(std::isfinite(bundle.l_q));
  CHECK(std::isfinite(bundle.l_r));
  REQUIRE(bundle.q_means.size() == 3);
  CHECK(bundle.q_means.count("s0.b0.channel") == 1);
  CHECK(bundle.q_means.count("s2.b0.channel") == 1);
  REQUIRE(bundle.r_means.size() == 3);
  CHECK(bundle.r_means.count("s1.b0") == 1);
  for (const auto& [key, r] : bundle.r_means) CHECK(std::isfinite(r));
}

TEST_CASE("enabled_stages gates rollouts, rewards and critic updates") {
  auto batch = toy_batch(83);
  Network<double> net(toy_net_config(), 21);
  TrainConfig cfg = base_train_config();
  cfg.enabled_stages = {1};
  Trainer<double> tr(net, cfg, RewardConfig{});

  auto plan = tr.rollout_plan();
  REQUIRE(plan.size() == 1);
  REQUIRE(plan[0].size() == 1);
  CHECK(plan[0][0] == BlockId{1, 0});

  auto before = registry_snapshot(net.critic_params());
  auto bundle = tr.train_step(batch.images, batch.labels, 0);
  CHECK(bundle.q_means.size() == 1);
  CHECK(bundle.q_means.count("s1.b0.channel") == 1);
  CHECK(bundle.r_means.size() == 1);
  CHECK(bundle.r_means.count("s1.b0") == 1);

  // Only the stage-1 critic may move.
  const auto& params = net.critic_params().params();
  for (size_t i = 0; i < params.size(); ++i) {
    const bool stage1 = params[i].name.find("s1") != std::string::npos;
    if (stage1)
      CHECK_FALSE(bitwise_equal(before[i], params[i].var->value));
    else
      CHECK(bitwise_equal(before[i], params[i].var->value));
  }
}

TEST_CASE("a single actor ascent step raises the mean Q") {
  Rng rng(84);
  ParamRegistry<double> actors;
  auto actor = make_channel_actor<double>(actors, rng, "a", 8, 4, false);
  ParamRegistry<double> critics;
  auto lstm = make_scalar_lstm<double>(critics, rng, "q", 8);

  Tensor<double> f = oracle::random_tensor(rng, {6, 8, 4, 4}, 0.0, 1.0);
  auto fv = make_constant(Tensor<double>(f));

  auto mean_q = [&] {
    auto action = channel_attention(fv, actor);
    auto state = critic_step(reduce_state(fv, ActionKind::channel), flatten_action(action),
                             zero_critic_state<double>(6), lstm);
    return mean_all(q_value(state));
  };

  const double before = mean_q()->value[0];
  auto loss = mul_scalar(mean_q(), -1.0);
  backward(loss);
  Sgd<double> opt(actors.params(), 0.0, 0.0);
  std::vector<Tensor<double>> grads;
  for (const auto& p : actors.params()) grads.push_back(p.var->grad);
  opt.step(1e-3, grads);
  const double after = mean_q()->value[0];
  CHECK(after > before);
}

TEST_CASE("200 critic-only steps halve the regression loss on a frozen set") {
  Rng rng(85);
  ParamRegistry<double> critics;
  auto lstm = make_scalar_lstm<double>(critics, rng, "q", 6);

  // Frozen tuples with rewards that actually depend on state and action.
  const int64_t n = 48;
  Tensor<double> states = oracle::random_tensor(rng, {n, 6}, -1.0, 1.0);
  Tensor<double> actions = oracle::random_tensor(rng, {n, 6}, 0.0, 1.0);
  Tensor<double> teacher = oracle::random_tensor(rng, {12, 1}, -0.8, 0.8);
  std::vector<double> rewards;
  for (int64_t i = 0; i < n; ++i) {
    long double acc = 0.0L;
    for (int64_t j = 0; j < 6; ++j)
      acc += states.at(i, j) * teacher[j] + actions.at(i, j) * teacher[6 + j];
    rewards.push_back(std::tanh(static_cast<double>(acc)));
  }

  auto loss_fn = [&] {
    auto state = critic_step(make_constant(Tensor<double>(states)),
                             make_constant(Tensor<double>(actions)),
                             zero_critic_state<double>(n), lstm);
    return regression_loss<double>({q_value(state)}, {rewards});
  };

  const double initial = loss_fn()->value[0];
  Sgd<double> opt(critics.params(), 0.9, 0.0);
  for (int step = 0; step < 200; ++step) {
    auto l = loss_fn();
    backward(l);
    std::vector<Tensor<double>> grads;
    for (const auto& p : critics.params()) grads.push_back(p.var->grad);
    opt.step(0.05, grads);
  }
  const double final_loss = loss_fn()->value[0];
  CHECK(final_loss <= 0.5 * initial);
}

TEST_CASE("train runs epochs with deterministic metrics") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.train_per_class = 8;
  spec.val_per_class = 4;
  spec.height = 8;
  spec.width = 8;
  Dataset<double> data = make_synthetic<double>(spec);

  auto run = [&](uint64_t seed) {
    Network<double> net(desk_config(1, AttentionKind::channel, 3, 8), seed);
    TrainConfig cfg = base_train_config();
    cfg.epochs = 2;
    cfg.batch_size = 6;
    cfg.seed = seed;
    Trainer<double> tr(net, cfg, RewardConfig{});
    std::vector<std::string> lines;
    auto history = tr.train(
        data, [&](const MetricRecord& r) { lines.push_back(to_json_line_stripped(r)); });
    return std::pair{history, lines};
  };

  auto [history, lines] = run(5);
  REQUIRE(history.size() == 2);
  CHECK(history[0].epoch == 0);
  CHECK(history[1].epoch == 1);
  CHECK(history[0].seconds >= 0.0);
  CHECK(history[0].train_acc >= 0.0);
  CHECK(history[0].train_acc <= 1.0);
  CHECK(history[0].val_acc >= 0.0);
  CHECK(history[0].val_acc <= 1.0);
  REQUIRE(history[0].q_means.size() == 3);
  REQUIRE(history[0].r_means.size() == 3);
  // Single-block stages are always scheduled, so no NaN entries here.
  for (const auto& [k, v] : history[0].r_means) CHECK(std::isfinite(v));

  auto [history2, lines2] = run(5);
  REQUIRE(lines.size() == lines2.size());
  for (size_t i = 0; i < lines.size(); ++i) CHECK(lines[i] == lines2[i]);

  auto [history3, lines3] = run(6);
  CHECK(lines3[0] != lines[0]);
}

TEST_CASE("the round-robin schedule leaves unscheduled blocks unmeasured") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.train_per_class = 6;
  spec.val_per_class = 2;
  spec.height = 8;
  spec.width = 8;
  Dataset<double> data = make_synthetic<double>(spec);

  Network<double> net(desk_config(2, AttentionKind::channel, 2, 8), 11);
  TrainConfig cfg = base_train_config();
  cfg.epochs = 2;
  cfg.batch_size = 4;
  Trainer<double> tr(net, cfg, RewardConfig{});
  auto history = tr.train(data, nullptr);
  REQUIRE(history.size() == 2);
  for (const auto& rec : history) {
    REQUIRE(rec.r_means.size() == 6);
    int finite = 0;
    for (const auto& [key, v] : rec.r_means) finite += std::isfinite(v) ? 1 : 0;
    CHECK(finite == 3);  // one scheduled block per stage per epoch
  }
  // Epoch 0 schedules block 0, epoch 1 block 1.
  for (const auto& [key, v] : history[0].r_means)
    CHECK(std::isfinite(v) == (key.find(".b0") != std::string::npos));
  for (const auto& [key, v] : history[1].r_means)
    CHECK(std::isfinite(v) == (key.find(".b1") != std::string::npos));
}

TEST_CASE("evaluate is gradient-free and in [0,1]") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.train_per_class = 4;
  spec.val_per_class = 6;
  spec.height = 8;
  spec.width = 8;
  Dataset<double> data = make_synthetic<double>(spec);
  Network<double> net(desk_config(1, AttentionKind::channel, 2, 8), 3);
  Trainer<double> tr(net, base_train_config(), RewardConfig{});
  const double acc1 = tr.evaluate(data.val, 5);
  const double acc2 = tr.evaluate(data.val, 12);
  CHECK(acc1 >= 0.0);
  CHECK(acc1 <= 1.0);
  CHECK(acc1 == doctest::Approx(acc2).epsilon(1e-12));
}

TEST_CASE("non-finite losses abort with the offending name") {
  auto batch = toy_batch(86);
  Network<double> net(toy_net_config(), 23);
  // Poison the classifier head; earlier layers cannot carry a NaN through
  // relu, whose max(0, x) maps NaN to zero.
  net.backbone_params().param("head.fc.b")->value[0] = std::nan("");
  Trainer<double> tr(net, base_train_config(), RewardConfig{});
  try {
    tr.train_step(batch.images, batch.labels, 0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("classification loss") != std::string::npos);
  }
}
