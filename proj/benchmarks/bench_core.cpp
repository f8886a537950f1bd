#include <benchmark/benchmark.h>

#include "reatt/backbone.hpp"
#include "reatt/critic.hpp"
#include "reatt/data.hpp"
#include "reatt/ops.hpp"
#include "reatt/rng.hpp"
#include "reatt/trainer.hpp"

namespace {

using namespace reatt;

template <typename T>
Tensor<T> random_batch(Rng& rng, int64_t b, int64_t c, int64_t h, int64_t w) {
  Tensor<T> t({b, c, h, w});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform());
  return t;
}

void bm_conv2d_forward(benchmark::State& state) {
  Rng rng(1);
  auto x = make_constant(random_batch<float>(rng, 32, 16, 16, 16));
  Tensor<float> tw({16, 16, 3, 3});
  for (int64_t i = 0; i < tw.numel(); ++i) tw[i] = static_cast<float>(rng.normal(0.0, 0.05));
  auto w = make_constant(std::move(tw));
  NoGradGuard guard;
  for (auto _ : state) {
    auto y = conv2d(x, w, Var<float>{}, 1, 1);
    benchmark::DoNotOptimize(y->value.data());
  }
}
BENCHMARK(bm_conv2d_forward);

void bm_conv2d_backward(benchmark::State& state) {
  Rng rng(2);
  auto x = make_leaf(random_batch<float>(rng, 32, 16, 16, 16), true);
  Tensor<float> tw({16, 16, 3, 3});
  for (int64_t i = 0; i < tw.numel(); ++i) tw[i] = static_cast<float>(rng.normal(0.0, 0.05));
  auto w = make_leaf(std::move(tw), true);
  for (auto _ : state) {
    auto loss = mean_all(conv2d(x, w, Var<float>{}, 1, 1));
    backward(loss);
    benchmark::DoNotOptimize(w->grad.data());
  }
}
BENCHMARK(bm_conv2d_backward);

void bm_channel_actor(benchmark::State& state) {
  Rng rng(3);
  ParamRegistry<float> reg;
  auto actor = make_channel_actor<float>(reg, rng, "a", 64, 16, false);
  auto f = make_constant(random_batch<float>(rng, 32, 64, 8, 8));
  NoGradGuard guard;
  for (auto _ : state) {
    auto a = channel_attention(f, actor);
    benchmark::DoNotOptimize(a.values->value.data());
  }
}
BENCHMARK(bm_channel_actor);

void bm_critic_step(benchmark::State& state) {
  Rng rng(4);
  ParamRegistry<float> reg;
  auto lstm = make_scalar_lstm<float>(reg, rng, "c", 64);
  auto f = make_constant(random_batch<float>(rng, 32, 64, 8, 8));
  NoGradGuard guard;
  auto reduced = reduce_state(f, ActionKind::channel);
  Tensor<float> ta({32, 64});
  for (int64_t i = 0; i < ta.numel(); ++i) ta[i] = static_cast<float>(rng.uniform());
  AttentionAction<float> act{ActionKind::channel, make_constant(std::move(ta))};
  auto flat = flatten_action(act);
  for (auto _ : state) {
    auto next = critic_step(reduced, flat, zero_critic_state<float>(32), lstm);
    benchmark::DoNotOptimize(next.h->value.data());
  }
}
BENCHMARK(bm_critic_step);

void bm_train_step(benchmark::State& state) {
  NetworkConfig cfg = desk_config(1, AttentionKind::channel, 10, 16);
  Network<float> net(cfg, 7);
  TrainConfig tc;
  tc.mode = TrainMode::reinforced;
  tc.batch_size = 32;
  RewardConfig rc;
  Trainer<float> trainer(net, tc, rc);
  Rng rng(5);
  Tensor<float> images = random_batch<float>(rng, 32, 3, 16, 16);
  std::vector<int> labels(32);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_int(10));
  for (auto _ : state) {
    auto bundle = trainer.train_step(images, labels, 0);
    benchmark::DoNotOptimize(bundle.l_c);
  }
}
BENCHMARK(bm_train_step)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
