#include "reatt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <tuple>

#include "reatt/errors.hpp"
#include "reatt/ops.hpp"
#include "reatt/rng.hpp"

namespace reatt {

std::string to_string(TrainMode mode) {
  return mode == TrainMode::reinforced ? "reinforced" : "supervised";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "reinforced") return TrainMode::reinforced;
  if (s == "supervised") return TrainMode::supervised;
  throw ConfigError("train.mode must be \"reinforced\" or \"supervised\", got \"" + s + "\"");
}

double LrSchedule::rate_at(int epoch) const {
  double r = initial;
  for (int e : decay_epochs) {
    if (epoch >= e) r *= decay_factor;
  }
  return r;
}

void TrainConfig::validate(int num_stages) const {
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (lambda_q < 0) throw ConfigError("train.lambda_q must be nonnegative");
  if (lambda_r < 0) throw ConfigError("train.lambda_r must be nonnegative");
  if (momentum < 0 || momentum >= 1) throw ConfigError("train.momentum must lie in [0, 1)");
  if (weight_decay < 0) throw ConfigError("train.weight_decay must be nonnegative");
  if (lr.initial <= 0) throw ConfigError("train.lr.initial must be positive");
  if (lr.decay_factor <= 0) throw ConfigError("train.lr.decay_factor must be positive");
  for (int e : lr.decay_epochs) {
    if (e < 0) throw ConfigError("train.lr.decay_epochs entries must be nonnegative");
  }
  for (int s : enabled_stages) {
    if (s < 0 || s >= num_stages) {
      throw ConfigError("train.enabled_stages entry " + std::to_string(s) +
                        " is outside [0, " + std::to_string(num_stages) + ")");
    }
  }
  if (augment.pad < 0) throw ConfigError("train.augment.pad must be nonnegative");
}

std::vector<int> TrainConfig::effective_stages(int num_stages) const {
  std::vector<int> out;
  if (enabled_stages.empty()) {
    for (int s = 0; s < num_stages; ++s) out.push_back(s);
    return out;
  }
  out = enabled_stages;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

template <typename T>
Sgd<T>::Sgd(const std::vector<NamedParam<T>>& params, double momentum, double weight_decay)
    : params_(params), momentum_(momentum), weight_decay_(weight_decay) {
  buffers_.reserve(params_.size());
  for (const auto& p : params_) buffers_.push_back(Tensor<T>::zeros(p.var->value.shape()));
}

template <typename T>
void Sgd<T>::step(double lr, const std::vector<Tensor<T>>& grads) {
  if (grads.size() != params_.size()) {
    throw ShapeError("optimizer got " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params_.size()) + " parameters");
  }
  const T m = static_cast<T>(momentum_);
  const T wd = static_cast<T>(weight_decay_);
  const T rate = static_cast<T>(lr);
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor<T>& p = params_[i].var->value;
    Tensor<T>& buf = buffers_[i];
    const Tensor<T>& g = grads[i];
    const bool has_grad = !g.empty();
    if (has_grad && !g.same_shape(p)) {
      throw ShapeError("gradient shape mismatch for '" + params_[i].name + "'");
    }
    const int64_t n = p.numel();
    for (int64_t k = 0; k < n; ++k) {
      T gk = has_grad ? g[k] : T(0);
      gk += wd * p[k];
      buf[k] = m * buf[k] + gk;
      p[k] -= rate * buf[k];
    }
  }
}

template <typename T>
Var<T> classification_loss(const Prediction<T>& pred, const std::vector<int>& labels,
                           Tensor<T>* probs_out) {
  return softmax_cross_entropy(pred.logits, labels, probs_out);
}

template <typename T>
Var<T> quality_loss(const std::vector<Var<T>>& q_values) {
  if (q_values.empty()) return make_constant(Tensor<T>::zeros({1}));
  return mul_scalar(mean_all(concat_cols(q_values)), T(-1));
}

template <typename T>
Var<T> regression_loss(const std::vector<Var<T>>& q_values,
                       const std::vector<std::vector<T>>& rewards) {
  if (q_values.size() != rewards.size()) {
    throw ShapeError("regression_loss: " + std::to_string(q_values.size()) + " Q columns vs " +
                     std::to_string(rewards.size()) + " reward columns");
  }
  if (q_values.empty()) return make_constant(Tensor<T>::zeros({1}));
  std::vector<Var<T>> sq;
  sq.reserve(q_values.size());
  for (size_t i = 0; i < q_values.size(); ++i) {
    const Var<T>& q = q_values[i];
    const int64_t b = q->value.dim(0);
    if (static_cast<int64_t>(rewards[i].size()) != b) {
      throw ShapeError("regression_loss: reward column " + std::to_string(i) +
                       " has wrong batch size");
    }
    Tensor<T> r({b, 1});
    for (int64_t k = 0; k < b; ++k) r[k] = rewards[i][static_cast<size_t>(k)];
    sq.push_back(square(sub(q, make_constant(std::move(r)))));
  }
  return mean_all(concat_cols(sq));
}

namespace {

template <typename T>
std::vector<Tensor<T>> collect_grads(const std::vector<NamedParam<T>>& params) {
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.var->grad);
  return out;
}

template <typename T>
double batch_mean(const Var<T>& column) {
  const int64_t n = column->value.numel();
  double s = 0;
  for (int64_t i = 0; i < n; ++i) s += static_cast<double>(column->value[i]);
  return s / static_cast<double>(n);
}

template <typename T>
void check_finite(T v, const std::string& what, int epoch) {
  if (!std::isfinite(static_cast<double>(v))) {
    throw NumericError(what + " is not finite (epoch " + std::to_string(epoch) + ")");
  }
}

}  // namespace

template <typename T>
Trainer<T>::Trainer(Network<T>& net, TrainConfig train_cfg, RewardConfig reward_cfg)
    : net_(net),
      cfg_(std::move(train_cfg)),
      reward_cfg_(reward_cfg),
      opt_backbone_(net.backbone_params().params(), cfg_.momentum, cfg_.weight_decay),
      opt_actors_(net.actor_params().params(), cfg_.momentum, cfg_.weight_decay),
      opt_critics_(net.critic_params().params(), cfg_.momentum, 0.0) {
  cfg_.validate(static_cast<int>(net_.config().stages.size()));
  reward_cfg_.validate();
}

template <typename T>
bool Trainer<T>::reinforced() const {
  return cfg_.mode == TrainMode::reinforced &&
         net_.config().attention_kind != AttentionKind::none;
}

template <typename T>
std::vector<std::vector<BlockId>> Trainer<T>::rollout_plan() const {
  std::vector<std::vector<BlockId>> plan;
  if (net_.config().attention_kind == AttentionKind::none) return plan;
  for (int s : cfg_.effective_stages(static_cast<int>(net_.config().stages.size()))) {
    std::vector<BlockId> blocks;
    const int n = net_.config().stages[static_cast<size_t>(s)].num_blocks;
    for (int b = 0; b < n; ++b) blocks.push_back({s, b});
    plan.push_back(std::move(blocks));
  }
  return plan;
}

template <typename T>
LossBundle<T> Trainer<T>::train_step(const Tensor<T>& images, const std::vector<int>& labels,
                                     int epoch) {
  const bool rl = reinforced();
  LossBundle<T> out;
  out.batch = images.dim(0);

  ForwardOptions fwd{/*training=*/true, /*update_running=*/true, /*record_traces=*/rl};
  auto res = net_.forward(images, {}, fwd);

  Var<T> l_c = classification_loss<T>(res.prediction, labels, nullptr);
  out.l_c = l_c->value[0];
  check_finite(out.l_c, "classification loss", epoch);
  {
    auto pred = argmax_rows(res.prediction.probabilities);
    for (size_t i = 0; i < labels.size(); ++i) {
      if (pred[i] == labels[i]) ++out.correct;
    }
  }
  backward(l_c);
  auto g_backbone = collect_grads(net_.backbone_params().params());
  auto g_theta = collect_grads(net_.actor_params().params());

  std::vector<Tensor<T>> g_phi;
  if (rl) {
    std::map<std::tuple<int, int, ActionKind>, const BlockTrace<T>*> trace_of;
    for (const auto& t : res.traces) {
      trace_of[{t.id.stage, t.id.block, t.kind}] = &t;
    }
    const auto plan = rollout_plan();
    const auto kinds = net_.block_action_kinds();
    const auto scheduled =
        select_bypass_blocks(epoch, net_.config().stages, cfg_.enabled_stages);

    // Rollout over live actions: gradients reach theta through A only.
    std::vector<Var<T>> q_all;
    std::map<std::pair<BlockId, ActionKind>, Var<T>> q_at;
    {
      // Graph construction is skipped when the values are metric-only.
      std::unique_ptr<NoGradGuard> guard;
      if (cfg_.lambda_q <= 0) guard = std::make_unique<NoGradGuard>();
      for (const auto& stage_blocks : plan) {
        for (ActionKind kind : kinds) {
          auto& lstm = net_.critic_for(stage_blocks.front().stage, kind);
          CriticState<T> state = zero_critic_state<T>(out.batch);
          for (const BlockId& id : stage_blocks) {
            const BlockTrace<T>* tr = trace_of.at({id.stage, id.block, kind});
            state = critic_step(reduce_state(tr->state, kind), flatten_action(tr->applied),
                                state, lstm);
            Var<T> q = q_value(state);
            const std::string key = to_string(id) + "." + to_string(kind);
            double qm = batch_mean(q);
            check_finite(qm, "critic output for " + key, epoch);
            out.q_means[key] = static_cast<T>(qm);
            q_all.push_back(q);
            q_at[{id, kind}] = q;
          }
        }
      }
    }
    // With lambda_q = 0 the rollout produced constants, so this is value-only.
    Var<T> l_q = quality_loss(q_all);
    out.l_q = l_q->value[0];
    check_finite(out.l_q, "quality loss", epoch);
    if (cfg_.lambda_q > 0) {
      backward(l_q);
      auto g_theta_q = collect_grads(net_.actor_params().params());
      const T lam = static_cast<T>(cfg_.lambda_q);
      for (size_t i = 0; i < g_theta.size(); ++i) {
        if (g_theta_q[i].empty()) continue;
        if (g_theta[i].empty()) g_theta[i] = Tensor<T>::zeros(g_theta_q[i].shape());
        for (int64_t k = 0; k < g_theta[i].numel(); ++k) g_theta[i][k] += lam * g_theta_q[i][k];
      }
    }

    // Rewards for the scheduled blocks, then the critic regression on a
    // rollout whose inputs are all detached: only phi learns from L_r.
    auto bypassed = bypass_forward(net_, images, scheduled, /*training=*/true);
    std::map<BlockId, std::vector<T>> reward_of;
    for (const BlockId& id : scheduled) {
      auto rec = make_reward_record(id, res.prediction, bypassed.at(id), labels, reward_cfg_);
      double rm = 0;
      for (T r : rec.reward) rm += static_cast<double>(r);
      rm /= static_cast<double>(rec.reward.size());
      check_finite(rm, "reward for " + to_string(id), epoch);
      out.r_means[to_string(id)] = static_cast<T>(rm);
      reward_of[id] = std::move(rec.reward);
    }

    std::vector<Var<T>> q_sched;
    std::vector<std::vector<T>> r_sched;
    if (cfg_.lambda_r > 0) {
      for (const auto& stage_blocks : plan) {
        const int stage = stage_blocks.front().stage;
        BlockId target{-1, -1};
        for (const BlockId& id : scheduled) {
          if (id.stage == stage) target = id;
        }
        if (target.stage < 0) continue;
        for (ActionKind kind : kinds) {
          auto& lstm = net_.critic_for(stage, kind);
          CriticState<T> state = zero_critic_state<T>(out.batch);
          for (const BlockId& id : stage_blocks) {
            const BlockTrace<T>* tr = trace_of.at({id.stage, id.block, kind});
            AttentionAction<T> frozen{tr->applied.kind, detach(tr->applied.values)};
            state = critic_step(reduce_state(detach(tr->state), kind), flatten_action(frozen),
                                state, lstm);
            if (id == target) break;
          }
          q_sched.push_back(q_value(state));
          r_sched.push_back(reward_of.at(target));
        }
      }
      Var<T> l_r = regression_loss(q_sched, r_sched);
      out.l_r = l_r->value[0];
      check_finite(out.l_r, "regression loss", epoch);
      backward(l_r);
      g_phi = collect_grads(net_.critic_params().params());
      if (cfg_.lambda_r != 1.0) {
        const T lam = static_cast<T>(cfg_.lambda_r);
        for (auto& g : g_phi) {
          for (int64_t k = 0; k < g.numel(); ++k) g[k] *= lam;
        }
      }
    } else {
      // Metric-only value: identical arithmetic on the live-rollout Q nodes.
      NoGradGuard guard;
      for (const BlockId& id : scheduled) {
        for (ActionKind kind : kinds) {
          q_sched.push_back(q_at.at({id, kind}));
          r_sched.push_back(reward_of.at(id));
        }
      }
      out.l_r = regression_loss(q_sched, r_sched)->value[0];
      check_finite(out.l_r, "regression loss", epoch);
    }
  }

  const double lr = cfg_.lr.rate_at(epoch);
  opt_backbone_.step(lr, g_backbone);
  opt_actors_.step(lr, g_theta);
  if (!g_phi.empty()) opt_critics_.step(lr, g_phi);
  return out;
}

template <typename T>
double Trainer<T>::evaluate(const DataSplit<T>& split, int64_t batch_size) {
  NoGradGuard guard;
  Rng unused(0);
  AugmentConfig no_aug;
  no_aug.enabled = false;
  const int64_t n = split.size();
  int64_t correct = 0;
  ForwardOptions fwd{/*training=*/false, /*update_running=*/false, /*record_traces=*/false};
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t stop = std::min(n, start + batch_size);
    std::vector<int64_t> idx;
    for (int64_t i = start; i < stop; ++i) idx.push_back(i);
    Tensor<T> images = assemble_batch(split, idx, no_aug, unused);
    auto res = net_.forward(images, {}, fwd);
    auto pred = argmax_rows(res.prediction.probabilities);
    for (int64_t i = start; i < stop; ++i) {
      if (pred[static_cast<size_t>(i - start)] == split.labels[static_cast<size_t>(i)]) ++correct;
    }
  }
  return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
}

template <typename T>
std::vector<MetricRecord> Trainer<T>::train(const Dataset<T>& data,
                                            const std::function<void(const MetricRecord&)>& sink,
                                            int start_epoch) {
  std::vector<MetricRecord> history;
  const int64_t n = data.train.size();
  if (n == 0) throw ConfigError("training split is empty");

  // Every enabled block reports Q each epoch and R when scheduled.
  std::vector<std::string> r_keys;
  for (const auto& stage_blocks : rollout_plan()) {
    for (const BlockId& id : stage_blocks) r_keys.push_back(to_string(id));
  }

  for (int epoch = start_epoch; epoch < cfg_.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(Rng::mix(cfg_.seed, static_cast<uint64_t>(epoch)));
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    rng.shuffle(order);

    double sum_lc = 0, sum_lq = 0, sum_lr = 0;
    int64_t correct = 0, seen = 0;
    std::map<std::string, double> q_sums;
    std::map<std::string, double> r_sums;

    for (int64_t start = 0; start < n; start += cfg_.batch_size) {
      const int64_t stop = std::min(n, start + cfg_.batch_size);
      std::vector<int64_t> idx(order.begin() + start, order.begin() + stop);
      Tensor<T> images = assemble_batch(data.train, idx, cfg_.augment, rng);
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (int64_t i : idx) labels.push_back(data.train.labels[static_cast<size_t>(i)]);

      LossBundle<T> bundle = train_step(images, labels, epoch);
      const double w = static_cast<double>(bundle.batch);
      sum_lc += static_cast<double>(bundle.l_c) * w;
      sum_lq += static_cast<double>(bundle.l_q) * w;
      sum_lr += static_cast<double>(bundle.l_r) * w;
      correct += bundle.correct;
      seen += bundle.batch;
      for (const auto& [k, v] : bundle.q_means) q_sums[k] += static_cast<double>(v) * w;
      for (const auto& [k, v] : bundle.r_means) r_sums[k] += static_cast<double>(v) * w;
    }

    MetricRecord rec;
    rec.epoch = epoch;
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    rec.val_acc = evaluate(data.val, cfg_.batch_size);
    rec.l_c = sum_lc / static_cast<double>(seen);
    rec.l_q = sum_lq / static_cast<double>(seen);
    rec.l_r = sum_lr / static_cast<double>(seen);
    for (const auto& [k, v] : q_sums) rec.q_means.emplace_back(k, v / static_cast<double>(seen));
    for (const auto& k : r_keys) {
      auto it = r_sums.find(k);
      rec.r_means.emplace_back(
          k, it == r_sums.end() ? std::nan("") : it->second / static_cast<double>(seen));
    }
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (sink) sink(rec);
    history.push_back(std::move(rec));
  }
  return history;
}

#define REATT_INSTANTIATE_TRAINER(T)                                                       \
  template class Sgd<T>;                                                                   \
  template class Trainer<T>;                                                               \
  template Var<T> classification_loss<T>(const Prediction<T>&, const std::vector<int>&,    \
                                         Tensor<T>*);                                      \
  template Var<T> quality_loss<T>(const std::vector<Var<T>>&);                             \
  template Var<T> regression_loss<T>(const std::vector<Var<T>>&,                           \
                                     const std::vector<std::vector<T>>&);

REATT_INSTANTIATE_TRAINER(float)
REATT_INSTANTIATE_TRAINER(double)
#undef REATT_INSTANTIATE_TRAINER

}  // namespace reatt
