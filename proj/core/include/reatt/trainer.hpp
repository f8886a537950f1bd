#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "reatt/backbone.hpp"
#include "reatt/data.hpp"
#include "reatt/metrics.hpp"
#include "reatt/reward.hpp"

namespace reatt {

// reinforced = the full actor/critic/backbone alternation; supervised = plain
// cross-entropy training of the same network (critics never touched).
enum class TrainMode { reinforced, supervised };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);  // ConfigError on unknown

struct LrSchedule {
  double initial = 0.1;
  std::vector<int> decay_epochs = {30, 45};
  double decay_factor = 0.1;

  double rate_at(int epoch) const;
};

struct TrainConfig {
  TrainMode mode = TrainMode::reinforced;
  int epochs = 60;
  int64_t batch_size = 64;
  LrSchedule lr;
  double momentum = 0.9;
  double weight_decay = 1e-4;  // backbone and actors; critics train without decay
  double lambda_q = 1.0;
  double lambda_r = 1.0;
  std::vector<int> enabled_stages;  // empty = all stages
  uint64_t seed = 1;
  AugmentConfig augment;

  void validate(int num_stages) const;  // ConfigError
  // Stages carrying critics/rewards under this config, sorted ascending.
  std::vector<int> effective_stages(int num_stages) const;
};

template <typename T>
struct LossBundle {
  T l_c = T(0);
  T l_q = T(0);
  T l_r = T(0);
  std::map<std::string, T> q_means;  // "s0.b1.channel" -> batch-mean Q
  std::map<std::string, T> r_means;  // "s0.b1" -> batch-mean reward (scheduled only)
  int64_t correct = 0;               // argmax hits on the training batch
  int64_t batch = 0;
};

// SGD with momentum; decay is folded into the gradient before the buffer
// update. Buffer layout matches the parameter list it was built from.
template <typename T>
class Sgd {
 public:
  Sgd(const std::vector<NamedParam<T>>& params, double momentum, double weight_decay);

  void step(double lr, const std::vector<Tensor<T>>& grads);

  const std::vector<NamedParam<T>>& params() const { return params_; }
  std::vector<Tensor<T>>& buffers() { return buffers_; }
  const std::vector<Tensor<T>>& buffers() const { return buffers_; }

 private:
  std::vector<NamedParam<T>> params_;
  std::vector<Tensor<T>> buffers_;
  double momentum_;
  double weight_decay_;
};

template <typename T>
Var<T> classification_loss(const Prediction<T>& pred, const std::vector<int>& labels,
                           Tensor<T>* probs_out);

// Mean over batch and listed blocks of -Q.
template <typename T>
Var<T> quality_loss(const std::vector<Var<T>>& q_values);

// Mean over batch and scheduled blocks of (Q - R)^2.
template <typename T>
Var<T> regression_loss(const std::vector<Var<T>>& q_values,
                       const std::vector<std::vector<T>>& rewards);

template <typename T>
class Trainer {
 public:
  Trainer(Network<T>& net, TrainConfig train_cfg, RewardConfig reward_cfg);

  // One optimization step on a prepared batch. epoch drives the bypass
  // schedule and the learning rate.
  LossBundle<T> train_step(const Tensor<T>& images, const std::vector<int>& labels, int epoch);

  // Top-1 accuracy with running statistics, gradient-free.
  double evaluate(const DataSplit<T>& split, int64_t batch_size);

  // Epoch loop with per-epoch reshuffle and augmentation. Metrics go to
  // `sink` (may be null). start_epoch > 0 resumes mid-run; the RNG stream is
  // re-derived per epoch so resumed and uninterrupted runs agree bit-exactly.
  std::vector<MetricRecord> train(const Dataset<T>& data,
                                  const std::function<void(const MetricRecord&)>& sink,
                                  int start_epoch = 0);

  Sgd<T>& backbone_opt() { return opt_backbone_; }
  Sgd<T>& actor_opt() { return opt_actors_; }
  Sgd<T>& critic_opt() { return opt_critics_; }
  const TrainConfig& config() const { return cfg_; }
  const RewardConfig& reward_config() const { return reward_cfg_; }
  Network<T>& network() { return net_; }

  // Blocks participating in critic rollouts, grouped per enabled stage.
  std::vector<std::vector<BlockId>> rollout_plan() const;

 private:
  bool reinforced() const;

  Network<T>& net_;
  TrainConfig cfg_;
  RewardConfig reward_cfg_;
  Sgd<T> opt_backbone_;
  Sgd<T> opt_actors_;
  Sgd<T> opt_critics_;
};

#define REATT_EXTERN_TRAINER(T)                                                              \
  extern template class Sgd<T>;                                                              \
  extern template class Trainer<T>;                                                          \
  extern template Var<T> classification_loss<T>(const Prediction<T>&, const std::vector<int>&, \
                                                Tensor<T>*);                                 \
  extern template Var<T> quality_loss<T>(const std::vector<Var<T>>&);                        \
  extern template Var<T> regression_loss<T>(const std::vector<Var<T>>&,                      \
                                            const std::vector<std::vector<T>>&);

REATT_EXTERN_TRAINER(float)
REATT_EXTERN_TRAINER(double)
#undef REATT_EXTERN_TRAINER

}  // namespace reatt
