#include "reatt/backbone.hpp"

#include <algorithm>

#include "reatt/errors.hpp"

namespace reatt {

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::none: return "none";
    case AttentionKind::channel: return "channel";
    case AttentionKind::spatial_channel: return "spatial_channel";
    case AttentionKind::style: return "style";
  }
  return "?";
}

AttentionKind attention_kind_from_string(const std::string& s) {
  if (s == "none") return AttentionKind::none;
  if (s == "channel") return AttentionKind::channel;
  if (s == "spatial_channel") return AttentionKind::spatial_channel;
  if (s == "style") return AttentionKind::style;
  throw ConfigError("unknown attention_kind '" + s +
                    "' (expected none|channel|spatial_channel|style)");
}

std::string to_string(BlockId id) {
  return "s" + std::to_string(id.stage) + ".b" + std::to_string(id.block);
}

void NetworkConfig::validate() const {
  if (stages.empty()) throw ConfigError("network.stages must be non-empty");
  if (num_classes < 2) throw ConfigError("network.num_classes must be >= 2");
  if (reduction_ratio < 1) throw ConfigError("network.reduction_ratio must be >= 1");
  if (input_height < 1 || input_width < 1 || input_channels < 1)
    throw ConfigError("network.input shape must be positive");
  int h = input_height, w = input_width;
  for (size_t s = 0; s < stages.size(); ++s) {
    const StageSpec& st = stages[s];
    const std::string tag = "network.stages[" + std::to_string(s) + "]";
    if (st.num_blocks < 1) throw ConfigError(tag + ".num_blocks must be >= 1");
    if (st.channels < 1) throw ConfigError(tag + ".channels must be >= 1");
    if (st.height < 1 || st.width < 1) throw ConfigError(tag + " spatial_size must be positive");
    if (st.stride_in < 1) throw ConfigError(tag + ".stride_in must be >= 1");
    if (st.channels % reduction_ratio != 0)
      throw ConfigError(tag + ".channels (" + std::to_string(st.channels) +
                        ") is not divisible by reduction_ratio (" +
                        std::to_string(reduction_ratio) + ")");
    if (h % st.stride_in != 0 || w % st.stride_in != 0)
      throw ConfigError(tag + ".stride_in does not divide the incoming spatial size");
    h /= st.stride_in;
    w /= st.stride_in;
    if (st.height != h || st.width != w)
      throw ConfigError(tag + " declares spatial size (" + std::to_string(st.height) + "," +
                        std::to_string(st.width) + ") but strides imply (" + std::to_string(h) +
                        "," + std::to_string(w) + ")");
  }
}

int NetworkConfig::total_blocks() const {
  int n = 0;
  for (const auto& s : stages) n += s.num_blocks;
  return n;
}

NetworkConfig desk_config(int blocks_per_stage, AttentionKind kind, int num_classes,
                          int input_hw, int input_channels, int base_channels) {
  NetworkConfig cfg;
  cfg.num_classes = num_classes;
  cfg.attention_kind = kind;
  cfg.input_height = input_hw;
  cfg.input_width = input_hw;
  cfg.input_channels = input_channels;
  int h = input_hw;
  for (int s = 0; s < 3; ++s) {
    StageSpec st;
    st.num_blocks = blocks_per_stage;
    st.channels = base_channels << s;
    st.stride_in = s == 0 ? 1 : 2;
    h /= st.stride_in;
    st.height = h;
    st.width = h;
    cfg.stages.push_back(st);
  }
  return cfg;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& m) {
  const int64_t rows = m.dim(0), cols = m.dim(1);
  std::vector<int> out(static_cast<size_t>(rows));
  for (int64_t i = 0; i < rows; ++i) {
    int best = 0;
    for (int64_t j = 1; j < cols; ++j)
      if (m.at(i, j) > m.at(i, best)) best = static_cast<int>(j);
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

template <typename T>
Var<T> extract(const Var<T>& f) {
  return global_avg_pool(f);
}

template <typename T>
Var<T> recalibrate(const Var<T>& f, const AttentionAction<T>& a) {
  if (a.kind == ActionKind::spatial) return mul_spatial(f, a.values);
  return mul_channel(f, a.values);
}

template <typename T>
Network<T>::Network(NetworkConfig config, uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const AttentionKind kind = config_.attention_kind;

  stem_ = make_conv2d<T>(backbone_, rng, "stem", config_.input_channels,
                         config_.stages[0].channels, 3, 3, 1, 1, false);

  int in_ch = config_.stages[0].channels;
  for (size_t si = 0; si < config_.stages.size(); ++si) {
    const StageSpec& spec = config_.stages[si];
    std::vector<PreActBlock<T>> blocks;
    for (int bi = 0; bi < spec.num_blocks; ++bi) {
      const std::string p = "s" + std::to_string(si) + ".b" + std::to_string(bi);
      const int stride = bi == 0 ? spec.stride_in : 1;
      PreActBlock<T> blk;
      blk.bn1 = make_batch_norm<T>(backbone_, p + ".bn1", in_ch);
      blk.conv1 = make_conv2d<T>(backbone_, rng, p + ".conv1", in_ch, spec.channels, 3, 3,
                                 stride, 1, false);
      blk.bn2 = make_batch_norm<T>(backbone_, p + ".bn2", spec.channels);
      blk.conv2 =
          make_conv2d<T>(backbone_, rng, p + ".conv2", spec.channels, spec.channels, 3, 3, 1, 1,
                         false);
      if (stride != 1 || in_ch != spec.channels) {
        blk.shortcut = make_conv2d<T>(backbone_, rng, p + ".proj", in_ch, spec.channels, 1, 1,
                                      stride, 0, false);
        blk.has_projection = true;
      }
      switch (kind) {
        case AttentionKind::none:
          break;
        case AttentionKind::channel:
          blk.channel_actor = make_channel_actor<T>(actors_, rng, p + ".ca", spec.channels,
                                                    config_.reduction_ratio, false);
          ++actor_count_;
          break;
        case AttentionKind::spatial_channel:
          blk.channel_actor = make_channel_actor<T>(actors_, rng, p + ".ca", spec.channels,
                                                    config_.reduction_ratio, true);
          blk.spatial_actor = make_spatial_actor<T>(actors_, rng, p + ".sa");
          actor_count_ += 2;
          break;
        case AttentionKind::style:
          blk.style_actor = make_style_actor<T>(actors_, rng, p + ".st", spec.channels);
          ++actor_count_;
          break;
      }
      blocks.push_back(std::move(blk));
      in_ch = spec.channels;
    }
    stages_.push_back(std::move(blocks));
  }

  head_bn_ = make_batch_norm<T>(backbone_, "head.bn", in_ch);
  head_fc_ = make_dense<T>(backbone_, rng, "head.fc", in_ch, config_.num_classes, true);

  for (size_t si = 0; si < config_.stages.size(); ++si) {
    const std::string p = "s" + std::to_string(si);
    const int64_t c = config_.stages[si].channels;
    const int64_t hw =
        static_cast<int64_t>(config_.stages[si].height) * config_.stages[si].width;
    switch (kind) {
      case AttentionKind::none:
        break;
      case AttentionKind::channel:
        critic_bank_.emplace(std::make_pair(static_cast<int>(si), ActionKind::channel),
                             make_scalar_lstm<T>(critics_, rng, p + ".channel", c));
        break;
      case AttentionKind::spatial_channel:
        critic_bank_.emplace(std::make_pair(static_cast<int>(si), ActionKind::channel),
                             make_scalar_lstm<T>(critics_, rng, p + ".channel", c));
        critic_bank_.emplace(std::make_pair(static_cast<int>(si), ActionKind::spatial),
                             make_scalar_lstm<T>(critics_, rng, p + ".spatial", hw));
        break;
      case AttentionKind::style:
        critic_bank_.emplace(std::make_pair(static_cast<int>(si), ActionKind::style),
                             make_scalar_lstm<T>(critics_, rng, p + ".style", c));
        break;
    }
  }
}

template <typename T>
ScalarLstm<T>& Network<T>::critic_for(int stage, ActionKind kind) {
  auto it = critic_bank_.find({stage, kind});
  if (it == critic_bank_.end())
    throw LookupError("no critic for stage " + std::to_string(stage) + ", kind " +
                      to_string(kind));
  return it->second;
}

template <typename T>
std::vector<std::pair<int, ActionKind>> Network<T>::critic_keys() const {
  std::vector<std::pair<int, ActionKind>> keys;
  for (const auto& [key, lstm] : critic_bank_) keys.push_back(key);
  return keys;
}

template <typename T>
std::vector<ActionKind> Network<T>::block_action_kinds() const {
  switch (config_.attention_kind) {
    case AttentionKind::channel: return {ActionKind::channel};
    case AttentionKind::spatial_channel: return {ActionKind::channel, ActionKind::spatial};
    case AttentionKind::style: return {ActionKind::style};
    case AttentionKind::none: break;
  }
  return {};
}

template <typename T>
std::vector<BlockId> Network<T>::block_ids() const {
  std::vector<BlockId> ids;
  for (size_t si = 0; si < config_.stages.size(); ++si)
    for (int bi = 0; bi < config_.stages[si].num_blocks; ++bi)
      ids.push_back({static_cast<int>(si), bi});
  return ids;
}

namespace {

template <typename T>
void check_override_value(const Tensor<T>& value, ActionKind kind, int64_t batch, int64_t c,
                          int64_t h, int64_t w, BlockId id) {
  std::vector<int64_t> expected = kind == ActionKind::spatial
                                      ? std::vector<int64_t>{batch, 1, h, w}
                                      : std::vector<int64_t>{batch, c};
  if (value.shape() != expected)
    throw ShapeError("override for " + to_string(id) + " (" + to_string(kind) + ") has shape " +
                     Tensor<T>::shape_str(value.shape()) + ", expected " +
                     Tensor<T>::shape_str(expected));
}

}  // namespace

template <typename T>
typename Network<T>::ForwardResult Network<T>::forward(const Tensor<T>& batch,
                                                       const Overrides<T>& overrides,
                                                       const ForwardOptions& options) {
  if (batch.rank() != 4 || batch.dim(1) != config_.input_channels ||
      batch.dim(2) != config_.input_height || batch.dim(3) != config_.input_width)
    throw ShapeError("forward: batch is " + Tensor<T>::shape_str(batch.shape()) +
                     ", expected (B," + std::to_string(config_.input_channels) + "," +
                     std::to_string(config_.input_height) + "," +
                     std::to_string(config_.input_width) + ")");
  for (const auto& [id, ov] : overrides) {
    if (id.stage < 0 || id.stage >= static_cast<int>(stages_.size()) || id.block < 0 ||
        id.block >= static_cast<int>(stages_[static_cast<size_t>(id.stage)].size()))
      throw LookupError("override for unknown block " + to_string(id));
    if (config_.attention_kind == AttentionKind::none)
      throw LookupError("override for " + to_string(id) + " on an attention-free network");
    if (!ov.mean_substitute_self) {
      const auto kinds = block_action_kinds();
      for (const auto& [k, v] : ov.values)
        if (std::find(kinds.begin(), kinds.end(), k) == kinds.end())
          throw LookupError("override for " + to_string(id) + " names absent action kind " +
                            to_string(k));
    }
  }
  ++forward_passes_;

  const bool training = options.training;
  const bool upd = options.update_running;
  ForwardResult result;

  Var<T> x = stem_.forward(make_constant(batch));
  for (size_t si = 0; si < stages_.size(); ++si) {
    const StageSpec& spec = config_.stages[si];
    for (size_t bi = 0; bi < stages_[si].size(); ++bi) {
      PreActBlock<T>& blk = stages_[si][bi];
      const BlockId id{static_cast<int>(si), static_cast<int>(bi)};
      Var<T> pre = relu(blk.bn1.forward(x, training, upd));
      Var<T> h = blk.conv1.forward(pre);
      h = relu(blk.bn2.forward(h, training, upd));
      Var<T> f = blk.conv2.forward(h);  // the RL state of this block

      const BlockOverride<T>* ov = nullptr;
      if (auto it = overrides.find(id); it != overrides.end()) ov = &it->second;

      auto resolve = [&](const AttentionAction<T>& native) -> AttentionAction<T> {
        if (!ov) return native;
        if (ov->mean_substitute_self) return mean_substitute(native);
        if (auto vit = ov->values.find(native.kind); vit != ov->values.end()) {
          check_override_value(vit->second, native.kind, batch.dim(0), spec.channels,
                               spec.height, spec.width, id);
          return {native.kind, make_constant(vit->second)};
        }
        return native;
      };

      auto apply = [&](Var<T> current, const AttentionAction<T>& native) -> Var<T> {
        AttentionAction<T> applied = resolve(native);
        const bool replaced = applied.values != native.values;
        if (options.record_traces)
          result.traces.push_back({id, native.kind, f, applied, native, replaced});
        return recalibrate(current, applied);
      };

      Var<T> f_rec = f;
      if (blk.channel_actor) f_rec = apply(f_rec, blk.channel_actor->forward(f));
      if (blk.spatial_actor) f_rec = apply(f_rec, blk.spatial_actor->forward(f_rec));
      if (blk.style_actor) f_rec = apply(f_rec, blk.style_actor->forward(f, training, upd));

      Var<T> shortcut = blk.has_projection ? blk.shortcut.forward(pre) : x;
      x = add(shortcut, f_rec);
    }
  }

  Var<T> pooled = global_avg_pool(relu(head_bn_.forward(x, training, upd)));
  Var<T> logits = head_fc_.forward(pooled);
  result.prediction.logits = logits;
  result.prediction.probabilities = softmax_rows(logits->value);
  return result;
}

template class Network<float>;
template class Network<double>;

#define REATT_INSTANTIATE_BACKBONE(T)                                        \
  template std::vector<int> argmax_rows<T>(const Tensor<T>&);                \
  template Var<T> extract<T>(const Var<T>&);                                 \
  template Var<T> recalibrate<T>(const Var<T>&, const AttentionAction<T>&);

REATT_INSTANTIATE_BACKBONE(float)
REATT_INSTANTIATE_BACKBONE(double)
#undef REATT_INSTANTIATE_BACKBONE

}  // namespace reatt
