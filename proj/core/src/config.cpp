#include "reatt/config.hpp"

#include <fstream>
#include <sstream>

#include "reatt/errors.hpp"

namespace reatt {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) {
      if (it.key() == a) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      std::string msg = "unknown key '" + it.key() + "' in " + where + " (allowed:";
      for (const char* a : allowed) msg += std::string(" ") + a;
      throw ConfigError(msg + ")");
    }
  }
}

json section(const json& obj, const std::string& where, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) return json::object();
  if (!it->is_object()) throw ConfigError(where + "." + key + " must be an object");
  return *it;
}

double get_num(const json& obj, const std::string& where, const char* key, double def) {
  auto it = obj.find(key);
  if (it == obj.end()) return def;
  if (!it->is_number()) throw ConfigError(where + "." + key + " must be a number");
  return it->get<double>();
}

int64_t get_int(const json& obj, const std::string& where, const char* key, int64_t def) {
  auto it = obj.find(key);
  if (it == obj.end()) return def;
  if (!it->is_number_integer()) throw ConfigError(where + "." + key + " must be an integer");
  return it->get<int64_t>();
}

uint64_t get_seed(const json& obj, const std::string& where, const char* key, uint64_t def) {
  auto it = obj.find(key);
  if (it == obj.end()) return def;
  if (!it->is_number_integer() || (!it->is_number_unsigned() && it->get<int64_t>() < 0)) {
    throw ConfigError(where + "." + key + " must be a nonnegative integer");
  }
  return it->get<uint64_t>();
}

bool get_bool(const json& obj, const std::string& where, const char* key, bool def) {
  auto it = obj.find(key);
  if (it == obj.end()) return def;
  if (!it->is_boolean()) throw ConfigError(where + "." + key + " must be a boolean");
  return it->get<bool>();
}

std::string get_str(const json& obj, const std::string& where, const char* key,
                    const std::string& def) {
  auto it = obj.find(key);
  if (it == obj.end()) return def;
  if (!it->is_string()) throw ConfigError(where + "." + key + " must be a string");
  return it->get<std::string>();
}

std::vector<int> get_int_list(const json& obj, const std::string& where, const char* key,
                              std::vector<int> def) {
  auto it = obj.find(key);
  if (it == obj.end()) return def;
  if (!it->is_array()) throw ConfigError(where + "." + key + " must be an array of integers");
  std::vector<int> out;
  for (const auto& v : *it) {
    if (!v.is_number_integer())
      throw ConfigError(where + "." + key + " must be an array of integers");
    out.push_back(v.get<int>());
  }
  return out;
}

DatasetSpec parse_dataset(const json& jd) {
  check_keys(jd, "dataset", {"name", "root", "max_train", "max_val", "synthetic"});
  DatasetSpec d;
  d.name = get_str(jd, "dataset", "name", d.name);
  d.root = get_str(jd, "dataset", "root", d.root);
  d.max_train = get_int(jd, "dataset", "max_train", d.max_train);
  d.max_val = get_int(jd, "dataset", "max_val", d.max_val);
  json js = section(jd, "dataset", "synthetic");
  check_keys(js, "dataset.synthetic",
             {"num_classes", "train_per_class", "val_per_class", "height", "width", "channels",
              "noise", "jitter", "distractor", "seed"});
  SyntheticSpec& s = d.synthetic;
  s.num_classes = static_cast<int>(get_int(js, "dataset.synthetic", "num_classes", s.num_classes));
  s.train_per_class =
      static_cast<int>(get_int(js, "dataset.synthetic", "train_per_class", s.train_per_class));
  s.val_per_class =
      static_cast<int>(get_int(js, "dataset.synthetic", "val_per_class", s.val_per_class));
  s.height = static_cast<int>(get_int(js, "dataset.synthetic", "height", s.height));
  s.width = static_cast<int>(get_int(js, "dataset.synthetic", "width", s.width));
  s.channels = static_cast<int>(get_int(js, "dataset.synthetic", "channels", s.channels));
  s.noise = get_num(js, "dataset.synthetic", "noise", s.noise);
  s.jitter = get_num(js, "dataset.synthetic", "jitter", s.jitter);
  s.distractor = get_num(js, "dataset.synthetic", "distractor", s.distractor);
  s.seed = get_seed(js, "dataset.synthetic", "seed", s.seed);
  return d;
}

// Image geometry and class count implied by the dataset choice.
void dataset_shape(const DatasetSpec& d, int& h, int& w, int& c, int& classes) {
  if (d.name == "cifar10") {
    h = 32;
    w = 32;
    c = 3;
    classes = 10;
  } else {
    h = d.synthetic.height;
    w = d.synthetic.width;
    c = d.synthetic.channels;
    classes = d.synthetic.num_classes;
  }
}

NetworkConfig parse_network(const json& jn, const DatasetSpec& dataset) {
  check_keys(jn, "network",
             {"stages", "blocks_per_stage", "base_channels", "num_classes", "attention",
              "reduction_ratio", "input"});
  int dh, dw, dc, dclasses;
  dataset_shape(dataset, dh, dw, dc, dclasses);

  json ji = section(jn, "network", "input");
  check_keys(ji, "network.input", {"height", "width", "channels"});
  const int in_h = static_cast<int>(get_int(ji, "network.input", "height", dh));
  const int in_w = static_cast<int>(get_int(ji, "network.input", "width", dw));
  const int in_c = static_cast<int>(get_int(ji, "network.input", "channels", dc));

  const AttentionKind kind =
      attention_kind_from_string(get_str(jn, "network", "attention", "channel"));
  const int classes = static_cast<int>(get_int(jn, "network", "num_classes", dclasses));
  const int ratio = static_cast<int>(get_int(jn, "network", "reduction_ratio", 16));

  const bool has_stages = jn.contains("stages");
  const bool has_shorthand = jn.contains("blocks_per_stage");
  if (has_stages && has_shorthand) {
    throw ConfigError("network.stages and network.blocks_per_stage are mutually exclusive");
  }

  NetworkConfig net;
  if (has_stages) {
    const json& ja = jn.at("stages");
    if (!ja.is_array() || ja.empty())
      throw ConfigError("network.stages must be a non-empty array");
    for (size_t i = 0; i < ja.size(); ++i) {
      const json& jstage = ja[i];
      const std::string where = "network.stages[" + std::to_string(i) + "]";
      if (!jstage.is_object()) throw ConfigError(where + " must be an object");
      check_keys(jstage, where, {"num_blocks", "channels", "height", "width", "stride_in"});
      StageSpec st;
      st.num_blocks = static_cast<int>(get_int(jstage, where, "num_blocks", 0));
      st.channels = static_cast<int>(get_int(jstage, where, "channels", 0));
      st.height = static_cast<int>(get_int(jstage, where, "height", 0));
      st.width = static_cast<int>(get_int(jstage, where, "width", 0));
      st.stride_in = static_cast<int>(get_int(jstage, where, "stride_in", 1));
      net.stages.push_back(st);
    }
    net.num_classes = classes;
    net.attention_kind = kind;
    net.reduction_ratio = ratio;
    net.input_height = in_h;
    net.input_width = in_w;
    net.input_channels = in_c;
  } else {
    const int bps = static_cast<int>(get_int(jn, "network", "blocks_per_stage", 3));
    const int base = static_cast<int>(get_int(jn, "network", "base_channels", 16));
    if (in_h != in_w) {
      throw ConfigError(
          "network.blocks_per_stage shorthand needs a square input; give network.stages "
          "explicitly");
    }
    net = desk_config(bps, kind, classes, in_h, in_c, base);
    net.reduction_ratio = ratio;
  }
  return net;
}

TrainConfig parse_train(const json& jt) {
  check_keys(jt, "train",
             {"mode", "epochs", "batch_size", "lr", "momentum", "weight_decay", "lambda_q",
              "lambda_r", "enabled_stages", "seed", "augment"});
  TrainConfig t;
  t.mode = train_mode_from_string(get_str(jt, "train", "mode", "reinforced"));
  t.epochs = static_cast<int>(get_int(jt, "train", "epochs", t.epochs));
  t.batch_size = get_int(jt, "train", "batch_size", t.batch_size);
  json jl = section(jt, "train", "lr");
  check_keys(jl, "train.lr", {"initial", "decay_epochs", "decay_factor"});
  t.lr.initial = get_num(jl, "train.lr", "initial", t.lr.initial);
  t.lr.decay_epochs = get_int_list(jl, "train.lr", "decay_epochs", t.lr.decay_epochs);
  t.lr.decay_factor = get_num(jl, "train.lr", "decay_factor", t.lr.decay_factor);
  t.momentum = get_num(jt, "train", "momentum", t.momentum);
  t.weight_decay = get_num(jt, "train", "weight_decay", t.weight_decay);
  t.lambda_q = get_num(jt, "train", "lambda_q", t.lambda_q);
  t.lambda_r = get_num(jt, "train", "lambda_r", t.lambda_r);
  t.enabled_stages = get_int_list(jt, "train", "enabled_stages", t.enabled_stages);
  t.seed = get_seed(jt, "train", "seed", t.seed);
  json ja = section(jt, "train", "augment");
  check_keys(ja, "train.augment", {"enabled", "pad", "hflip"});
  t.augment.enabled = get_bool(ja, "train.augment", "enabled", t.augment.enabled);
  t.augment.pad = static_cast<int>(get_int(ja, "train.augment", "pad", t.augment.pad));
  t.augment.hflip = get_bool(ja, "train.augment", "hflip", t.augment.hflip);
  return t;
}

}  // namespace

void ExperimentConfig::validate() const {
  dataset.validate();
  network.validate();
  train.validate(static_cast<int>(network.stages.size()));
  reward.validate();
  int dh, dw, dc, dclasses;
  dataset_shape(dataset, dh, dw, dc, dclasses);
  if (network.input_height != dh || network.input_width != dw || network.input_channels != dc) {
    throw ConfigError("network input " + std::to_string(network.input_height) + "x" +
                      std::to_string(network.input_width) + "x" +
                      std::to_string(network.input_channels) + " does not match dataset images " +
                      std::to_string(dh) + "x" + std::to_string(dw) + "x" + std::to_string(dc));
  }
  if (network.num_classes != dclasses) {
    throw ConfigError("network.num_classes " + std::to_string(network.num_classes) +
                      " does not match the dataset's " + std::to_string(dclasses) + " classes");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

ExperimentConfig config_from_json(const nlohmann::json& root) {
  if (!root.is_object()) throw ConfigError("config root must be an object");
  check_keys(root, "config", {"network", "train", "reward", "dataset", "output_dir", "plots"});
  ExperimentConfig cfg;
  cfg.dataset = parse_dataset(section(root, "config", "dataset"));
  cfg.network = parse_network(section(root, "config", "network"), cfg.dataset);
  cfg.train = parse_train(section(root, "config", "train"));
  json jr = section(root, "config", "reward");
  check_keys(jr, "reward", {"gamma", "ratio_epsilon"});
  cfg.reward.gamma = get_num(jr, "reward", "gamma", cfg.reward.gamma);
  cfg.reward.ratio_epsilon = get_num(jr, "reward", "ratio_epsilon", cfg.reward.ratio_epsilon);
  cfg.output_dir = get_str(root, "config", "output_dir", cfg.output_dir);
  json jp = section(root, "config", "plots");
  check_keys(jp, "plots", {"attention", "q_r"});
  cfg.plots.attention = get_bool(jp, "plots", "attention", cfg.plots.attention);
  cfg.plots.q_r = get_bool(jp, "plots", "q_r", cfg.plots.q_r);
  cfg.validate();
  return cfg;
}

nlohmann::json network_to_json(const NetworkConfig& net) {
  json stages = json::array();
  for (const StageSpec& s : net.stages) {
    stages.push_back({{"num_blocks", s.num_blocks},
                      {"channels", s.channels},
                      {"height", s.height},
                      {"width", s.width},
                      {"stride_in", s.stride_in}});
  }
  return {{"stages", stages},
          {"num_classes", net.num_classes},
          {"attention", to_string(net.attention_kind)},
          {"reduction_ratio", net.reduction_ratio},
          {"input",
           {{"height", net.input_height},
            {"width", net.input_width},
            {"channels", net.input_channels}}}};
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  json j;
  j["network"] = network_to_json(cfg.network);
  j["train"] = {{"mode", to_string(cfg.train.mode)},
                {"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"lr",
                 {{"initial", cfg.train.lr.initial},
                  {"decay_epochs", cfg.train.lr.decay_epochs},
                  {"decay_factor", cfg.train.lr.decay_factor}}},
                {"momentum", cfg.train.momentum},
                {"weight_decay", cfg.train.weight_decay},
                {"lambda_q", cfg.train.lambda_q},
                {"lambda_r", cfg.train.lambda_r},
                {"enabled_stages", cfg.train.enabled_stages},
                {"seed", cfg.train.seed},
                {"augment",
                 {{"enabled", cfg.train.augment.enabled},
                  {"pad", cfg.train.augment.pad},
                  {"hflip", cfg.train.augment.hflip}}}};
  j["reward"] = {{"gamma", cfg.reward.gamma}, {"ratio_epsilon", cfg.reward.ratio_epsilon}};
  j["dataset"] = {{"name", cfg.dataset.name},
                  {"root", cfg.dataset.root},
                  {"max_train", cfg.dataset.max_train},
                  {"max_val", cfg.dataset.max_val},
                  {"synthetic",
                   {{"num_classes", cfg.dataset.synthetic.num_classes},
                    {"train_per_class", cfg.dataset.synthetic.train_per_class},
                    {"val_per_class", cfg.dataset.synthetic.val_per_class},
                    {"height", cfg.dataset.synthetic.height},
                    {"width", cfg.dataset.synthetic.width},
                    {"channels", cfg.dataset.synthetic.channels},
                    {"noise", cfg.dataset.synthetic.noise},
                    {"jitter", cfg.dataset.synthetic.jitter},
                    {"distractor", cfg.dataset.synthetic.distractor},
                    {"seed", cfg.dataset.synthetic.seed}}}};
  j["output_dir"] = cfg.output_dir;
  j["plots"] = {{"attention", cfg.plots.attention}, {"q_r", cfg.plots.q_r}};
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  return load_config_with_overrides(path, {});
}

void apply_override(nlohmann::json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like section.key=value, got '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = text;

  std::vector<std::string> segs;
  std::string seg;
  std::istringstream ss(path);
  while (std::getline(ss, seg, '.')) {
    if (seg.empty()) throw ConfigError("override path '" + path + "' has an empty segment");
    segs.push_back(seg);
  }
  if (segs.empty()) throw ConfigError("override path is empty in '" + assignment + "'");

  json* cur = &tree;
  for (size_t i = 0; i + 1 < segs.size(); ++i) {
    if (!cur->is_object() && !cur->is_null()) {
      throw ConfigError("override path '" + path + "' passes through a non-object at '" +
                        segs[i] + "'");
    }
    cur = &(*cur)[segs[i]];
  }
  if (!cur->is_object() && !cur->is_null()) {
    throw ConfigError("override path '" + path + "' passes through a non-object");
  }
  (*cur)[segs.back()] = value;
}

ExperimentConfig load_config_with_overrides(const std::string& path,
                                            const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json tree = json::parse(buf.str(), nullptr, /*allow_exceptions=*/false);
  if (tree.is_discarded()) throw ConfigError("config file " + path + " is not valid JSON");
  for (const std::string& o : overrides) apply_override(tree, o);
  return config_from_json(tree);
}

}  // namespace reatt
