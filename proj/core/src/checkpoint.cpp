#include "reatt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <functional>
#include <vector>

#include "reatt/errors.hpp"

namespace reatt {

namespace {

constexpr char kMagic[8] = {'R', 'E', 'A', 'T', 'C', 'K', 'P', 'T'};

void put_bytes(std::ofstream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ofstream& out, uint32_t v) { put_bytes(out, &v, sizeof v); }
void put_u64(std::ofstream& out, uint64_t v) { put_bytes(out, &v, sizeof v); }
void put_i64(std::ofstream& out, int64_t v) { put_bytes(out, &v, sizeof v); }

void put_string(std::ofstream& out, const std::string& s) {
  put_u64(out, s.size());
  put_bytes(out, s.data(), s.size());
}

void get_bytes(std::ifstream& in, void* p, size_t n, const std::string& what) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in.gcount()) != n) {
    throw CheckpointError("truncated checkpoint while reading " + what);
  }
}

uint32_t get_u32(std::ifstream& in, const std::string& what) {
  uint32_t v = 0;
  get_bytes(in, &v, sizeof v, what);
  return v;
}

uint64_t get_u64(std::ifstream& in, const std::string& what) {
  uint64_t v = 0;
  get_bytes(in, &v, sizeof v, what);
  return v;
}

int64_t get_i64(std::ifstream& in, const std::string& what) {
  int64_t v = 0;
  get_bytes(in, &v, sizeof v, what);
  return v;
}

std::string get_string(std::ifstream& in, const std::string& what) {
  uint64_t n = get_u64(in, what + " length");
  if (n > (1ULL << 32)) throw CheckpointError("implausible string length in " + what);
  std::string s(static_cast<size_t>(n), '\0');
  get_bytes(in, s.data(), s.size(), what);
  return s;
}

template <typename T>
void put_tensor(std::ofstream& out, const std::string& name, const Tensor<T>& t) {
  put_string(out, name);
  put_u32(out, static_cast<uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) put_i64(out, t.dim(i));
  put_bytes(out, t.data(), static_cast<size_t>(t.numel()) * sizeof(T));
}

template <typename T>
void get_tensor_into(std::ifstream& in, const std::string& group, Tensor<T>& dst) {
  // Caller has already consumed the name; the shape must match the target.
  uint32_t rank = get_u32(in, group + " tensor rank");
  if (rank > 8) throw CheckpointError("implausible tensor rank in " + group);
  std::vector<int64_t> shape(rank);
  for (uint32_t i = 0; i < rank; ++i) shape[i] = get_i64(in, group + " tensor dim");
  if (shape != dst.shape()) {
    throw CheckpointError("tensor shape mismatch in " + group + ": checkpoint has " +
                          Tensor<T>::shape_str(shape) + ", network expects " +
                          Tensor<T>::shape_str(dst.shape()));
  }
  get_bytes(in, dst.data(), static_cast<size_t>(dst.numel()) * sizeof(T), group + " tensor data");
}

template <typename T>
void put_group_params(std::ofstream& out, const std::string& name,
                      const std::vector<NamedParam<T>>& params) {
  put_string(out, name);
  put_u64(out, params.size());
  for (const auto& p : params) put_tensor(out, p.name, p.var->value);
}

template <typename T>
void put_group_buffers(std::ofstream& out, const std::string& name,
                       const std::vector<NamedBuffer<T>>& buffers) {
  put_string(out, name);
  put_u64(out, buffers.size());
  for (const auto& b : buffers) put_tensor(out, b.name, *b.tensor);
}

template <typename T>
void put_group_slots(std::ofstream& out, const std::string& name, const Sgd<T>& opt) {
  put_string(out, name);
  put_u64(out, opt.params().size());
  for (size_t i = 0; i < opt.params().size(); ++i) {
    put_tensor(out, opt.params()[i].name, opt.buffers()[i]);
  }
}

struct GroupReader {
  std::ifstream& in;
  std::string expected;

  void open(const std::string& name) {
    expected = name;
    std::string got = get_string(in, "group name");
    if (got != name) {
      throw CheckpointError("checkpoint group order mismatch: expected '" + name + "', found '" +
                            got + "'");
    }
  }

  template <typename T>
  void read_into(size_t count, const std::function<Tensor<T>&(const std::string&)>& target) {
    uint64_t stored = get_u64(in, expected + " tensor count");
    if (stored != count) {
      throw CheckpointError("group '" + expected + "' holds " + std::to_string(stored) +
                            " tensors, network expects " + std::to_string(count));
    }
    for (uint64_t i = 0; i < stored; ++i) {
      std::string name = get_string(in, expected + " tensor name");
      get_tensor_into(in, expected + "/" + name, target(name));
    }
  }
};

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const ExperimentConfig& cfg, Network<T>& net,
                     Trainer<T>& trainer, int next_epoch) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint path " + path + " for writing");
  put_bytes(out, kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_string(out, to_json(cfg).dump());
  put_i64(out, next_epoch);
  put_u32(out, sizeof(T));

  put_group_params(out, "backbone.params", net.backbone_params().params());
  put_group_buffers(out, "backbone.buffers", net.backbone_params().buffers());
  put_group_params(out, "actors.params", net.actor_params().params());
  put_group_buffers(out, "actors.buffers", net.actor_params().buffers());
  put_group_params(out, "critics.params", net.critic_params().params());
  put_group_buffers(out, "critics.buffers", net.critic_params().buffers());
  put_group_slots(out, "opt.backbone", trainer.backbone_opt());
  put_group_slots(out, "opt.actors", trainer.actor_opt());
  put_group_slots(out, "opt.critics", trainer.critic_opt());
  out.flush();
  if (!out) throw IoError("write failure on checkpoint path " + path);
}

namespace {

std::ifstream open_checked(const std::string& path, CheckpointHeader& header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  get_bytes(in, magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointError(path + " is not a checkpoint (bad magic)");
  }
  uint32_t version = get_u32(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) +
                          " is not supported by this build (expects " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  std::string cfg_text = get_string(in, "embedded config");
  nlohmann::json tree = nlohmann::json::parse(cfg_text, nullptr, false);
  if (tree.is_discarded()) throw CheckpointError("embedded config is not valid JSON");
  header.config = config_from_json(tree);
  header.next_epoch = static_cast<int>(get_i64(in, "epoch"));
  header.scalar_bytes = static_cast<int>(get_u32(in, "scalar width"));
  return in;
}

}  // namespace

CheckpointHeader read_checkpoint_header(const std::string& path) {
  CheckpointHeader header;
  open_checked(path, header);
  return header;
}

template <typename T>
CheckpointHeader restore_checkpoint(const std::string& path, Network<T>& net,
                                    Trainer<T>* trainer) {
  CheckpointHeader header;
  std::ifstream in = open_checked(path, header);
  if (header.scalar_bytes != static_cast<int>(sizeof(T))) {
    throw CheckpointError("checkpoint holds " + std::to_string(8 * header.scalar_bytes) +
                          "-bit scalars, network uses " + std::to_string(8 * sizeof(T)) + "-bit");
  }
  const std::string want = network_to_json(net.config()).dump();
  const std::string got = network_to_json(header.config.network).dump();
  if (want != got) {
    throw CheckpointError("checkpoint was written for a different network layout: " + got +
                          " vs " + want);
  }

  auto params_target = [](ParamRegistry<T>& reg) {
    return std::function<Tensor<T>&(const std::string&)>(
        [&reg](const std::string& name) -> Tensor<T>& {
          for (const auto& p : reg.params()) {
            if (p.name == name) return p.var->value;
          }
          throw CheckpointError("checkpoint names unknown parameter '" + name + "'");
        });
  };
  auto buffers_target = [](ParamRegistry<T>& reg) {
    return std::function<Tensor<T>&(const std::string&)>(
        [&reg](const std::string& name) -> Tensor<T>& {
          for (const auto& b : reg.buffers()) {
            if (b.name == name) return *b.tensor;
          }
          throw CheckpointError("checkpoint names unknown buffer '" + name + "'");
        });
  };
  auto slots_target = [](Sgd<T>& opt) {
    return std::function<Tensor<T>&(const std::string&)>(
        [&opt](const std::string& name) -> Tensor<T>& {
          for (size_t i = 0; i < opt.params().size(); ++i) {
            if (opt.params()[i].name == name) return opt.buffers()[i];
          }
          throw CheckpointError("checkpoint names unknown optimizer slot '" + name + "'");
        });
  };

  GroupReader reader{in, ""};
  reader.open("backbone.params");
  reader.read_into<T>(net.backbone_params().size(), params_target(net.backbone_params()));
  reader.open("backbone.buffers");
  reader.read_into<T>(net.backbone_params().buffers().size(),
                      buffers_target(net.backbone_params()));
  reader.open("actors.params");
  reader.read_into<T>(net.actor_params().size(), params_target(net.actor_params()));
  reader.open("actors.buffers");
  reader.read_into<T>(net.actor_params().buffers().size(), buffers_target(net.actor_params()));
  reader.open("critics.params");
  reader.read_into<T>(net.critic_params().size(), params_target(net.critic_params()));
  reader.open("critics.buffers");
  reader.read_into<T>(net.critic_params().buffers().size(), buffers_target(net.critic_params()));

  if (trainer != nullptr) {
    reader.open("opt.backbone");
    reader.read_into<T>(trainer->backbone_opt().params().size(),
                        slots_target(trainer->backbone_opt()));
    reader.open("opt.actors");
    reader.read_into<T>(trainer->actor_opt().params().size(), slots_target(trainer->actor_opt()));
    reader.open("opt.critics");
    reader.read_into<T>(trainer->critic_opt().params().size(),
                        slots_target(trainer->critic_opt()));
  }
  return header;
}

#define REATT_INSTANTIATE_CHECKPOINT(T)                                                      \
  template void save_checkpoint<T>(const std::string&, const ExperimentConfig&, Network<T>&, \
                                   Trainer<T>&, int);                                        \
  template CheckpointHeader restore_checkpoint<T>(const std::string&, Network<T>&,           \
                                                  Trainer<T>*);

REATT_INSTANTIATE_CHECKPOINT(float)
REATT_INSTANTIATE_CHECKPOINT(double)
#undef REATT_INSTANTIATE_CHECKPOINT

}  // namespace reatt
