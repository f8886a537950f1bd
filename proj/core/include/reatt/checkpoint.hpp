#pragma once

#include <cstdint>
#include <string>

#include "reatt/config.hpp"
#include "reatt/trainer.hpp"

namespace reatt {

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  ExperimentConfig config;
  int next_epoch = 0;     // first epoch a resumed run should execute
  int scalar_bytes = 8;   // 4 = float32 tensors, 8 = float64
};

// Container: magic, schema version, embedded config, epoch marker, then the
// three parameter groups with their buffers and optimizer momentum slots, all
// tensors stored by name in native byte order.
CheckpointHeader read_checkpoint_header(const std::string& path);

template <typename T>
void save_checkpoint(const std::string& path, const ExperimentConfig& cfg, Network<T>& net,
                     Trainer<T>& trainer, int next_epoch);

// Fills a network (and trainer, when given) that was built from the embedded
// config. Name, shape, scalar-width, or layout mismatches are refused with a
// CheckpointError naming the offender.
template <typename T>
CheckpointHeader restore_checkpoint(const std::string& path, Network<T>& net,
                                    Trainer<T>* trainer);

#define REATT_EXTERN_CHECKPOINT(T)                                                           \
  extern template void save_checkpoint<T>(const std::string&, const ExperimentConfig&,       \
                                          Network<T>&, Trainer<T>&, int);                    \
  extern template CheckpointHeader restore_checkpoint<T>(const std::string&, Network<T>&,    \
                                                         Trainer<T>*);

REATT_EXTERN_CHECKPOINT(float)
REATT_EXTERN_CHECKPOINT(double)
#undef REATT_EXTERN_CHECKPOINT

}  // namespace reatt
