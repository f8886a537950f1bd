#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reatt/rng.hpp"
#include "reatt/tensor.hpp"

namespace reatt {

// Class-balanced Gaussian-blob images: each class owns a blob position on a
// ring and a color; every image also carries an uninformative distractor blob
// and pixel noise, so attention has something to suppress.
struct SyntheticSpec {
  int num_classes = 10;
  int train_per_class = 200;
  int val_per_class = 50;
  int height = 16;
  int width = 16;
  int channels = 3;
  double noise = 0.3;       // pixel noise stddev
  double jitter = 1.5;      // blob center jitter, pixels
  double distractor = 0.6;  // distractor blob amplitude
  uint64_t seed = 7;
};

struct DatasetSpec {
  std::string name = "synthetic";  // "synthetic" or "cifar10"
  std::string root;                // cifar10: directory holding the .bin batches
  int64_t max_train = 0;           // cifar10: cap per split, 0 = all
  int64_t max_val = 0;
  SyntheticSpec synthetic;

  void validate() const;  // ConfigError
};

template <typename T>
struct DataSplit {
  Tensor<T> images;  // (N, C, H, W)
  std::vector<int> labels;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

template <typename T>
struct Dataset {
  DataSplit<T> train;
  DataSplit<T> val;
  int num_classes = 0;
};

template <typename T>
Dataset<T> make_synthetic(const SyntheticSpec& spec);

// Expects the cifar-10-binary layout (data_batch_1..5.bin, test_batch.bin).
template <typename T>
Dataset<T> load_cifar10(const std::string& root, int64_t max_train, int64_t max_val);

template <typename T>
Dataset<T> ingest_dataset(const DatasetSpec& spec);

struct AugmentConfig {
  bool enabled = true;
  int pad = 2;  // random crop after zero padding by this much
  bool hflip = true;
};

// Copies the indexed samples; when augmentation is on, applies per-sample
// horizontal flip then padded random crop, drawing flip, dy, dx in that
// order. With aug.enabled=false this is exactly the eval pipeline.
template <typename T>
Tensor<T> assemble_batch(const DataSplit<T>& split, const std::vector<int64_t>& indices,
                         const AugmentConfig& aug, Rng& rng);

#define REATT_EXTERN_DATA(T)                                                            \
  extern template Dataset<T> make_synthetic<T>(const SyntheticSpec&);                   \
  extern template Dataset<T> load_cifar10<T>(const std::string&, int64_t, int64_t);     \
  extern template Dataset<T> ingest_dataset<T>(const DatasetSpec&);                     \
  extern template Tensor<T> assemble_batch<T>(const DataSplit<T>&,                      \
                                              const std::vector<int64_t>&,              \
                                              const AugmentConfig&, Rng&);

REATT_EXTERN_DATA(float)
REATT_EXTERN_DATA(double)
#undef REATT_EXTERN_DATA

}  // namespace reatt
