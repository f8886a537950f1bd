#include "reatt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "reatt/errors.hpp"

namespace reatt {

void DatasetSpec::validate() const {
  if (name != "synthetic" && name != "cifar10") {
    throw ConfigError("dataset.name must be \"synthetic\" or \"cifar10\", got \"" + name + "\"");
  }
  if (name == "cifar10" && root.empty()) {
    throw ConfigError("dataset.root is required for cifar10");
  }
  if (max_train < 0 || max_val < 0) throw ConfigError("dataset caps must be nonnegative");
  if (name == "synthetic") {
    const SyntheticSpec& s = synthetic;
    if (s.num_classes < 2) throw ConfigError("synthetic.num_classes must be at least 2");
    if (s.train_per_class < 1 || s.val_per_class < 1) {
      throw ConfigError("synthetic per-class counts must be positive");
    }
    if (s.height < 4 || s.width < 4 || s.channels < 1) {
      throw ConfigError("synthetic image shape is too small");
    }
  }
}

namespace {

template <typename T>
void render_blob(Tensor<T>& images, int64_t n, const double* color, int channels, int height,
                 int width, double cy, double cx, double sigma, double amplitude) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int c = 0; c < channels; ++c) {
    T* plane = images.data() + ((n * channels + c) * height) * width;
    const double a = amplitude * color[c % 3];
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        plane[y * width + x] += static_cast<T>(a * std::exp(-d2 * inv));
      }
    }
  }
}

template <typename T>
void fill_split(DataSplit<T>& split, int64_t count, const SyntheticSpec& spec, Rng& rng) {
  const int K = spec.num_classes;
  const int C = spec.channels;
  const int H = spec.height;
  const int W = spec.width;
  split.images = Tensor<T>::zeros({count, C, H, W});
  split.labels.resize(static_cast<size_t>(count));
  const double ring = 0.30 * std::min(H, W);
  const double sigma = 0.12 * std::min(H, W);
  const double tau = 6.283185307179586476925286766559;
  for (int64_t n = 0; n < count; ++n) {
    const int k = static_cast<int>(n % K);
    split.labels[static_cast<size_t>(n)] = k;
    const double angle = tau * k / K;
    double color[3];
    for (int c = 0; c < 3; ++c) {
      color[c] = 0.55 + 0.45 * std::sin(tau * (static_cast<double>(k) / K + c / 3.0));
    }
    const double cy = H * 0.5 + ring * std::sin(angle) + spec.jitter * rng.normal();
    const double cx = W * 0.5 + ring * std::cos(angle) + spec.jitter * rng.normal();
    render_blob(split.images, n, color, C, H, W, cy, cx, sigma, 1.0);

    double dcolor[3];
    for (int c = 0; c < 3; ++c) dcolor[c] = rng.uniform();
    const double dy = rng.uniform(0.0, H - 1.0);
    const double dx = rng.uniform(0.0, W - 1.0);
    render_blob(split.images, n, dcolor, C, H, W, dy, dx, sigma, spec.distractor);

    T* base = split.images.data() + n * C * H * W;
    for (int64_t i = 0; i < C * static_cast<int64_t>(H) * W; ++i) {
      double v = static_cast<double>(base[i]) + spec.noise * rng.normal();
      base[i] = static_cast<T>(std::clamp(v, 0.0, 1.0));
    }
  }
}

}  // namespace

template <typename T>
Dataset<T> make_synthetic(const SyntheticSpec& spec) {
  Dataset<T> ds;
  ds.num_classes = spec.num_classes;
  Rng rng(spec.seed);
  // Train first, then val, so the val set is stable under train-size changes
  // only if counts match; both derive from the single dataset seed.
  fill_split(ds.train, static_cast<int64_t>(spec.num_classes) * spec.train_per_class, spec, rng);
  fill_split(ds.val, static_cast<int64_t>(spec.num_classes) * spec.val_per_class, spec, rng);
  return ds;
}

namespace {

constexpr int kCifarH = 32;
constexpr int kCifarW = 32;
constexpr int kCifarC = 3;
constexpr int64_t kCifarRecord = 1 + kCifarC * kCifarH * kCifarW;

template <typename T>
void read_cifar_file(const std::string& path, DataSplit<T>& split, int64_t offset, int64_t cap) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path +
                  "; expected the cifar-10-binary layout (data_batch_1.bin .. data_batch_5.bin, "
                  "test_batch.bin) under the dataset root");
  }
  std::vector<unsigned char> record(static_cast<size_t>(kCifarRecord));
  int64_t n = offset;
  while (n < cap && in.read(reinterpret_cast<char*>(record.data()), kCifarRecord)) {
    split.labels[static_cast<size_t>(n)] = record[0];
    T* dst = split.images.data() + n * kCifarC * kCifarH * kCifarW;
    for (int64_t i = 0; i < kCifarRecord - 1; ++i) {
      dst[i] = static_cast<T>(record[1 + static_cast<size_t>(i)] / 255.0);
    }
    ++n;
  }
  if (n == offset) {
    throw IoError(path + " holds no complete records; the file may be truncated");
  }
}

}  // namespace

template <typename T>
Dataset<T> load_cifar10(const std::string& root, int64_t max_train, int64_t max_val) {
  Dataset<T> ds;
  ds.num_classes = 10;
  int64_t train_n = max_train > 0 ? std::min<int64_t>(max_train, 50000) : 50000;
  int64_t val_n = max_val > 0 ? std::min<int64_t>(max_val, 10000) : 10000;
  ds.train.images = Tensor<T>::zeros({train_n, kCifarC, kCifarH, kCifarW});
  ds.train.labels.resize(static_cast<size_t>(train_n));
  ds.val.images = Tensor<T>::zeros({val_n, kCifarC, kCifarH, kCifarW});
  ds.val.labels.resize(static_cast<size_t>(val_n));
  int64_t filled = 0;
  for (int b = 1; b <= 5 && filled < train_n; ++b) {
    char name[32];
    std::snprintf(name, sizeof(name), "data_batch_%d.bin", b);
    read_cifar_file(root + "/" + name, ds.train, filled, train_n);
    filled = std::min<int64_t>(train_n, filled + 10000);
  }
  read_cifar_file(root + "/test_batch.bin", ds.val, 0, val_n);
  return ds;
}

template <typename T>
Dataset<T> ingest_dataset(const DatasetSpec& spec) {
  spec.validate();
  if (spec.name == "cifar10") return load_cifar10<T>(spec.root, spec.max_train, spec.max_val);
  return make_synthetic<T>(spec.synthetic);
}

template <typename T>
Tensor<T> assemble_batch(const DataSplit<T>& split, const std::vector<int64_t>& indices,
                         const AugmentConfig& aug, Rng& rng) {
  if (split.images.rank() != 4) throw ShapeError("assemble_batch expects (N,C,H,W) images");
  const int64_t C = split.images.dim(1);
  const int64_t H = split.images.dim(2);
  const int64_t W = split.images.dim(3);
  const int64_t B = static_cast<int64_t>(indices.size());
  Tensor<T> out = Tensor<T>::zeros({B, C, H, W});
  const int pad = aug.enabled ? aug.pad : 0;
  for (int64_t b = 0; b < B; ++b) {
    const int64_t n = indices[static_cast<size_t>(b)];
    if (n < 0 || n >= split.size()) throw ShapeError("assemble_batch index out of range");
    const T* src = split.images.data() + n * C * H * W;
    T* dst = out.data() + b * C * H * W;
    bool flip = false;
    int64_t dy = 0;
    int64_t dx = 0;
    if (aug.enabled) {
      // Per-sample draw order is part of the data contract: flip, dy, dx.
      flip = aug.hflip && rng.bernoulli(0.5);
      if (pad > 0) {
        dy = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(2 * pad + 1))) - pad;
        dx = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(2 * pad + 1))) - pad;
      }
    }
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t y = 0; y < H; ++y) {
        const int64_t sy = y + dy;
        if (sy < 0 || sy >= H) continue;
        for (int64_t x = 0; x < W; ++x) {
          int64_t sx = x + dx;
          if (sx < 0 || sx >= W) continue;
          if (flip) sx = W - 1 - sx;
          dst[(c * H + y) * W + x] = src[(c * H + sy) * W + sx];
        }
      }
    }
  }
  return out;
}

#define REATT_INSTANTIATE_DATA(T)                                                          \
  template Dataset<T> make_synthetic<T>(const SyntheticSpec&);                             \
  template Dataset<T> load_cifar10<T>(const std::string&, int64_t, int64_t);               \
  template Dataset<T> ingest_dataset<T>(const DatasetSpec&);                               \
  template Tensor<T> assemble_batch<T>(const DataSplit<T>&, const std::vector<int64_t>&,   \
                                       const AugmentConfig&, Rng&);

REATT_INSTANTIATE_DATA(float)
REATT_INSTANTIATE_DATA(double)
#undef REATT_INSTANTIATE_DATA

}  // namespace reatt
