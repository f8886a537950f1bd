#include "reatt/diagnostics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "reatt/errors.hpp"

namespace reatt {

namespace {

// ---------------------------------------------------------------- raster ---

struct Rgb {
  unsigned char r, g, b;
};

constexpr Rgb kWhite{255, 255, 255};
constexpr Rgb kBlack{32, 32, 32};
constexpr Rgb kGray{176, 176, 176};
constexpr Rgb kBlue{46, 94, 170};
constexpr Rgb kLightBlue{198, 214, 240};
constexpr Rgb kPurple{126, 74, 168};
constexpr Rgb kOrange{214, 126, 44};

struct Canvas {
  int w, h;
  std::vector<unsigned char> px;

  Canvas(int w_, int h_) : w(w_), h(h_), px(static_cast<size_t>(w_) * h_ * 3) {
    for (size_t i = 0; i < px.size(); i += 3) {
      px[i] = kWhite.r;
      px[i + 1] = kWhite.g;
      px[i + 2] = kWhite.b;
    }
  }

  void set(int x, int y, Rgb c) {
    if (x < 0 || x >= w || y < 0 || y >= h) return;
    size_t i = 3 * (static_cast<size_t>(y) * w + x);
    px[i] = c.r;
    px[i + 1] = c.g;
    px[i + 2] = c.b;
  }

  void fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::max(0, y0); y <= std::min(h - 1, y1); ++y) {
      for (int x = std::max(0, x0); x <= std::min(w - 1, x1); ++x) set(x, y, c);
    }
  }

  void line(int x0, int y0, int x1, int y1, Rgb c) {
    int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void text(int x, int y, const std::string& s, Rgb c);
};

// 5x7 glyphs, low five bits per row. Letters render in a single case.
const unsigned char* glyph_rows(char ch) {
  static const std::map<char, std::array<unsigned char, 7>> table = {
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
      {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
      {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
      {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
      {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
      {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'a', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'b', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'c', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
      {'d', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
      {'e', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
      {'f', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'g', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
      {'h', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'i', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'j', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'k', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
      {'l', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'m', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
      {'n', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
      {'o', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'p', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
      {'r', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'s', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
      {'t', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'u', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'v', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'w', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
      {'x', {0x11, 0x0A, 0x04, 0x04, 0x04, 0x0A, 0x11}},
      {'y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
      {'z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
      {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
      {'/', {0x01, 0x02, 0x02, 0x04, 0x08, 0x08, 0x10}},
      {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
      {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
      {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
  };
  char key = ch;
  if (key >= 'A' && key <= 'Z') key = static_cast<char>(key - 'A' + 'a');
  auto it = table.find(key);
  if (it == table.end()) it = table.find('.');
  return it->second.data();
}

void Canvas::text(int x, int y, const std::string& s, Rgb c) {
  for (char ch : s) {
    const unsigned char* rows = glyph_rows(ch);
    for (int ry = 0; ry < 7; ++ry) {
      for (int rx = 0; rx < 5; ++rx) {
        if (rows[ry] & (1 << (4 - rx))) set(x + rx, y + ry, c);
      }
    }
    x += 6;
  }
}

void put_be32(std::vector<unsigned char>& v, uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

void append_chunk(std::vector<unsigned char>& out, const char type[4],
                  const std::vector<unsigned char>& data) {
  put_be32(out, static_cast<uint32_t>(data.size()));
  size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + type_at, static_cast<uInt>(4 + data.size()));
  put_be32(out, static_cast<uint32_t>(crc));
}

void write_png(const std::string& path, const Canvas& c) {
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<size_t>(c.h) * (1 + 3 * static_cast<size_t>(c.w)));
  for (int y = 0; y < c.h; ++y) {
    raw.push_back(0);  // filter: none
    const unsigned char* row = c.px.data() + 3 * static_cast<size_t>(y) * c.w;
    raw.insert(raw.end(), row, row + 3 * static_cast<size_t>(c.w));
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> deflated(bound);
  if (compress2(deflated.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw IoError("png compression failed for " + path);
  }
  deflated.resize(bound);

  std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  std::vector<unsigned char> ihdr;
  put_be32(ihdr, static_cast<uint32_t>(c.w));
  put_be32(ihdr, static_cast<uint32_t>(c.h));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", deflated);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failure on " + path);
}

// ------------------------------------------------------------ plot frame ---

struct Frame {
  int x0, y0, x1, y1;  // pixel bounds of the data area
  double lo, hi;       // y data range

  int map_x(double t) const {  // t in [0, 1]
    return x0 + static_cast<int>(std::lround(t * (x1 - x0)));
  }
  int map_y(double v) const {
    double t = (v - lo) / (hi - lo);
    return y1 - static_cast<int>(std::lround(t * (y1 - y0)));
  }
};

std::string short_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Frame make_frame(Canvas& cv, const std::string& title, double lo, double hi) {
  if (!(hi > lo)) {
    double c = lo;
    lo = c - 0.5;
    hi = c + 0.5;
  } else {
    double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  Frame fr{44, 18, cv.w - 10, cv.h - 24, lo, hi};
  cv.text(6, 4, title, kBlack);
  cv.line(fr.x0, fr.y0, fr.x0, fr.y1, kGray);
  cv.line(fr.x0, fr.y1, fr.x1, fr.y1, kGray);
  cv.line(fr.x0, fr.y0, fr.x1, fr.y0, kGray);
  cv.line(fr.x1, fr.y0, fr.x1, fr.y1, kGray);
  cv.text(2, fr.y0, short_real(hi), kBlack);
  cv.text(2, fr.y1 - 7, short_real(lo), kBlack);
  return fr;
}

void draw_series(Canvas& cv, const Frame& fr, const std::vector<double>& xs,
                 const std::vector<double>& ys, double x_lo, double x_hi, Rgb c) {
  int px = 0, py = 0;
  bool have_prev = false;
  const double span = x_hi > x_lo ? x_hi - x_lo : 1.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (std::isnan(ys[i])) continue;
    int x = fr.map_x((xs[i] - x_lo) / span);
    int y = fr.map_y(ys[i]);
    if (have_prev) {
      cv.line(px, py, x, y, c);
    } else {
      cv.set(x, y, c);
    }
    px = x;
    py = y;
    have_prev = true;
  }
}

std::string block_of_key(const std::string& key) {
  auto dot = key.rfind('.');
  return key.substr(0, dot);
}

std::string kind_of_key(const std::string& key) {
  auto dot = key.rfind('.');
  return key.substr(dot + 1);
}

}  // namespace

template <typename T>
std::vector<AttentionSnapshot> snapshot_attention(Network<T>& net, const DataSplit<T>& split,
                                                  int64_t batch_size) {
  NoGradGuard guard;
  Rng unused(0);
  AugmentConfig no_aug;
  no_aug.enabled = false;
  ForwardOptions fwd{/*training=*/false, /*update_running=*/false, /*record_traces=*/true};
  const int64_t n = split.size();

  std::vector<AttentionSnapshot> snaps;
  std::map<std::pair<BlockId, ActionKind>, size_t> index;
  std::vector<std::vector<long double>> acc;

  // Pass 1 accumulates sums, pass 2 squared deviations from the fixed means.
  for (int pass = 0; pass < 2; ++pass) {
    for (int64_t start = 0; start < n; start += batch_size) {
      const int64_t stop = std::min(n, start + batch_size);
      std::vector<int64_t> idx;
      for (int64_t i = start; i < stop; ++i) idx.push_back(i);
      Tensor<T> images = assemble_batch(split, idx, no_aug, unused);
      auto res = net.forward(images, {}, fwd);
      for (const auto& tr : res.traces) {
        auto key = std::make_pair(tr.id, tr.kind);
        if (index.find(key) == index.end()) {
          index[key] = snaps.size();
          AttentionSnapshot s;
          s.id = tr.id;
          s.kind = tr.kind;
          const int64_t len = tr.applied.values->value.numel() / images.dim(0);
          s.mean.assign(static_cast<size_t>(len), 0.0);
          s.variance.assign(static_cast<size_t>(len), 0.0);
          snaps.push_back(std::move(s));
          acc.emplace_back(static_cast<size_t>(len), 0.0L);
        }
        const size_t si = index[key];
        AttentionSnapshot& s = snaps[si];
        const Tensor<T>& a = tr.applied.values->value;
        const int64_t b_count = images.dim(0);
        const int64_t len = static_cast<int64_t>(s.mean.size());
        for (int64_t b = 0; b < b_count; ++b) {
          for (int64_t e = 0; e < len; ++e) {
            const double v = static_cast<double>(a[b * len + e]);
            if (pass == 0) {
              acc[si][static_cast<size_t>(e)] += v;
            } else {
              const double d = v - s.mean[static_cast<size_t>(e)];
              acc[si][static_cast<size_t>(e)] += d * d;
            }
          }
        }
      }
    }
    for (size_t si = 0; si < snaps.size(); ++si) {
      auto& dst = pass == 0 ? snaps[si].mean : snaps[si].variance;
      for (size_t e = 0; e < dst.size(); ++e) {
        dst[e] = static_cast<double>(acc[si][e] / static_cast<long double>(n));
        acc[si][e] = 0.0L;
      }
    }
  }
  return snaps;
}

std::vector<std::string> emit_plots(const std::vector<MetricRecord>& history,
                                    const std::vector<AttentionSnapshot>& snapshots,
                                    const std::string& output_dir, const PlotConfig& plots) {
  std::vector<std::string> written;
  if (history.empty()) {
    std::cerr << "warning: empty metric history, no plots emitted\n";
    return written;
  }
  std::filesystem::create_directories(output_dir);

  if (plots.attention) {
    for (const AttentionSnapshot& s : snapshots) {
      const std::string key = to_string(s.id) + "." + to_string(s.kind);
      double lo = 1e300, hi = -1e300;
      for (size_t i = 0; i < s.mean.size(); ++i) {
        lo = std::min(lo, s.mean[i] - 3.0 * s.variance[i]);
        hi = std::max(hi, s.mean[i] + 3.0 * s.variance[i]);
      }
      Canvas cv(480, 320);
      Frame fr = make_frame(cv, "attention " + key, lo, hi);
      const size_t n = s.mean.size();
      const double x_hi = n > 1 ? static_cast<double>(n - 1) : 1.0;
      for (size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / x_hi;
        const int x = fr.map_x(t);
        int y_top = fr.map_y(s.mean[i] + 3.0 * s.variance[i]);
        int y_bot = fr.map_y(s.mean[i] - 3.0 * s.variance[i]);
        for (int y = y_top; y <= y_bot; ++y) cv.set(x, y, kLightBlue);
      }
      std::vector<double> xs(n), ys(n);
      for (size_t i = 0; i < n; ++i) {
        xs[i] = static_cast<double>(i);
        ys[i] = s.mean[i];
      }
      draw_series(cv, fr, xs, ys, 0.0, x_hi, kBlue);
      cv.text(fr.x0, cv.h - 16, "0", kBlack);
      cv.text(fr.x1 - 6 * static_cast<int>(short_real(x_hi).size()), cv.h - 16, short_real(x_hi),
              kBlack);
      cv.text(fr.x0 + 40, cv.h - 16, "mean / 3x variance band", kBlack);

      const std::string png = output_dir + "/attention_" + key + ".png";
      write_png(png, cv);
      written.push_back(png);

      nlohmann::json side;
      side["block"] = to_string(s.id);
      side["kind"] = to_string(s.kind);
      side["mean"] = s.mean;
      side["variance"] = s.variance;
      const std::string js = output_dir + "/attention_" + key + ".json";
      std::ofstream out(js, std::ios::trunc);
      if (!out) throw IoError("cannot open " + js + " for writing");
      out << side.dump() << "\n";
      written.push_back(js);
    }
  }

  if (plots.q_r) {
    // Group Q keys by block; every enabled block also has an R column.
    std::map<std::string, std::vector<std::string>> kinds_of_block;
    for (const auto& [key, value] : history.front().q_means) {
      (void)value;
      kinds_of_block[block_of_key(key)].push_back(kind_of_key(key));
    }
    std::vector<double> epochs;
    for (const MetricRecord& r : history) epochs.push_back(static_cast<double>(r.epoch));
    const double e_lo = epochs.front();
    const double e_hi = epochs.back();

    for (const auto& [block, kinds] : kinds_of_block) {
      std::map<std::string, std::vector<double>> q_series;
      std::vector<double> r_series;
      double lo = 1e300, hi = -1e300;
      for (const MetricRecord& rec : history) {
        for (const std::string& kind : kinds) {
          const std::string key = block + "." + kind;
          for (const auto& [k, v] : rec.q_means) {
            if (k == key) {
              q_series[kind].push_back(v);
              lo = std::min(lo, v);
              hi = std::max(hi, v);
            }
          }
        }
        double rv = std::nan("");
        for (const auto& [k, v] : rec.r_means) {
          if (k == block) rv = v;
        }
        r_series.push_back(rv);
        if (!std::isnan(rv)) {
          lo = std::min(lo, rv);
          hi = std::max(hi, rv);
        }
      }

      Canvas cv(480, 320);
      Frame fr = make_frame(cv, "q/r " + block, lo, hi);
      int legend_y = fr.y0 + 4;
      const Rgb q_colors[2] = {kBlue, kPurple};
      int ci = 0;
      for (const std::string& kind : kinds) {
        draw_series(cv, fr, epochs, q_series[kind], e_lo, e_hi, q_colors[ci % 2]);
        cv.fill_rect(fr.x1 - 86, legend_y, fr.x1 - 80, legend_y + 6, q_colors[ci % 2]);
        cv.text(fr.x1 - 76, legend_y, "q " + kind, kBlack);
        legend_y += 10;
        ++ci;
      }
      draw_series(cv, fr, epochs, r_series, e_lo, e_hi, kOrange);
      cv.fill_rect(fr.x1 - 86, legend_y, fr.x1 - 80, legend_y + 6, kOrange);
      cv.text(fr.x1 - 76, legend_y, "r", kBlack);
      cv.text(fr.x0, cv.h - 16, short_real(e_lo), kBlack);
      cv.text(fr.x1 - 6 * static_cast<int>(short_real(e_hi).size()), cv.h - 16, short_real(e_hi),
              kBlack);
      cv.text(fr.x0 + 60, cv.h - 16, "epoch", kBlack);

      const std::string png = output_dir + "/qr_" + block + ".png";
      write_png(png, cv);
      written.push_back(png);

      nlohmann::json side;
      side["block"] = block;
      side["epochs"] = epochs;
      nlohmann::json jq = nlohmann::json::object();
      for (const auto& [kind, series] : q_series) jq[kind] = series;
      side["q"] = jq;
      nlohmann::json jr = nlohmann::json::array();
      for (double v : r_series) {
        if (std::isnan(v)) {
          jr.push_back(nullptr);
        } else {
          jr.push_back(v);
        }
      }
      side["r"] = jr;
      const std::string js = output_dir + "/qr_" + block + ".json";
      std::ofstream out(js, std::ios::trunc);
      if (!out) throw IoError("cannot open " + js + " for writing");
      out << side.dump() << "\n";
      written.push_back(js);
    }
  }
  return written;
}

template <typename T>
std::vector<AblationRow> ablation_report(Network<T>& net, const DataSplit<T>& split,
                                         const RewardConfig& cfg, int64_t batch_size) {
  NoGradGuard guard;
  Rng unused(0);
  AugmentConfig no_aug;
  no_aug.enabled = false;
  ForwardOptions fwd{/*training=*/false, /*update_running=*/false, /*record_traces=*/false};
  const auto ids = net.block_ids();
  std::map<BlockId, AblationRow> rows;
  for (const BlockId& id : ids) rows[id] = AblationRow{id, 0, 0, 0, 0};
  const int64_t n = split.size();
  if (net.config().attention_kind == AttentionKind::none || n == 0) return {};

  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t stop = std::min(n, start + batch_size);
    std::vector<int64_t> idx;
    std::vector<int> labels;
    for (int64_t i = start; i < stop; ++i) {
      idx.push_back(i);
      labels.push_back(split.labels[static_cast<size_t>(i)]);
    }
    Tensor<T> images = assemble_batch(split, idx, no_aug, unused);
    auto full = net.forward(images, {}, fwd);
    auto bypassed = bypass_forward(net, images, ids, /*training=*/false);
    for (const BlockId& id : ids) {
      auto rec = make_reward_record(id, full.prediction, bypassed.at(id), labels, cfg);
      AblationRow& row = rows[id];
      for (size_t i = 0; i < rec.reward.size(); ++i) {
        row.mean_reward += static_cast<double>(rec.reward[i]);
        row.mean_p_full += static_cast<double>(rec.p_full[i]);
        row.mean_p_bypassed += static_cast<double>(rec.p_bypassed[i]);
        row.accuracy_full += rec.correct[i] ? 1.0 : 0.0;
      }
    }
  }
  std::vector<AblationRow> out;
  for (auto& [id, row] : rows) {
    row.mean_reward /= static_cast<double>(n);
    row.mean_p_full /= static_cast<double>(n);
    row.mean_p_bypassed /= static_cast<double>(n);
    row.accuracy_full /= static_cast<double>(n);
    out.push_back(row);
  }
  return out;
}

#define REATT_INSTANTIATE_DIAG(T)                                                            \
  template std::vector<AttentionSnapshot> snapshot_attention<T>(Network<T>&,                 \
                                                                const DataSplit<T>&, int64_t); \
  template std::vector<AblationRow> ablation_report<T>(Network<T>&, const DataSplit<T>&,     \
                                                       const RewardConfig&, int64_t);

REATT_INSTANTIATE_DIAG(float)
REATT_INSTANTIATE_DIAG(double)
#undef REATT_INSTANTIATE_DIAG

}  // namespace reatt
