#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "artic/corpus.hpp"

namespace artic {

// One ROI channel: either an axis-aligned rectangle or an explicit pixel mask.
struct RoiChannel {
  std::string name;
  bool is_rect = true;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive-exclusive
  std::vector<std::uint8_t> mask;      // H*W when !is_rect

  std::size_t pixel_count(std::size_t W) const {
    if (is_rect)
      return static_cast<std::size_t>(x1 - x0) * static_cast<std::size_t>(y1 - y0);
    std::size_t n = 0;
    for (auto b : mask) n += b;
    (void)W;
    return n;
  }
};

struct RoiSpec {
  std::array<RoiChannel, kNumRoiChannels> channels;

  void validate(std::size_t H, std::size_t W) const {
    for (int c = 0; c < kNumRoiChannels; ++c) {
      const auto& ch = channels[static_cast<std::size_t>(c)];
      if (ch.name != kRoiChannelNames[c])
        throw ConfigError("ROI channel " + std::to_string(c) + " must be " +
                          kRoiChannelNames[c] + ", got " + ch.name);
      if (ch.is_rect) {
        if (ch.x0 < 0 || ch.y0 < 0 || ch.x1 > static_cast<int>(W) || ch.y1 > static_cast<int>(H) ||
            ch.x0 >= ch.x1 || ch.y0 >= ch.y1)
          throw ConfigError("ROI rectangle for " + ch.name + " out of bounds or empty");
      } else {
        if (ch.mask.size() != H * W) throw ConfigError("ROI mask size mismatch for " + ch.name);
        if (ch.pixel_count(W) == 0) throw ConfigError("ROI mask empty for " + ch.name);
      }
    }
  }
};

// Spec matching the synthetic renderer's fixed squares.
inline RoiSpec default_roi_spec() {
  RoiSpec spec;
  for (int c = 0; c < kNumRoiChannels; ++c) {
    auto& ch = spec.channels[static_cast<std::size_t>(c)];
    ch.name = kRoiChannelNames[c];
    ch.is_rect = true;
    ch.y0 = kRoiSquares[static_cast<std::size_t>(c)].first;
    ch.x0 = kRoiSquares[static_cast<std::size_t>(c)].second;
    ch.y1 = ch.y0 + kRoiSquareSize;
    ch.x1 = ch.x0 + kRoiSquareSize;
  }
  return spec;
}

// File format: six lines `LABEL x0 y0 x1 y1` in fixed channel order, or
// `LABEL @maskfile` naming an H*W 0/1 byte grid.
inline void write_roi_spec(const RoiSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  for (const auto& ch : spec.channels) {
    if (!ch.is_rect) throw ConfigError("mask-backed ROI channels must be written by hand");
    out << ch.name << ' ' << ch.x0 << ' ' << ch.y0 << ' ' << ch.x1 << ' ' << ch.y1 << '\n';
  }
}

inline RoiSpec read_roi_spec(const std::filesystem::path& path, std::size_t H, std::size_t W) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  RoiSpec spec;
  std::string line;
  int c = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (c >= kNumRoiChannels) throw FormatError("more than 6 ROI channels", 0);
    auto& ch = spec.channels[static_cast<std::size_t>(c)];
    std::istringstream ss(line);
    std::string tail;
    ss >> ch.name >> tail;
    if (!tail.empty() && tail[0] == '@') {
      ch.is_rect = false;
      std::ifstream mf(path.parent_path() / tail.substr(1), std::ios::binary);
      if (!mf) throw FormatError("cannot open mask file " + tail.substr(1), 0);
      ch.mask.assign(std::istreambuf_iterator<char>(mf), std::istreambuf_iterator<char>());
      for (auto& b : ch.mask) b = b ? 1 : 0;
    } else {
      ch.is_rect = true;
      ch.x0 = std::stoi(tail);
      ss >> ch.y0 >> ch.x1 >> ch.y1;
      if (!ss) throw FormatError("bad ROI rectangle line: " + line, 0);
    }
    ++c;
  }
  if (c != kNumRoiChannels) throw FormatError("expected 6 ROI channels, got " + std::to_string(c), 0);
  spec.validate(H, W);
  return spec;
}

struct RoiTrace {
  std::size_t T = 0;
  int channels = kNumRoiChannels;
  std::vector<float> values;  // T x channels

  float& at(std::size_t t, int c) { return values[t * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)]; }
  float at(std::size_t t, int c) const { return values[t * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)]; }
};

inline RoiTrace extract_roi_trace(const FrameSequence& frames, const RoiSpec& spec) {
  spec.validate(frames.H, frames.W);
  RoiTrace trace;
  trace.T = frames.T;
  trace.values.resize(frames.T * kNumRoiChannels);
  for (std::size_t t = 0; t < frames.T; ++t) {
    const float* f = frames.frame(t);
    for (int c = 0; c < kNumRoiChannels; ++c) {
      const auto& ch = spec.channels[static_cast<std::size_t>(c)];
      double sum = 0.0;
      std::size_t n = 0;
      if (ch.is_rect) {
        for (int y = ch.y0; y < ch.y1; ++y)
          for (int x = ch.x0; x < ch.x1; ++x)
            sum += f[static_cast<std::size_t>(y) * frames.W + static_cast<std::size_t>(x)];
        n = ch.pixel_count(frames.W);
      } else {
        for (std::size_t i = 0; i < ch.mask.size(); ++i)
          if (ch.mask[i]) {
            sum += f[i];
            ++n;
          }
      }
      trace.at(t, c) = static_cast<float>(sum / static_cast<double>(n));
    }
  }
  return trace;
}

struct FlowField {
  std::size_t T = 0, H = 0, W = 0;
  std::vector<float> components;  // T x 2 x H x W, channel 0 horizontal (u)
  bool degenerate = false;        // T==1 input, all-zero result

  float* plane(std::size_t t, int c) {
    return components.data() + (t * 2 + static_cast<std::size_t>(c)) * H * W;
  }
  const float* plane(std::size_t t, int c) const {
    return components.data() + (t * 2 + static_cast<std::size_t>(c)) * H * W;
  }
};

// Horn-Schunck flow between adjacent frames. Derivative estimates average over
// the 2x2x2 cube straddling the frame pair; the fixed-point update uses the
// 4-neighbor mean. Output frame t holds motion from t-1 to t; frame 0 is
// zero-padded so T matches the input.
inline FlowField estimate_flow(const FrameSequence& frames, int iterations = 100,
                               float smoothness = 15.0f) {
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (!(smoothness > 0)) throw ConfigError("smoothness must be positive");
  FlowField flow;
  flow.T = frames.T;
  flow.H = frames.H;
  flow.W = frames.W;
  flow.components.assign(frames.T * 2 * frames.H * frames.W, 0.0f);
  if (frames.T < 2) {
    flow.degenerate = true;
    return flow;
  }

  const std::size_t H = frames.H, W = frames.W, N = H * W;
  const double alpha2 = static_cast<double>(smoothness) * smoothness;
  std::vector<double> ex(N), ey(N), et(N), u(N), v(N), ub(N), vb(N);

  auto px = [&](const float* f, std::size_t y, std::size_t x) -> double {
    if (y >= H) y = H - 1;
    if (x >= W) x = W - 1;
    return f[y * W + x];
  };

  for (std::size_t t = 1; t < frames.T; ++t) {
    const float* f0 = frames.frame(t - 1);
    const float* f1 = frames.frame(t);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        std::size_t i = y * W + x;
        ex[i] = 0.25 * (px(f0, y, x + 1) - px(f0, y, x) + px(f0, y + 1, x + 1) -
                        px(f0, y + 1, x) + px(f1, y, x + 1) - px(f1, y, x) +
                        px(f1, y + 1, x + 1) - px(f1, y + 1, x));
        ey[i] = 0.25 * (px(f0, y + 1, x) - px(f0, y, x) + px(f0, y + 1, x + 1) -
                        px(f0, y, x + 1) + px(f1, y + 1, x) - px(f1, y, x) +
                        px(f1, y + 1, x + 1) - px(f1, y, x + 1));
        et[i] = 0.25 * (px(f1, y, x) - px(f0, y, x) + px(f1, y, x + 1) - px(f0, y, x + 1) +
                        px(f1, y + 1, x) - px(f0, y + 1, x) + px(f1, y + 1, x + 1) -
                        px(f0, y + 1, x + 1));
      }
    std::fill(u.begin(), u.end(), 0.0);
    std::fill(v.begin(), v.end(), 0.0);
    for (int it = 0; it < iterations; ++it) {
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          std::size_t i = y * W + x;
          double su = 0.0, sv = 0.0;
          int n = 0;
          if (y > 0) { su += u[i - W]; sv += v[i - W]; ++n; }
          if (y + 1 < H) { su += u[i + W]; sv += v[i + W]; ++n; }
          if (x > 0) { su += u[i - 1]; sv += v[i - 1]; ++n; }
          if (x + 1 < W) { su += u[i + 1]; sv += v[i + 1]; ++n; }
          ub[i] = su / n;
          vb[i] = sv / n;
        }
      for (std::size_t i = 0; i < N; ++i) {
        double k = (ex[i] * ub[i] + ey[i] * vb[i] + et[i]) /
                   (alpha2 + ex[i] * ex[i] + ey[i] * ey[i]);
        u[i] = ub[i] - ex[i] * k;
        v[i] = vb[i] - ey[i] * k;
      }
    }
    float* pu = flow.plane(t, 0);
    float* pv = flow.plane(t, 1);
    for (std::size_t i = 0; i < N; ++i) {
      pu[i] = static_cast<float>(u[i]);
      pv[i] = static_cast<float>(v[i]);
    }
  }
  return flow;
}

// Zero flow wherever the frame intensity falls below rel_threshold times the
// per-frame maximum. Keeps only articulator-related motion.
inline FlowField mask_flow(const FlowField& flow, const FrameSequence& frames,
                           float rel_threshold = 0.2f) {
  if (flow.T != frames.T || flow.H != frames.H || flow.W != frames.W)
    throw ShapeError("flow/frames dimension mismatch");
  if (!(rel_threshold > 0.0f) || !(rel_threshold < 1.0f))
    throw ConfigError("rel_threshold must be in (0,1)");
  FlowField out = flow;
  const std::size_t N = flow.H * flow.W;
  for (std::size_t t = 0; t < flow.T; ++t) {
    const float* f = frames.frame(t);
    float mx = 0.0f;
    for (std::size_t i = 0; i < N; ++i) mx = std::max(mx, f[i]);
    const float thr = rel_threshold * mx;
    float* pu = out.plane(t, 0);
    float* pv = out.plane(t, 1);
    for (std::size_t i = 0; i < N; ++i)
      if (f[i] < thr) {
        pu[i] = 0.0f;
        pv[i] = 0.0f;
      }
  }
  return out;
}

// Per-channel z-score statistics, computed on the training split only and
// persisted with the checkpoint.
struct FeatureStats {
  std::vector<float> mean, std;  // one entry per channel

  // layout T x C (ROI traces)
  void apply_interleaved(std::vector<float>& data, std::size_t channels) const {
    if (mean.size() != channels)
      throw ShapeError("normalization stats have " + std::to_string(mean.size()) +
                       " channels, feature has " + std::to_string(channels));
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::size_t c = i % channels;
      data[i] = (data[i] - mean[c]) / std[c];
    }
  }

  // layout T x C x H x W

  void apply_planar(std::vector<float>& data, std::size_t T, std::size_t channels,
                    std::size_t plane_size) const {
    if (mean.size() != channels) throw ShapeError("normalization stats channel mismatch");
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < channels; ++c) {
        float* p = data.data() + (t * channels + c) * plane_size;
        for (std::size_t i = 0; i < plane_size; ++i) p[i] = (p[i] - mean[c]) / std[c];
      }
  }
};

inline constexpr float kStdFloor = 1e-6f;

// Accumulates per-channel moments across many tensors before finalizing.
class StatsAccumulator {
 public:
  explicit StatsAccumulator(std::size_t channels) : sum_(channels, 0.0), sumsq_(channels, 0.0), n_(channels, 0) {}

  void add_interleaved(const std::vector<float>& data, std::size_t channels) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::size_t c = i % channels;
      sum_[c] += data[i];
      sumsq_[c] += static_cast<double>(data[i]) * data[i];
      ++n_[c];
    }
  }

  void add_planar(const std::vector<float>& data, std::size_t T, std::size_t channels,
                  std::size_t plane_size) {
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < channels; ++c) {
        const float* p = data.data() + (t * channels + c) * plane_size;
        for (std::size_t i = 0; i < plane_size; ++i) {
          sum_[c] += p[i];
          sumsq_[c] += static_cast<double>(p[i]) * p[i];
        }
        n_[c] += plane_size;
      }
  }

  FeatureStats finalize() const {
    FeatureStats s;
    for (std::size_t c = 0; c < sum_.size(); ++c) {
      if (n_[c] == 0) throw ConfigError("no data accumulated for channel " + std::to_string(c));
      double m = sum_[c] / static_cast<double>(n_[c]);
      double var = sumsq_[c] / static_cast<double>(n_[c]) - m * m;
      if (var < 0) var = 0;
      s.mean.push_back(static_cast<float>(m));
      s.std.push_back(std::max(kStdFloor, static_cast<float>(std::sqrt(var))));
    }
    return s;
  }

 private:
  std::vector<double> sum_, sumsq_;
  std::vector<std::size_t> n_;
};

}  // namespace artic
