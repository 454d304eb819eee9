#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "artic/common.hpp"

namespace artic {

inline constexpr int kNumRoiChannels = 6;
inline constexpr const char* kRoiChannelNames[kNumRoiChannels] = {"LA", "TT", "TB",
                                                                  "VL", "TR", "LX"};

struct PhonemeInventory {
  // labels[0] is always the CTC blank "<blk>".
  std::vector<std::string> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t num_phonemes() const { return labels.size() - 1; }

  int index_of(std::string_view label) const {
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) return static_cast<int>(i);
    return -1;
  }

  void validate() const {
    if (labels.size() < 2) throw ConfigError("inventory needs blank plus at least one phoneme");
    if (labels[0] != "<blk>") throw ConfigError("inventory index 0 must be <blk>");
    for (std::size_t i = 0; i < labels.size(); ++i)
      for (std::size_t j = i + 1; j < labels.size(); ++j)
        if (labels[i] == labels[j]) throw ConfigError("duplicate inventory label: " + labels[i]);
  }

  static PhonemeInventory with_phonemes(std::vector<std::string> phones) {
    PhonemeInventory inv;
    inv.labels.reserve(phones.size() + 1);
    inv.labels.push_back("<blk>");
    for (auto& p : phones) inv.labels.push_back(std::move(p));
    inv.validate();
    return inv;
  }
};

struct FrameSequence {
  std::size_t T = 0, H = 0, W = 0;
  float fps = 100.0f;
  std::vector<float> data;  // T*H*W, frame-major

  float& at(std::size_t t, std::size_t y, std::size_t x) { return data[(t * H + y) * W + x]; }
  float at(std::size_t t, std::size_t y, std::size_t x) const { return data[(t * H + y) * W + x]; }
  const float* frame(std::size_t t) const { return data.data() + t * H * W; }
  float* frame(std::size_t t) { return data.data() + t * H * W; }
};

struct Segment {
  int phoneme = 0;           // inventory index, never 0 (blank)
  std::size_t begin = 0;     // inclusive frame
  std::size_t end = 0;       // exclusive frame
  std::size_t length() const { return end - begin; }
};

struct Alignment {
  std::vector<Segment> segments;

  std::size_t span() const { return segments.empty() ? 0 : segments.back().end; }

  void validate(std::size_t T) const {
    if (segments.empty()) throw ConfigError("alignment has no segments");
    std::size_t cursor = 0;
    for (const auto& s : segments) {
      if (s.begin != cursor) throw ConfigError("alignment segments not contiguous");
      if (s.end <= s.begin) throw ConfigError("alignment segment empty");
      if (s.phoneme == 0) throw ConfigError("alignment segment labeled blank");
      cursor = s.end;
    }
    if (cursor != T) throw ConfigError("alignment does not cover [0,T)");
  }

  std::vector<int> label_sequence() const {
    std::vector<int> out;
    out.reserve(segments.size());
    for (const auto& s : segments) out.push_back(s.phoneme);
    return out;
  }

  // Label of the segment containing frame t.
  int label_at(std::size_t t) const {
    for (const auto& s : segments)
      if (t >= s.begin && t < s.end) return s.phoneme;
    throw ConfigError("frame outside alignment span");
  }
};

struct Utterance {
  std::string id;
  FrameSequence frames;
  Alignment alignment;
  std::vector<int> targets;  // alignment collapsed; adjacent duplicates kept

  void validate() const {
    alignment.validate(frames.T);
    if (targets != alignment.label_sequence())
      throw ConfigError("utterance targets disagree with alignment");
  }
};

// Synthetic articulation plan: one constriction target per ROI channel per
// phoneme, driven by critically damped second-order dynamics.
struct GestureScore {
  // Indexed by inventory index; row 0 (blank) is unused.
  std::vector<std::array<float, kNumRoiChannels>> targets;
  std::vector<float> duration_ms;  // mean segment duration per phoneme
  float omega = 40.0f;             // stiffness, 1/s
  // Anticipatory coarticulation: over the second half of each segment the
  // driving target blends linearly toward the next phoneme's target, reaching
  // weight `coart` at the segment end. In natural order these cues are
  // consistent with the following segment; frame-order perturbations that
  // permute segments turn them into misleading evidence about a neighbor
  // that is no longer there.
  float coart = 0.5f;

  void validate(const PhonemeInventory& inv) const {
    if (targets.size() != inv.size() || duration_ms.size() != inv.size())
      throw ConfigError("gesture score size does not match inventory");
    if (!(omega > 0)) throw ConfigError("gesture stiffness must be positive");
    if (coart < 0.0f || coart > 0.9f)
      throw ConfigError("coarticulation weight must be in [0, 0.9]");
    for (std::size_t p = 1; p < targets.size(); ++p) {
      for (float v : targets[p])
        if (v < 0.0f || v > 1.0f)
          throw ConfigError("gesture target out of [0,1] for " + inv.labels[p]);
      if (duration_ms[p] < 50.0f || duration_ms[p] > 150.0f)
        throw ConfigError("gesture duration outside [50,150] ms for " + inv.labels[p]);
    }
  }
};

struct GenerateOptions {
  std::size_t height = 104, width = 104;
  float fps = 100.0f;
  float background = 0.05f;
  float noise_sigma = 0.02f;  // 0 disables noise
  std::size_t min_phonemes = 5, max_phonemes = 15;
};

// Fixed 9x9 ROI squares used by the renderer, top-left corners (y, x).
// default_roi_rects() in features.hpp mirrors these so ROI extraction can be
// checked against the generator's channel trajectories analytically.
inline constexpr std::array<std::pair<int, int>, kNumRoiChannels> kRoiSquares = {
    {{10, 10}, {10, 47}, {10, 84}, {60, 10}, {60, 47}, {84, 84}}};
inline constexpr int kRoiSquareSize = 9;

namespace detail {

// Critically damped second-order tracking of per-channel targets, integrated
// at 1 kHz and sampled at the frame rate. Returns T x 6 channel values.
inline std::vector<std::array<float, kNumRoiChannels>> simulate_gesture_track(
    const std::vector<Segment>& segments, const GestureScore& score, float fps) {
  const double dt = 1e-3;
  const int substeps = static_cast<int>(std::lround(1.0 / (fps * dt)));
  std::array<double, kNumRoiChannels> x, v;
  x.fill(0.5);
  v.fill(0.0);
  const double w = score.omega;
  std::vector<std::array<float, kNumRoiChannels>> track;
  track.reserve(segments.back().end);
  for (std::size_t si = 0; si < segments.size(); ++si) {
    const auto& seg = segments[si];
    const auto& own = score.targets[static_cast<std::size_t>(seg.phoneme)];
    const auto* next =
        si + 1 < segments.size()
            ? &score.targets[static_cast<std::size_t>(segments[si + 1].phoneme)]
            : nullptr;
    const double len = static_cast<double>(seg.length());
    for (std::size_t t = seg.begin; t < seg.end; ++t) {
      // blend weight ramps 0 -> coart over the second half of the segment
      const double frac = (static_cast<double>(t - seg.begin) + 0.5) / len;
      const double lam =
          next ? score.coart * std::max(0.0, (frac - 0.5) * 2.0) : 0.0;
      std::array<double, kNumRoiChannels> tgt;
      for (int c = 0; c < kNumRoiChannels; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        tgt[ci] = (1.0 - lam) * own[ci] + (next ? lam * (*next)[ci] : 0.0);
      }
      for (int s = 0; s < substeps; ++s) {
        for (int c = 0; c < kNumRoiChannels; ++c) {
          double a = w * w * (tgt[static_cast<std::size_t>(c)] - x[c]) - 2.0 * w * v[c];
          v[c] += a * dt;
          x[c] += v[c] * dt;
        }
      }
      std::array<float, kNumRoiChannels> f;
      for (int c = 0; c < kNumRoiChannels; ++c) f[c] = clamp01(static_cast<float>(x[c]));
      track.push_back(f);
    }
  }
  return track;
}

}  // namespace detail

inline Utterance generate_utterance(const PhonemeInventory& inventory, const GestureScore& score,
                                    const std::string& id, std::uint64_t seed,
                                    const GenerateOptions& opt = {}) {
  constexpr std::size_t kMinFrameSide = 84 + kRoiSquareSize;  // last square must fit
  if (opt.height < kMinFrameSide || opt.width < kMinFrameSide)
    throw ConfigError("frame size too small for the fixed ROI square layout");
  auto rng = rng_for(seed, id);
  std::uniform_int_distribution<std::size_t> n_dist(opt.min_phonemes, opt.max_phonemes);
  std::uniform_int_distribution<int> ph_dist(1, static_cast<int>(inventory.size()) - 1);
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);

  const std::size_t n = n_dist(rng);
  Utterance u;
  u.id = id;

  std::size_t cursor = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Segment seg;
    seg.phoneme = ph_dist(rng);
    double ms = score.duration_ms[static_cast<std::size_t>(seg.phoneme)] * (1.0 + jitter(rng));
    auto frames = static_cast<std::size_t>(std::lround(ms * opt.fps / 1000.0));
    if (frames < 1) frames = 1;
    seg.begin = cursor;
    seg.end = cursor + frames;
    cursor = seg.end;
    u.alignment.segments.push_back(seg);
  }
  u.targets = u.alignment.label_sequence();

  auto track = detail::simulate_gesture_track(u.alignment.segments, score, opt.fps);

  const std::size_t T = cursor, H = opt.height, W = opt.width;
  u.frames.T = T;
  u.frames.H = H;
  u.frames.W = W;
  u.frames.fps = opt.fps;
  u.frames.data.resize(T * H * W);
  std::normal_distribution<float> noise(0.0f, opt.noise_sigma);
  for (std::size_t t = 0; t < T; ++t) {
    float* f = u.frames.frame(t);
    for (std::size_t i = 0; i < H * W; ++i) f[i] = opt.background;
    for (int c = 0; c < kNumRoiChannels; ++c) {
      auto [y0, x0] = kRoiSquares[static_cast<std::size_t>(c)];
      for (int dy = 0; dy < kRoiSquareSize; ++dy)
        for (int dx = 0; dx < kRoiSquareSize; ++dx)
          f[(static_cast<std::size_t>(y0 + dy)) * W + static_cast<std::size_t>(x0 + dx)] =
              track[t][c];
    }
    if (opt.noise_sigma > 0.0f)
      for (std::size_t i = 0; i < H * W; ++i) f[i] = clamp01(f[i] + noise(rng));
  }
  u.validate();
  return u;
}

inline std::vector<Utterance> generate_corpus(const PhonemeInventory& inventory,
                                              const GestureScore& score, std::size_t n_utterances,
                                              std::uint64_t seed, const GenerateOptions& opt = {}) {
  if (n_utterances < 1) throw ConfigError("n_utterances must be >= 1");
  if (inventory.size() < 3) throw ConfigError("inventory must have blank plus two phonemes");
  inventory.validate();
  score.validate(inventory);
  std::vector<Utterance> corpus;
  corpus.reserve(n_utterances);
  for (std::size_t i = 0; i < n_utterances; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "utt%05zu", i);
    corpus.push_back(generate_utterance(inventory, score, id, seed, opt));
  }
  return corpus;
}

// Sliding-window slicing. Final partial window is kept when at least 1 s long;
// segments cut at window edges keep their label.
inline std::vector<Utterance> slice_windows(const Utterance& utt, double window_s, double hop_s) {
  if (!(window_s > 0) || !(hop_s > 0)) throw ConfigError("window and hop must be positive");
  const float fps = utt.frames.fps;
  const std::size_t T = utt.frames.T;
  const auto win = static_cast<std::size_t>(window_s * fps);
  const auto hop = static_cast<std::size_t>(hop_s * fps);
  const auto min_len = static_cast<std::size_t>(fps);  // 1 s

  if (T < min_len) return {utt};

  std::vector<Utterance> out;
  for (std::size_t start = 0; start < T; start += hop) {
    std::size_t stop = std::min(start + win, T);
    if (stop - start < min_len && start > 0) break;
    Utterance w;
    w.id = utt.id + "#w" + std::to_string(out.size());
    w.frames.T = stop - start;
    w.frames.H = utt.frames.H;
    w.frames.W = utt.frames.W;
    w.frames.fps = fps;
    const std::size_t fsz = utt.frames.H * utt.frames.W;
    w.frames.data.assign(utt.frames.data.begin() + static_cast<std::ptrdiff_t>(start * fsz),
                         utt.frames.data.begin() + static_cast<std::ptrdiff_t>(stop * fsz));
    for (const auto& seg : utt.alignment.segments) {
      std::size_t b = std::max(seg.begin, start), e = std::min(seg.end, stop);
      if (b >= e) continue;
      w.alignment.segments.push_back({seg.phoneme, b - start, e - start});
    }
    w.targets = w.alignment.label_sequence();
    w.validate();
    out.push_back(std::move(w));
    if (stop == T) break;
  }
  return out;
}

enum class Split { Train, Valid, Test };

// Deterministic 80/10/10 split keyed on utterance id hash, so windows sliced
// from one utterance can never straddle splits.
inline Split split_of(std::string_view utterance_id, double train_frac = 0.8,
                      double valid_frac = 0.1) {
  double x = static_cast<double>(fnv1a(utterance_id) % 1000000ull) / 1000000.0;
  if (x < train_frac) return Split::Train;
  if (x < train_frac + valid_frac) return Split::Valid;
  return Split::Test;
}

// Exact-count split: ids ordered by hash, then partitioned. Used where a test
// pins precise split sizes.
inline std::array<std::vector<std::size_t>, 3> split_indices_exact(
    const std::vector<Utterance>& corpus, std::size_t n_train, std::size_t n_valid,
    std::size_t n_test) {
  if (n_train + n_valid + n_test > corpus.size())
    throw ConfigError("split sizes exceed corpus size");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto ha = fnv1a(corpus[a].id), hb = fnv1a(corpus[b].id);
    return ha != hb ? ha < hb : corpus[a].id < corpus[b].id;
  });
  std::array<std::vector<std::size_t>, 3> out;
  std::size_t i = 0;
  for (; i < n_train; ++i) out[0].push_back(order[i]);
  for (; i < n_train + n_valid; ++i) out[1].push_back(order[i]);
  for (; i < n_train + n_valid + n_test; ++i) out[2].push_back(order[i]);
  return out;
}

}  // namespace artic
