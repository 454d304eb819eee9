#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "artic/corpus.hpp"
#include "artic/features.hpp"

namespace artic {

// All transforms operate on a generic frame-indexed stream: T frames of
// frame_size floats each. ROI traces, raw video and flow all fit this view,
// so one harness serves every feature type.
struct StreamView {
  std::vector<float>* data;
  std::size_t T;
  std::size_t frame_size;
};

namespace detail {

inline void apply_frame_order(StreamView s, const std::vector<std::size_t>& order) {
  std::vector<float> out(order.size() * s.frame_size);
  for (std::size_t i = 0; i < order.size(); ++i)
    std::copy_n(s.data->data() + order[i] * s.frame_size, s.frame_size,
                out.data() + i * s.frame_size);
  *s.data = std::move(out);
}

}  // namespace detail

// Segment order permuted uniformly at random; frame order within each segment
// kept. Returns the permuted alignment (targets follow the same permutation).
inline Alignment cross_phoneme_shuffle(StreamView stream, const Alignment& alignment,
                                       std::uint64_t seed) {
  alignment.validate(stream.T);
  std::vector<std::size_t> perm(alignment.segments.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<std::size_t> order;
  order.reserve(stream.T);
  Alignment out;
  std::size_t cursor = 0;
  for (std::size_t p : perm) {
    const auto& seg = alignment.segments[p];
    for (std::size_t t = seg.begin; t < seg.end; ++t) order.push_back(t);
    out.segments.push_back({seg.phoneme, cursor, cursor + seg.length()});
    cursor += seg.length();
  }
  detail::apply_frame_order(stream, order);
  return out;
}

// Frames shuffled independently inside each segment; segment order, alignment
// and targets unchanged.
inline void per_phoneme_shuffle(StreamView stream, const Alignment& alignment,
                                std::uint64_t seed) {
  alignment.validate(stream.T);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(stream.T);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (const auto& seg : alignment.segments)
    std::shuffle(order.begin() + static_cast<std::ptrdiff_t>(seg.begin),
                 order.begin() + static_cast<std::ptrdiff_t>(seg.end), rng);
  detail::apply_frame_order(stream, order);
}

// Frame order reversed within each segment. Involution; alignment unchanged.
inline void time_reverse(StreamView stream, const Alignment& alignment) {
  alignment.validate(stream.T);
  std::vector<std::size_t> order(stream.T);
  for (const auto& seg : alignment.segments)
    for (std::size_t t = seg.begin; t < seg.end; ++t)
      order[t] = seg.end - 1 - (t - seg.begin);
  detail::apply_frame_order(stream, order);
}

// Each frame duplicated; alignment boundaries doubled.
inline Alignment upsample2(StreamView stream, const Alignment& alignment) {
  alignment.validate(stream.T);
  std::vector<std::size_t> order;
  order.reserve(stream.T * 2);
  for (std::size_t t = 0; t < stream.T; ++t) {
    order.push_back(t);
    order.push_back(t);
  }
  detail::apply_frame_order(stream, order);
  Alignment out;
  for (const auto& seg : alignment.segments)
    out.segments.push_back({seg.phoneme, seg.begin * 2, seg.end * 2});
  return out;
}

// Keeps even-indexed frames. Boundaries map to ceil(b/2); segments that would
// vanish keep one frame, stolen from the longer neighbor.
inline Alignment downsample2(StreamView stream, const Alignment& alignment, bool* warned = nullptr) {
  alignment.validate(stream.T);
  if (stream.T <= 1) {
    if (warned) *warned = true;
    return alignment;
  }
  std::vector<std::size_t> order;
  for (std::size_t t = 0; t < stream.T; t += 2) order.push_back(t);
  const std::size_t newT = order.size();
  detail::apply_frame_order(stream, order);

  std::vector<std::size_t> bounds;  // segment start positions, then newT
  bounds.push_back(0);
  for (std::size_t i = 1; i < alignment.segments.size(); ++i)
    bounds.push_back((alignment.segments[i].begin + 1) / 2);
  bounds.push_back(newT);

  // Repair empty segments by shifting the boundary into the longer neighbor.
  for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
    if (bounds[i + 1] > bounds[i]) continue;
    std::size_t left = i > 0 ? bounds[i] - bounds[i - 1] : 0;
    std::size_t right = i + 2 < bounds.size() ? bounds[i + 2] - bounds[i + 1] : 0;
    if (right >= left && right > 1)
      bounds[i + 1] = bounds[i] + 1;
    else if (left > 1)
      --bounds[i];
    else
      bounds[i + 1] = bounds[i] + 1;  // both neighbors minimal; push right anyway
  }
  Alignment out;
  for (std::size_t i = 0; i + 1 < bounds.size(); ++i)
    out.segments.push_back({alignment.segments[i].phoneme, bounds[i], bounds[i + 1]});
  out.validate(newT);
  return out;
}

// Channel removal for the ROI ablation sweep; remaining order preserved.
inline RoiTrace ablate_roi_channel(const RoiTrace& trace, int channel) {
  if (channel < 0 || channel >= trace.channels) throw ConfigError("ablation channel out of range");
  RoiTrace out;
  out.T = trace.T;
  out.channels = trace.channels - 1;
  out.values.reserve(trace.T * static_cast<std::size_t>(out.channels));
  for (std::size_t t = 0; t < trace.T; ++t)
    for (int c = 0; c < trace.channels; ++c)
      if (c != channel) out.values.push_back(trace.at(t, c));
  return out;
}

enum class PerturbKind { None, CrossShuffle, PerPhonemeShuffle, TimeReverse, Upsample2, Downsample2 };

inline const char* perturb_name(PerturbKind k) {
  switch (k) {
    case PerturbKind::None: return "none";
    case PerturbKind::CrossShuffle: return "xshuf";
    case PerturbKind::PerPhonemeShuffle: return "pshuf";
    case PerturbKind::TimeReverse: return "trev";
    case PerturbKind::Upsample2: return "up2";
    case PerturbKind::Downsample2: return "down2";
  }
  return "?";
}

inline PerturbKind parse_perturb(std::string_view s) {
  if (s == "none" || s.empty()) return PerturbKind::None;
  if (s == "xshuf") return PerturbKind::CrossShuffle;
  if (s == "pshuf") return PerturbKind::PerPhonemeShuffle;
  if (s == "trev") return PerturbKind::TimeReverse;
  if (s == "up2") return PerturbKind::Upsample2;
  if (s == "down2") return PerturbKind::Downsample2;
  throw ConfigError("unknown perturbation '" + std::string(s) +
                    "', expected one of none,xshuf,pshuf,trev,up2,down2");
}

// Applies a perturbation to one stream and returns the updated alignment and
// targets. The PRNG is split per utterance id so parallel schedules agree.
inline Alignment apply_perturb(PerturbKind kind, StreamView stream, const Alignment& alignment,
                               std::uint64_t seed, std::string_view utt_id) {
  std::uint64_t s = rng_for(seed, utt_id)();
  switch (kind) {
    case PerturbKind::None:
      return alignment;
    case PerturbKind::CrossShuffle:
      return cross_phoneme_shuffle(stream, alignment, s);
    case PerturbKind::PerPhonemeShuffle: {
      per_phoneme_shuffle(stream, alignment, s);
      return alignment;
    }
    case PerturbKind::TimeReverse:
      time_reverse(stream, alignment);
      return alignment;
    case PerturbKind::Upsample2:
      return upsample2(stream, alignment);
    case PerturbKind::Downsample2:
      return downsample2(stream, alignment);
  }
  return alignment;
}

}  // namespace artic
