#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "artic/common.hpp"

namespace artic {

// Targets interleaved with blanks: (blk, l1, blk, l2, ..., blk). Length 2L+1,
// blanks at even positions.
inline std::vector<int> extended_labels(const std::vector<int>& targets) {
  std::vector<int> ext;
  ext.reserve(targets.size() * 2 + 1);
  ext.push_back(0);
  for (int t : targets) {
    ext.push_back(t);
    ext.push_back(0);
  }
  return ext;
}

template <class S>
struct CtcResultT {
  double loss = 0.0;
  std::vector<S> grad;  // T x (K+1), w.r.t. pre-softmax logits
  bool feasible = true;
};

using CtcResult = CtcResultT<float>;

// Row-wise log-softmax in double precision. logits is T x C.
template <class S>
std::vector<double> log_softmax(const std::vector<S>& logits, std::size_t T, std::size_t C) {
  std::vector<double> out(T * C);
  for (std::size_t t = 0; t < T; ++t) {
    const S* row = logits.data() + t * C;
    double mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    double lz = mx + std::log(z);
    for (std::size_t c = 0; c < C; ++c) out[t * C + c] = row[c] - lz;
  }
  return out;
}

template <class S>
std::vector<S> frame_posteriors(const std::vector<S>& logits, std::size_t T, std::size_t C) {
  auto lsm = log_softmax(logits, T, C);
  std::vector<S> out(T * C);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<S>(std::exp(lsm[i]));
  return out;
}

// Forward-backward CTC loss over all blank-augmented monotone paths, in log
// space, with the analytic gradient softmax - gamma w.r.t. pre-softmax logits.
template <class S>
CtcResultT<S> ctc_loss(const std::vector<S>& logits, std::size_t T, std::size_t C,
                       const std::vector<int>& targets) {
  if (logits.size() != T * C) throw ShapeError("logits size mismatch");
  for (int y : targets)
    if (y <= 0 || y >= static_cast<int>(C)) throw ConfigError("target index out of range");

  const auto ext = extended_labels(targets);
  const std::size_t E = ext.size();
  const auto lp = log_softmax(logits, T, C);
  auto lpt = [&](std::size_t t, int k) { return lp[t * C + static_cast<std::size_t>(k)]; };

  CtcResultT<S> res;

  // Quick feasibility: need T >= L + #adjacent duplicate pairs; the DP below
  // confirms exactly.
  std::vector<double> alpha(T * E, kLogZero), beta(T * E, kLogZero);
  alpha[0] = lpt(0, ext[0]);
  if (E > 1) alpha[1] = lpt(0, ext[1]);
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t s = 0; s < E; ++s) {
      double a = alpha[(t - 1) * E + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * E + s - 1]);
      if (s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2])
        a = log_add(a, alpha[(t - 1) * E + s - 2]);
      alpha[t * E + s] = a + lpt(t, ext[s]);
    }
  double log_p = alpha[(T - 1) * E + E - 1];
  if (E > 1) log_p = log_add(log_p, alpha[(T - 1) * E + E - 2]);
  if (log_p == kLogZero) {
    res.feasible = false;
    res.loss = std::numeric_limits<double>::infinity();
    return res;
  }
  res.loss = -log_p;

  beta[(T - 1) * E + E - 1] = lpt(T - 1, ext[E - 1]);
  if (E > 1) beta[(T - 1) * E + E - 2] = lpt(T - 1, ext[E - 2]);
  for (std::size_t t = T - 1; t-- > 0;)
    for (std::size_t s = 0; s < E; ++s) {
      double b = beta[(t + 1) * E + s];
      if (s + 1 < E) b = log_add(b, beta[(t + 1) * E + s + 1]);
      if (s + 2 < E && ext[s + 2] != 0 && ext[s + 2] != ext[s])
        b = log_add(b, beta[(t + 1) * E + s + 2]);
      beta[t * E + s] = b + lpt(t, ext[s]);
    }

  // gamma_t(s) = exp(alpha + beta - lp_t(label) - log_p); both alpha and beta
  // include the frame-t emission, so divide it out once.
  res.grad.resize(T * C);
  std::vector<double> occ(C);
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(occ.begin(), occ.end(), 0.0);
    for (std::size_t s = 0; s < E; ++s) {
      double g = alpha[t * E + s] + beta[t * E + s] - lpt(t, ext[s]) - log_p;
      if (g != kLogZero && !std::isnan(g))
        occ[static_cast<std::size_t>(ext[s])] += std::exp(g);
    }
    for (std::size_t c = 0; c < C; ++c)
      res.grad[t * C + c] = static_cast<S>(std::exp(lp[t * C + c]) - occ[c]);
  }
  return res;
}

// Best-path decoding: per-frame argmax (ties toward the lowest index),
// collapse repeats, drop blanks.
template <class S>
std::vector<int> greedy_decode(const std::vector<S>& logits, std::size_t T, std::size_t C) {
  std::vector<int> out;
  int prev = -1;
  for (std::size_t t = 0; t < T; ++t) {
    const S* row = logits.data() + t * C;
    int best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (row[c] > row[best]) best = static_cast<int>(c);
    if (best != prev && best != 0) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace artic
