#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "artic/common.hpp"
#include "artic/corpus.hpp"

namespace artic {

enum class FeatureKind { Roi, Raw, Flow };

inline const char* feature_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::Roi: return "roi";
    case FeatureKind::Raw: return "raw";
    case FeatureKind::Flow: return "flow";
  }
  return "?";
}

inline FeatureKind parse_feature(std::string_view s) {
  if (s == "roi") return FeatureKind::Roi;
  if (s == "raw") return FeatureKind::Raw;
  if (s == "flow") return FeatureKind::Flow;
  throw ConfigError("unknown feature kind '" + std::string(s) + "', expected roi, raw or flow");
}

template <class S>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<S> w, g, m, v;  // value, gradient, Adam moments
  std::size_t size() const { return w.size(); }
};

template <class S>
class ParamStoreT {
 public:
  Param<S>& add(std::string name, std::vector<int> shape) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    index_[name] = items_.size();
    items_.push_back({std::move(name), std::move(shape), std::vector<S>(n, S(0)),
                      std::vector<S>(n, S(0)), std::vector<S>(n, S(0)), std::vector<S>(n, S(0))});
    return items_.back();
  }

  std::size_t count() const { return items_.size(); }
  Param<S>& operator[](std::size_t i) { return items_[i]; }
  const Param<S>& operator[](std::size_t i) const { return items_[i]; }

  Param<S>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second];
  }

  void zero_grad() {
    for (auto& p : items_) std::fill(p.g.begin(), p.g.end(), S(0));
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& p : items_)
      for (S g : p.g) s += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(s);
  }

  bool grads_finite() const {
    for (const auto& p : items_)
      for (S g : p.g)
        if (!std::isfinite(static_cast<double>(g))) return false;
    return true;
  }

  // Scales gradients so the global norm is at most max_norm.
  void clip_grad(double max_norm) {
    double n = grad_norm();
    if (n <= max_norm || n == 0.0) return;
    S scale = static_cast<S>(max_norm / n);
    for (auto& p : items_)
      for (S& g : p.g) g *= scale;
  }

  std::vector<S> snapshot_weights() const {
    std::vector<S> out;
    for (const auto& p : items_) out.insert(out.end(), p.w.begin(), p.w.end());
    return out;
  }

  void restore_weights(const std::vector<S>& flat) {
    std::size_t off = 0;
    for (auto& p : items_) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), p.size(), p.w.begin());
      off += p.size();
    }
    if (off != flat.size()) throw ShapeError("weight snapshot size mismatch");
  }

  std::int64_t adam_t = 0;
  int skipped_steps = 0;

 private:
  std::deque<Param<S>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParamStore = ParamStoreT<float>;

struct ModelConfig {
  std::vector<FeatureKind> inputs{FeatureKind::Roi};
  int roi_channels = 6;  // 5 under ablation
  int conv1d_c1 = 32, conv1d_c2 = 64, conv1d_kernel = 5;
  std::array<int, 3> conv2d_channels{8, 16, 32};
  int conv2d_kernel = 3, conv2d_stride = 2;
  int hidden = 64;
  int n_classes = 0;  // K+1 including blank
  int frame_h = 104, frame_w = 104;
  std::uint64_t seed = 1;

  void validate() const {
    if (inputs.empty() || inputs.size() > 2) throw ConfigError("model takes 1 or 2 input kinds");
    if (inputs.size() == 2 && inputs[0] == inputs[1])
      throw ConfigError("fused inputs must be distinct kinds");
    if (hidden < 8) throw ConfigError("hidden size must be >= 8");
    if (conv1d_kernel % 2 == 0 || conv2d_kernel % 2 == 0)
      throw ConfigError("kernel sizes must be odd");
    if (n_classes < 2) throw ConfigError("n_classes must include blank plus one phoneme");
  }

  bool uses(FeatureKind k) const {
    for (auto i : inputs)
      if (i == k) return true;
    return false;
  }
};

// One training/eval sample; only the feature streams the model uses need to
// be populated. All streams are frame-aligned (same T).
struct Sample {
  std::string id;
  std::size_t T = 0;
  int H = 0, W = 0;
  std::vector<int> targets;
  Alignment alignment;
  std::vector<float> roi;   // T x roi_channels, normalized
  int roi_channels = 0;
  std::vector<float> raw;   // T x 1 x H x W, normalized
  std::vector<float> flow;  // T x 2 x H x W, normalized
};

namespace nn {

template <class S>
void init_uniform(std::vector<S>& w, int fan_in, std::mt19937_64& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (S& x : w) x = static_cast<S>(dist(rng));
}

// Temporal convolution, stride 1, same padding. Input and output are T x C
// row-major.
template <class S>
class Conv1d {
 public:
  Conv1d(ParamStoreT<S>& store, const std::string& prefix, int cin, int cout, int k,
         std::mt19937_64& rng)
      : store_(&store), cin_(cin), cout_(cout), k_(k) {
    auto& w = store.add(prefix + ".w", {cout, cin, k});
    init_uniform(w.w, cin * k, rng);
    store.add(prefix + ".b", {cout});
    wi_ = store.count() - 2;
    bi_ = store.count() - 1;
  }

  std::vector<S> forward(const std::vector<S>& x, std::size_t T) {
    x_ = x;
    T_ = T;
    const auto& w = (*store_)[wi_].w;
    const auto& b = (*store_)[bi_].w;
    const int P = k_ / 2;
    std::vector<S> y(T * static_cast<std::size_t>(cout_));
    for (std::size_t t = 0; t < T; ++t)
      for (int o = 0; o < cout_; ++o) {
        double acc = b[static_cast<std::size_t>(o)];
        for (int k = 0; k < k_; ++k) {
          std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t) + k - P;
          if (s < 0 || s >= static_cast<std::ptrdiff_t>(T)) continue;
          const S* xr = x.data() + static_cast<std::size_t>(s) * static_cast<std::size_t>(cin_);
          const S* wr = w.data() + (static_cast<std::size_t>(o) * static_cast<std::size_t>(cin_)) * static_cast<std::size_t>(k_) + static_cast<std::size_t>(k);
          for (int c = 0; c < cin_; ++c)
            acc += static_cast<double>(wr[static_cast<std::size_t>(c) * static_cast<std::size_t>(k_)]) * xr[c];
        }
        y[t * static_cast<std::size_t>(cout_) + static_cast<std::size_t>(o)] = static_cast<S>(acc);
      }
    return y;
  }

  std::vector<S> backward(const std::vector<S>& dy) {
    const auto& w = (*store_)[wi_].w;
    auto& dw = (*store_)[wi_].g;
    auto& db = (*store_)[bi_].g;
    const int P = k_ / 2;
    std::vector<S> dx(x_.size(), S(0));
    for (std::size_t t = 0; t < T_; ++t)
      for (int o = 0; o < cout_; ++o) {
        S d = dy[t * static_cast<std::size_t>(cout_) + static_cast<std::size_t>(o)];
        db[static_cast<std::size_t>(o)] += d;
        for (int k = 0; k < k_; ++k) {
          std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t) + k - P;
          if (s < 0 || s >= static_cast<std::ptrdiff_t>(T_)) continue;
          const S* xr = x_.data() + static_cast<std::size_t>(s) * static_cast<std::size_t>(cin_);
          S* dxr = dx.data() + static_cast<std::size_t>(s) * static_cast<std::size_t>(cin_);
          for (int c = 0; c < cin_; ++c) {
            std::size_t widx =
                (static_cast<std::size_t>(o) * static_cast<std::size_t>(cin_) + static_cast<std::size_t>(c)) * static_cast<std::size_t>(k_) + static_cast<std::size_t>(k);
            dw[widx] += d * xr[c];
            dxr[c] += w[widx] * d;
          }
        }
      }
    return dx;
  }

 private:
  ParamStoreT<S>* store_;
  int cin_, cout_, k_;
  std::size_t wi_ = 0, bi_ = 0;
  std::vector<S> x_;
  std::size_t T_ = 0;
};

template <class S>
class Relu {
 public:
  std::vector<S> forward(std::vector<S> x) {
    mask_.assign(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > S(0))
        mask_[i] = 1;
      else
        x[i] = S(0);
    }
    return x;
  }
  std::vector<S> backward(std::vector<S> dy) const {
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (!mask_[i]) dy[i] = S(0);
    return dy;
  }

 private:
  std::vector<std::uint8_t> mask_;
};

// Per-frame 2D convolution over a T x Cin x H x W stream; zero padding k/2,
// configurable stride.
template <class S>
class Conv2d {
 public:
  Conv2d(ParamStoreT<S>& store, const std::string& prefix, int cin, int cout, int k, int stride,
         std::mt19937_64& rng)
      : store_(&store), cin_(cin), cout_(cout), k_(k), stride_(stride) {
    auto& w = store.add(prefix + ".w", {cout, cin, k, k});
    init_uniform(w.w, cin * k * k, rng);
    store.add(prefix + ".b", {cout});
    wi_ = store.count() - 2;
    bi_ = store.count() - 1;
  }

  static int out_dim(int in, int k, int stride) { return (in + 2 * (k / 2) - k) / stride + 1; }

  std::vector<S> forward(const std::vector<S>& x, std::size_t T, int H, int W) {
    x_ = x;
    T_ = T;
    H_ = H;
    W_ = W;
    oh_ = out_dim(H, k_, stride_);
    ow_ = out_dim(W, k_, stride_);
    const auto& w = (*store_)[wi_].w;
    const auto& b = (*store_)[bi_].w;
    const int P = k_ / 2;
    std::vector<S> y(T * static_cast<std::size_t>(cout_) * static_cast<std::size_t>(oh_) *
                     static_cast<std::size_t>(ow_));
    for (std::size_t t = 0; t < T; ++t) {
      const S* xt = x.data() + t * static_cast<std::size_t>(cin_) * static_cast<std::size_t>(H) *
                                   static_cast<std::size_t>(W);
      S* yt = y.data() + t * static_cast<std::size_t>(cout_) * static_cast<std::size_t>(oh_) *
                             static_cast<std::size_t>(ow_);
      for (int o = 0; o < cout_; ++o)
        for (int oy = 0; oy < oh_; ++oy)
          for (int ox = 0; ox < ow_; ++ox) {
            double acc = b[static_cast<std::size_t>(o)];
            for (int c = 0; c < cin_; ++c)
              for (int ky = 0; ky < k_; ++ky) {
                int iy = oy * stride_ + ky - P;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < k_; ++kx) {
                  int ix = ox * stride_ + kx - P;
                  if (ix < 0 || ix >= W) continue;
                  acc += static_cast<double>(
                             w[((static_cast<std::size_t>(o) * static_cast<std::size_t>(cin_) +
                                 static_cast<std::size_t>(c)) *
                                    static_cast<std::size_t>(k_) +
                                static_cast<std::size_t>(ky)) *
                                   static_cast<std::size_t>(k_) +
                               static_cast<std::size_t>(kx)]) *
                         xt[(static_cast<std::size_t>(c) * static_cast<std::size_t>(H) +
                             static_cast<std::size_t>(iy)) *
                                static_cast<std::size_t>(W) +
                            static_cast<std::size_t>(ix)];
                }
              }
            yt[(static_cast<std::size_t>(o) * static_cast<std::size_t>(oh_) +
                static_cast<std::size_t>(oy)) *
                   static_cast<std::size_t>(ow_) +
               static_cast<std::size_t>(ox)] = static_cast<S>(acc);
          }
    }
    return y;
  }

  std::vector<S> backward(const std::vector<S>& dy, bool need_dx = true) {
    const auto& w = (*store_)[wi_].w;
    auto& dw = (*store_)[wi_].g;
    auto& db = (*store_)[bi_].g;
    const int P = k_ / 2;
    std::vector<S> dx(need_dx ? x_.size() : 0, S(0));
    for (std::size_t t = 0; t < T_; ++t) {
      const S* xt = x_.data() + t * static_cast<std::size_t>(cin_) * static_cast<std::size_t>(H_) *
                                    static_cast<std::size_t>(W_);
      S* dxt = need_dx ? dx.data() + t * static_cast<std::size_t>(cin_) *
                                         static_cast<std::size_t>(H_) *
                                         static_cast<std::size_t>(W_)
                       : nullptr;
      const S* dyt = dy.data() + t * static_cast<std::size_t>(cout_) *
                                     static_cast<std::size_t>(oh_) * static_cast<std::size_t>(ow_);
      for (int o = 0; o < cout_; ++o)
        for (int oy = 0; oy < oh_; ++oy)
          for (int ox = 0; ox < ow_; ++ox) {
            S d = dyt[(static_cast<std::size_t>(o) * static_cast<std::size_t>(oh_) +
                       static_cast<std::size_t>(oy)) *
                          static_cast<std::size_t>(ow_) +
                      static_cast<std::size_t>(ox)];
            db[static_cast<std::size_t>(o)] += d;
            for (int c = 0; c < cin_; ++c)
              for (int ky = 0; ky < k_; ++ky) {
                int iy = oy * stride_ + ky - P;
                if (iy < 0 || iy >= H_) continue;
                for (int kx = 0; kx < k_; ++kx) {
                  int ix = ox * stride_ + kx - P;
                  if (ix < 0 || ix >= W_) continue;
                  std::size_t widx = ((static_cast<std::size_t>(o) * static_cast<std::size_t>(cin_) +
                                       static_cast<std::size_t>(c)) *
                                          static_cast<std::size_t>(k_) +
                                      static_cast<std::size_t>(ky)) *
                                         static_cast<std::size_t>(k_) +
                                     static_cast<std::size_t>(kx);
                  std::size_t xidx = (static_cast<std::size_t>(c) * static_cast<std::size_t>(H_) +
                                      static_cast<std::size_t>(iy)) *
                                         static_cast<std::size_t>(W_) +
                                     static_cast<std::size_t>(ix);
                  dw[widx] += d * xt[xidx];
                  if (need_dx) dxt[xidx] += w[widx] * d;
                }
              }
          }
    }
    return dx;
  }

  int out_h() const { return oh_; }
  int out_w() const { return ow_; }

 private:
  ParamStoreT<S>* store_;
  int cin_, cout_, k_, stride_;
  std::size_t wi_ = 0, bi_ = 0;
  std::vector<S> x_;
  std::size_t T_ = 0;
  int H_ = 0, W_ = 0, oh_ = 0, ow_ = 0;
};

// T x C x H x W -> T x C spatial mean.
template <class S>
class GlobalAvgPool {
 public:
  std::vector<S> forward(const std::vector<S>& x, std::size_t T, int C, int H, int W) {
    T_ = T;
    C_ = C;
    H_ = H;
    W_ = W;
    const std::size_t plane = static_cast<std::size_t>(H) * static_cast<std::size_t>(W);
    std::vector<S> y(T * static_cast<std::size_t>(C));
    for (std::size_t t = 0; t < T; ++t)
      for (int c = 0; c < C; ++c) {
        const S* p = x.data() + (t * static_cast<std::size_t>(C) + static_cast<std::size_t>(c)) * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        y[t * static_cast<std::size_t>(C) + static_cast<std::size_t>(c)] =
            static_cast<S>(acc / static_cast<double>(plane));
      }
    return y;
  }

  std::vector<S> backward(const std::vector<S>& dy) const {
    const std::size_t plane = static_cast<std::size_t>(H_) * static_cast<std::size_t>(W_);
    std::vector<S> dx(T_ * static_cast<std::size_t>(C_) * plane);
    for (std::size_t t = 0; t < T_; ++t)
      for (int c = 0; c < C_; ++c) {
        S d = dy[t * static_cast<std::size_t>(C_) + static_cast<std::size_t>(c)] /
              static_cast<S>(plane);
        S* p = dx.data() + (t * static_cast<std::size_t>(C_) + static_cast<std::size_t>(c)) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] = d;
      }
    return dx;
  }

 private:
  std::size_t T_ = 0;
  int C_ = 0, H_ = 0, W_ = 0;
};

// Single-layer gated recurrent (LSTM) cell unrolled over time. Gate order in
// the packed weight blocks is i, f, g, o. Forget-gate bias starts at +1.
template <class S>
class Lstm {
 public:
  Lstm(ParamStoreT<S>& store, const std::string& prefix, int in, int hidden, std::mt19937_64& rng)
      : store_(&store), in_(in), h_(hidden) {
    auto& wih = store.add(prefix + ".w_ih", {4 * hidden, in});
    init_uniform(wih.w, in, rng);
    auto& whh = store.add(prefix + ".w_hh", {4 * hidden, hidden});
    init_uniform(whh.w, hidden, rng);
    auto& b = store.add(prefix + ".b", {4 * hidden});
    for (int j = hidden; j < 2 * hidden; ++j) b.w[static_cast<std::size_t>(j)] = S(1);
    wih_ = store.count() - 3;
    whh_ = store.count() - 2;
    bi_ = store.count() - 1;
  }

  std::vector<S> forward(const std::vector<S>& x, std::size_t T) {
    x_ = x;
    T_ = T;
    const auto& wih = (*store_)[wih_].w;
    const auto& whh = (*store_)[whh_].w;
    const auto& b = (*store_)[bi_].w;
    const std::size_t H = static_cast<std::size_t>(h_), I = static_cast<std::size_t>(in_);
    gates_.assign(T * 4 * H, S(0));
    c_.assign(T * H, S(0));
    h_seq_.assign(T * H, S(0));
    std::vector<S> hprev(H, S(0)), cprev(H, S(0));
    for (std::size_t t = 0; t < T; ++t) {
      S* z = gates_.data() + t * 4 * H;
      const S* xt = x.data() + t * I;
      for (std::size_t j = 0; j < 4 * H; ++j) {
        double acc = b[j];
        const S* wr = wih.data() + j * I;
        for (std::size_t k = 0; k < I; ++k) acc += static_cast<double>(wr[k]) * xt[k];
        const S* hr = whh.data() + j * H;
        for (std::size_t k = 0; k < H; ++k) acc += static_cast<double>(hr[k]) * hprev[k];
        z[j] = static_cast<S>(acc);
      }
      for (std::size_t j = 0; j < H; ++j) {
        S i = sigmoid(z[j]);
        S f = sigmoid(z[H + j]);
        S g = std::tanh(z[2 * H + j]);
        S o = sigmoid(z[3 * H + j]);
        z[j] = i;
        z[H + j] = f;
        z[2 * H + j] = g;
        z[3 * H + j] = o;
        S c = f * cprev[j] + i * g;
        c_[t * H + j] = c;
        h_seq_[t * H + j] = o * std::tanh(c);
      }
      std::copy_n(h_seq_.data() + t * H, H, hprev.data());
      std::copy_n(c_.data() + t * H, H, cprev.data());
    }
    return h_seq_;
  }

  std::vector<S> backward(const std::vector<S>& dh_out) {
    const auto& wih = (*store_)[wih_].w;
    const auto& whh = (*store_)[whh_].w;
    auto& dwih = (*store_)[wih_].g;
    auto& dwhh = (*store_)[whh_].g;
    auto& db = (*store_)[bi_].g;
    const std::size_t H = static_cast<std::size_t>(h_), I = static_cast<std::size_t>(in_);
    std::vector<S> dx(T_ * I, S(0));
    std::vector<S> dh(H, S(0)), dc(H, S(0)), dz(4 * H);
    for (std::size_t t = T_; t-- > 0;) {
      const S* z = gates_.data() + t * 4 * H;
      const S* xt = x_.data() + t * I;
      for (std::size_t j = 0; j < H; ++j) {
        S dht = dh[j] + dh_out[t * H + j];
        S i = z[j], f = z[H + j], g = z[2 * H + j], o = z[3 * H + j];
        S tc = std::tanh(c_[t * H + j]);
        S dct = dc[j] + dht * o * (S(1) - tc * tc);
        S cprev = t > 0 ? c_[(t - 1) * H + j] : S(0);
        dz[j] = dct * g * i * (S(1) - i);
        dz[H + j] = dct * cprev * f * (S(1) - f);
        dz[2 * H + j] = dct * i * (S(1) - g * g);
        dz[3 * H + j] = dht * tc * o * (S(1) - o);
        dc[j] = dct * f;
      }
      std::fill(dh.begin(), dh.end(), S(0));
      const S* hprev = t > 0 ? h_seq_.data() + (t - 1) * H : nullptr;
      for (std::size_t j = 0; j < 4 * H; ++j) {
        S d = dz[j];
        db[j] += d;
        S* dwr = dwih.data() + j * I;
        S* dxr = dx.data() + t * I;
        const S* wr = wih.data() + j * I;
        for (std::size_t k = 0; k < I; ++k) {
          dwr[k] += d * xt[k];
          dxr[k] += wr[k] * d;
        }
        S* dhr = dwhh.data() + j * H;
        const S* hr = whh.data() + j * H;
        for (std::size_t k = 0; k < H; ++k) {
          if (hprev) dhr[k] += d * hprev[k];
          dh[k] += hr[k] * d;
        }
      }
    }
    return dx;
  }

 private:
  static S sigmoid(S x) { return S(1) / (S(1) + std::exp(-x)); }

  ParamStoreT<S>* store_;
  int in_, h_;
  std::size_t wih_ = 0, whh_ = 0, bi_ = 0;
  std::vector<S> x_, gates_, c_, h_seq_;
  std::size_t T_ = 0;
};

// Per-frame affine map.
template <class S>
class Linear {
 public:
  Linear(ParamStoreT<S>& store, const std::string& prefix, int in, int out, std::mt19937_64& rng)
      : store_(&store), in_(in), out_(out) {
    auto& w = store.add(prefix + ".w", {out, in});
    init_uniform(w.w, in, rng);
    store.add(prefix + ".b", {out});
    wi_ = store.count() - 2;
    bi_ = store.count() - 1;
  }

  std::vector<S> forward(const std::vector<S>& x, std::size_t T) {
    x_ = x;
    T_ = T;
    const auto& w = (*store_)[wi_].w;
    const auto& b = (*store_)[bi_].w;
    const std::size_t I = static_cast<std::size_t>(in_), O = static_cast<std::size_t>(out_);
    std::vector<S> y(T * O);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t o = 0; o < O; ++o) {
        double acc = b[o];
        const S* wr = w.data() + o * I;
        const S* xr = x.data() + t * I;
        for (std::size_t k = 0; k < I; ++k) acc += static_cast<double>(wr[k]) * xr[k];
        y[t * O + o] = static_cast<S>(acc);
      }
    return y;
  }

  std::vector<S> backward(const std::vector<S>& dy) {
    const auto& w = (*store_)[wi_].w;
    auto& dw = (*store_)[wi_].g;
    auto& db = (*store_)[bi_].g;
    const std::size_t I = static_cast<std::size_t>(in_), O = static_cast<std::size_t>(out_);
    std::vector<S> dx(T_ * I, S(0));
    for (std::size_t t = 0; t < T_; ++t)
      for (std::size_t o = 0; o < O; ++o) {
        S d = dy[t * O + o];
        db[o] += d;
        S* dwr = dw.data() + o * I;
        S* dxr = dx.data() + t * I;
        const S* wr = w.data() + o * I;
        const S* xr = x_.data() + t * I;
        for (std::size_t k = 0; k < I; ++k) {
          dwr[k] += d * xr[k];
          dxr[k] += wr[k] * d;
        }
      }
    return dx;
  }

 private:
  ParamStoreT<S>* store_;
  int in_, out_;
  std::size_t wi_ = 0, bi_ = 0;
  std::vector<S> x_;
  std::size_t T_ = 0;
};

}  // namespace nn

// ROI branch: two temporal convolutions with ReLU, T x C -> T x conv1d_c2.
template <class S>
class RoiBranch {
 public:
  RoiBranch(ParamStoreT<S>& store, const ModelConfig& cfg, std::mt19937_64& rng)
      : conv1_(store, "roi.conv1", cfg.roi_channels, cfg.conv1d_c1, cfg.conv1d_kernel, rng),
        conv2_(store, "roi.conv2", cfg.conv1d_c1, cfg.conv1d_c2, cfg.conv1d_kernel, rng),
        out_dim_(cfg.conv1d_c2) {}

  std::vector<S> forward(const std::vector<S>& x, std::size_t T) {
    return relu2_.forward(conv2_.forward(relu1_.forward(conv1_.forward(x, T)), T));
  }
  void backward(const std::vector<S>& dy) {
    conv1_.backward(relu1_.backward(conv2_.backward(relu2_.backward(dy))));
  }
  int out_dim() const { return out_dim_; }

 private:
  nn::Conv1d<S> conv1_, conv2_;
  nn::Relu<S> relu1_, relu2_;
  int out_dim_;
};

// Spatial branch for raw frames (1 channel) or flow (2 channels): three
// strided 2D convolutions with ReLU, then global average pooling.
template <class S>
class SpatialBranch {
 public:
  SpatialBranch(ParamStoreT<S>& store, const ModelConfig& cfg, int in_channels,
                const std::string& prefix, std::mt19937_64& rng)
      : conv1_(store, prefix + ".conv1", in_channels, cfg.conv2d_channels[0], cfg.conv2d_kernel,
               cfg.conv2d_stride, rng),
        conv2_(store, prefix + ".conv2", cfg.conv2d_channels[0], cfg.conv2d_channels[1],
               cfg.conv2d_kernel, cfg.conv2d_stride, rng),
        conv3_(store, prefix + ".conv3", cfg.conv2d_channels[1], cfg.conv2d_channels[2],
               cfg.conv2d_kernel, cfg.conv2d_stride, rng),
        channels_(cfg.conv2d_channels),
        out_dim_(cfg.conv2d_channels[2]) {}

  std::vector<S> forward(const std::vector<S>& x, std::size_t T, int H, int W) {
    auto a = relu1_.forward(conv1_.forward(x, T, H, W));
    auto b = relu2_.forward(conv2_.forward(a, T, conv1_.out_h(), conv1_.out_w()));
    auto c = relu3_.forward(conv3_.forward(b, T, conv2_.out_h(), conv2_.out_w()));
    return pool_.forward(c, T, channels_[2], conv3_.out_h(), conv3_.out_w());
  }

  void backward(const std::vector<S>& dy) {
    auto d3 = relu3_.backward(pool_.backward(dy));
    auto d2 = relu2_.backward(conv3_.backward(d3));
    auto d1 = relu1_.backward(conv2_.backward(d2));
    conv1_.backward(d1, /*need_dx=*/false);
  }

  int out_dim() const { return out_dim_; }

 private:
  nn::Conv2d<S> conv1_, conv2_, conv3_;
  nn::Relu<S> relu1_, relu2_, relu3_;
  nn::GlobalAvgPool<S> pool_;
  std::array<int, 3> channels_;
  int out_dim_;
};

// Full network: one or two feature branches, frame-wise concatenation,
// gated recurrent temporal encoder, linear classification head.
template <class S>
class NetworkT {
 public:
  explicit NetworkT(const ModelConfig& cfg)
      : cfg_(cfg), store_(std::make_unique<ParamStoreT<S>>()) {
    cfg_.validate();
    std::mt19937_64 rng(cfg.seed);
    int cat_dim = 0;
    for (FeatureKind k : cfg_.inputs) {
      switch (k) {
        case FeatureKind::Roi:
          roi_.emplace(*store_, cfg_, rng);
          cat_dim += roi_->out_dim();
          break;
        case FeatureKind::Raw:
          raw_.emplace(*store_, cfg_, 1, "raw", rng);
          cat_dim += raw_->out_dim();
          break;
        case FeatureKind::Flow:
          flow_.emplace(*store_, cfg_, 2, "flow", rng);
          cat_dim += flow_->out_dim();
          break;
      }
    }
    lstm_.emplace(*store_, "temporal", cat_dim, cfg_.hidden, rng);
    head_.emplace(*store_, "head", cfg_.hidden, cfg_.n_classes, rng);
    cat_dim_ = cat_dim;
  }

  NetworkT(const NetworkT&) = delete;
  NetworkT& operator=(const NetworkT&) = delete;
  NetworkT(NetworkT&&) = default;
  NetworkT& operator=(NetworkT&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStoreT<S>& params() { return *store_; }
  const ParamStoreT<S>& params() const { return *store_; }

  // Returns T x n_classes logits.
  std::vector<S> forward(const Sample& sample) {
    T_ = sample.T;
    branch_out_.clear();
    for (FeatureKind k : cfg_.inputs) {
      switch (k) {
        case FeatureKind::Roi: {
          if (sample.roi_channels != cfg_.roi_channels)
            throw ShapeError("sample has " + std::to_string(sample.roi_channels) +
                             " ROI channels, model expects " + std::to_string(cfg_.roi_channels));
          branch_out_.push_back(roi_->forward(to_scalar(sample.roi), sample.T));
          break;
        }
        case FeatureKind::Raw: {
          if (sample.raw.size() != sample.T * static_cast<std::size_t>(sample.H) * static_cast<std::size_t>(sample.W))
            throw ShapeError("raw frame payload mismatch");
          check_frame_dims(sample);
          branch_out_.push_back(raw_->forward(to_scalar(sample.raw), sample.T, sample.H, sample.W));
          break;
        }
        case FeatureKind::Flow: {
          if (sample.flow.size() != sample.T * 2 * static_cast<std::size_t>(sample.H) * static_cast<std::size_t>(sample.W))
            throw ShapeError("flow payload mismatch");
          check_frame_dims(sample);
          branch_out_.push_back(flow_->forward(to_scalar(sample.flow), sample.T, sample.H, sample.W));
          break;
        }
      }
    }
    hidden_in_ = concat_frames(branch_out_, T_);
    auto h = lstm_->forward(hidden_in_, T_);
    forward_done_ = true;
    return head_->forward(h, T_);
  }

  void backward(const std::vector<S>& dlogits) {
    if (!forward_done_) throw ConfigError("backward called before forward");
    auto dh = head_->backward(dlogits);
    auto dcat = lstm_->backward(dh);
    // split dcat back into per-branch blocks
    std::size_t off = 0, bi = 0;
    for (FeatureKind k : cfg_.inputs) {
      std::size_t dim = branch_out_[bi].size() / T_;
      std::vector<S> d(T_ * dim);
      for (std::size_t t = 0; t < T_; ++t)
        std::copy_n(dcat.data() + t * (dcat.size() / T_) + off, dim, d.data() + t * dim);
      switch (k) {
        case FeatureKind::Roi: roi_->backward(d); break;
        case FeatureKind::Raw: raw_->backward(d); break;
        case FeatureKind::Flow: flow_->backward(d); break;
      }
      off += dim;
      ++bi;
    }
    forward_done_ = false;
  }

 private:
  void check_frame_dims(const Sample& sample) const {
    if (sample.H != cfg_.frame_h || sample.W != cfg_.frame_w)
      throw ShapeError("frame dims " + std::to_string(sample.H) + "x" + std::to_string(sample.W) +
                       " do not match model config");
  }

  static std::vector<S> to_scalar(const std::vector<float>& x) {
    if constexpr (std::is_same_v<S, float>) return x;
    return std::vector<S>(x.begin(), x.end());
  }

  static std::vector<S> concat_frames(const std::vector<std::vector<S>>& blocks, std::size_t T) {
    std::size_t total = 0;
    for (const auto& b : blocks) total += b.size() / T;
    std::vector<S> out(T * total);
    for (std::size_t t = 0; t < T; ++t) {
      std::size_t off = 0;
      for (const auto& b : blocks) {
        std::size_t dim = b.size() / T;
        std::copy_n(b.data() + t * dim, dim, out.data() + t * total + off);
        off += dim;
      }
    }
    return out;
  }

  ModelConfig cfg_;
  // heap-allocated so layer back-pointers stay valid when the network moves
  std::unique_ptr<ParamStoreT<S>> store_;
  std::optional<RoiBranch<S>> roi_;
  std::optional<SpatialBranch<S>> raw_, flow_;
  std::optional<nn::Lstm<S>> lstm_;
  std::optional<nn::Linear<S>> head_;
  std::vector<std::vector<S>> branch_out_;
  std::vector<S> hidden_in_;
  std::size_t T_ = 0;
  int cat_dim_ = 0;
  bool forward_done_ = false;
};

using Network = NetworkT<float>;

}  // namespace artic
