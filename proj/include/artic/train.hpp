#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "artic/checkpoint.hpp"
#include "artic/corpus.hpp"
#include "artic/ctc.hpp"
#include "artic/features.hpp"
#include "artic/metrics.hpp"
#include "artic/model.hpp"
#include "artic/perturb.hpp"

namespace artic {

struct TrainConfig {
  int epochs = 300;
  double lr0 = 1e-3;
  double weight_decay = 1e-4;
  double lr_decay = 0.9;
  int decay_every = 20;
  int batch_size = 1;
  double grad_clip = 5.0;
  std::uint64_t seed = 1;
  int patience = 0;  // early stop on validation PER; 0 disables (paper default)

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(lr0 > 0)) throw ConfigError("lr0 must be positive");
    if (!(lr_decay > 0) || lr_decay > 1) throw ConfigError("lr decay factor must be in (0,1]");
  }

  // Desk-scale profile: same schedule shape at a fifth of the epochs.
  static TrainConfig desk() {
    TrainConfig c;
    c.epochs = 60;
    c.decay_every = 4;
    return c;
  }

  static TrainConfig paper() { return TrainConfig{}; }
};

inline double lr_schedule(const TrainConfig& cfg, int epoch) {
  return cfg.lr0 * std::pow(cfg.lr_decay, epoch / cfg.decay_every);
}

// Decoupled weight decay followed by a bias-corrected Adam update. Steps with
// any non-finite gradient are skipped and counted.
template <class S>
void adam_step(ParamStoreT<S>& store, double lr, double weight_decay, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8) {
  if (!store.grads_finite()) {
    ++store.skipped_steps;
    return;
  }
  ++store.adam_t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(store.adam_t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(store.adam_t));
  for (std::size_t i = 0; i < store.count(); ++i) {
    auto& p = store[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      double w = p.w[j] - lr * weight_decay * p.w[j];
      double g = p.g[j];
      double m = beta1 * p.m[j] + (1.0 - beta1) * g;
      double v = beta2 * p.v[j] + (1.0 - beta2) * g * g;
      p.m[j] = static_cast<S>(m);
      p.v[j] = static_cast<S>(v);
      p.w[j] = static_cast<S>(w - lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
    }
  }
}

struct RunRecord {
  std::vector<double> train_loss;  // per completed epoch, mean over feasible samples
  std::vector<double> valid_per;
  int best_epoch = -1;
  double best_valid_per = 0.0;
  std::size_t infeasible_skipped = 0;
  int nonfinite_skipped = 0;
  double wall_seconds = 0.0;
};

inline double mean_per(Network& net, const std::vector<Sample>& samples) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  const auto C = static_cast<std::size_t>(net.config().n_classes);
  for (const auto& s : samples) {
    auto logits = net.forward(s);
    auto hyp = greedy_decode(logits, s.T, C);
    total += per(hyp, s.targets).per;
  }
  return total / static_cast<double>(samples.size());
}

inline EvalResult evaluate(Network& net, const std::vector<Sample>& samples) {
  const auto C = static_cast<std::size_t>(net.config().n_classes);
  EvalResult r;
  r.matrix.init(C - 1);
  TopkTable t1, t3;
  double per_sum = 0.0;
  for (const auto& s : samples) {
    auto logits = net.forward(s);
    per_sum += per(greedy_decode(logits, s.T, C), s.targets).per;
    auto post = frame_posteriors(logits, s.T, C);
    for (auto& [p, a] : topk_phoneme_accuracy(post, s.T, C, s.alignment, 1).per_phoneme) {
      t1.per_phoneme[p].correct += a.correct;
      t1.per_phoneme[p].total += a.total;
    }
    for (auto& [p, a] : topk_phoneme_accuracy(post, s.T, C, s.alignment, 3).per_phoneme) {
      t3.per_phoneme[p].correct += a.correct;
      t3.per_phoneme[p].total += a.total;
    }
    auto m = confusion(post, s.T, C, s.alignment);
    for (std::size_t i = 0; i < m.counts.size(); ++i) r.matrix.counts[i] += m.counts[i];
    for (std::size_t i = 0; i < m.populated.size(); ++i)
      if (m.populated[i]) r.matrix.populated[i] = true;
  }
  r.n_utterances = samples.size();
  r.per = samples.empty() ? 0.0 : per_sum / static_cast<double>(samples.size());
  r.top1 = t1.macro();
  r.top3 = t3.macro();
  return r;
}

// Most frequent training target sequence, scored against every test
// reference. The floor any trained model has to beat.
inline double majority_baseline_per(const std::vector<Sample>& train,
                                    const std::vector<Sample>& test) {
  std::map<std::vector<int>, std::size_t> freq;
  for (const auto& s : train) ++freq[s.targets];
  std::vector<int> majority;
  std::size_t best = 0;
  for (const auto& [seq, n] : freq)
    if (n > best) {
      best = n;
      majority = seq;
    }
  double total = 0.0;
  for (const auto& s : test) total += per(majority, s.targets).per;
  return test.empty() ? 0.0 : total / static_cast<double>(test.size());
}

// Batch-size-1 CTC training with gradient clipping, step LR schedule and
// best-validation checkpointing. Deterministic given the config seed.
inline RunRecord train_model(Network& net, const std::vector<Sample>& train,
                             const std::vector<Sample>& valid, const TrainConfig& cfg,
                             bool verbose = false) {
  cfg.validate();
  auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  auto& store = net.params();
  const auto C = static_cast<std::size_t>(net.config().n_classes);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(cfg.seed);

  std::vector<float> best_weights = store.snapshot_weights();
  double best_per = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(cfg, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t n_ok = 0;
    for (std::size_t idx : order) {
      const Sample& s = train[idx];
      auto logits = net.forward(s);
      auto ctc = ctc_loss(logits, s.T, C, s.targets);
      if (!ctc.feasible) {
        ++rec.infeasible_skipped;
        continue;
      }
      loss_sum += ctc.loss;
      ++n_ok;
      store.zero_grad();
      net.backward(ctc.grad);
      store.clip_grad(cfg.grad_clip);
      adam_step(store, lr, cfg.weight_decay);
    }
    if (n_ok == 0 && epoch == 0)
      throw ConfigError("every training sample is CTC-infeasible; check window length");
    rec.train_loss.push_back(n_ok ? loss_sum / static_cast<double>(n_ok) : 0.0);

    double vper = valid.empty() ? rec.train_loss.back() : mean_per(net, valid);
    rec.valid_per.push_back(vper);
    if (vper < best_per) {
      best_per = vper;
      best_weights = store.snapshot_weights();
      rec.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (verbose)
      std::fprintf(stderr, "epoch %3d  lr %.2e  loss %8.4f  valid PER %.4f\n", epoch, lr,
                   rec.train_loss.back(), vper);
    if (cfg.patience > 0 && since_best >= cfg.patience) break;
  }
  store.restore_weights(best_weights);
  rec.best_valid_per = best_per;
  rec.nonfinite_skipped = store.skipped_steps;
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

}  // namespace artic
