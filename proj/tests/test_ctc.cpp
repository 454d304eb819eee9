#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "artic/ctc.hpp"

using namespace artic;

namespace {

// Brute-force CTC oracle: enumerate all (K+1)^T frame paths, collapse each
// (remove repeats then blanks), and sum the probabilities of paths whose
// collapse equals the target.
double ctc_loss_bruteforce(const std::vector<float>& logits, std::size_t T, std::size_t C,
                           const std::vector<int>& targets) {
  auto lp = log_softmax(logits, T, C);
  std::vector<int> path(T, 0);
  double total = kLogZero;
  while (true) {
    std::vector<int> collapsed;
    int prev = -1;
    for (int p : path) {
      if (p != prev && p != 0) collapsed.push_back(p);
      prev = p;
    }
    if (collapsed == targets) {
      double lpp = 0.0;
      for (std::size_t t = 0; t < T; ++t) lpp += lp[t * C + static_cast<std::size_t>(path[t])];
      total = log_add(total, lpp);
    }
    // increment the mixed-radix counter
    std::size_t i = 0;
    for (; i < T; ++i) {
      if (++path[i] < static_cast<int>(C)) break;
      path[i] = 0;
    }
    if (i == T) break;
  }
  return -total;
}

std::vector<float> random_logits(std::size_t T, std::size_t C, std::mt19937& rng) {
  std::normal_distribution<float> dist(0.0f, 2.0f);
  std::vector<float> l(T * C);
  for (auto& v : l) v = dist(rng);
  return l;
}

}  // namespace

TEST_CASE("ctc single-frame single-label") {
  // T=1, K=1: loss = -ln p(A)
  std::vector<float> logits = {std::log(0.4f), std::log(0.6f)};
  auto r = ctc_loss(logits, 1, 2, {1});
  CHECK(r.loss == Catch::Approx(-std::log(0.6)).margin(1e-6));
}

TEST_CASE("ctc two-frame path enumeration") {
  std::mt19937 rng(3);
  auto logits = random_logits(2, 2, rng);
  auto r = ctc_loss(logits, 2, 2, {1});
  // paths AA, A_, _A
  auto lp = log_softmax(logits, 2, 2);
  double pa0 = std::exp(lp[1]), pb0 = std::exp(lp[0]);
  double pa1 = std::exp(lp[3]), pb1 = std::exp(lp[2]);
  double expect = -std::log(pa0 * pa1 + pa0 * pb1 + pb0 * pa1);
  CHECK(r.loss == Catch::Approx(expect).margin(1e-6));
}

TEST_CASE("ctc empty target") {
  std::mt19937 rng(5);
  auto logits = random_logits(2, 3, rng);
  auto r = ctc_loss(logits, 2, 3, {});
  auto lp = log_softmax(logits, 2, 3);
  CHECK(r.loss == Catch::Approx(-(lp[0] + lp[3])).margin(1e-6));
}

TEST_CASE("ctc matches brute-force enumeration") {
  std::mt19937 rng(17);
  std::uniform_int_distribution<std::size_t> tdist(1, 6), ldist(0, 3);
  std::uniform_int_distribution<int> kdist(1, 4);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t T = tdist(rng);
    int K = kdist(rng);
    std::size_t C = static_cast<std::size_t>(K) + 1;
    std::size_t L = std::min<std::size_t>(ldist(rng), T);
    std::vector<int> targets;
    std::uniform_int_distribution<int> label(1, K);
    for (std::size_t i = 0; i < L; ++i) targets.push_back(label(rng));

    auto logits = random_logits(T, C, rng);
    auto r = ctc_loss(logits, T, C, targets);
    double oracle = ctc_loss_bruteforce(logits, T, C, targets);
    if (oracle == std::numeric_limits<double>::infinity()) {
      CHECK_FALSE(r.feasible);
    } else {
      REQUIRE(r.feasible);
      CHECK(r.loss == Catch::Approx(oracle).margin(1e-6));
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("ctc gradient matches finite differences") {
  std::mt19937 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t T = 5, C = 4;
    std::vector<int> targets = {1, 3};
    auto logits_f = random_logits(T, C, rng);
    std::vector<double> logits(logits_f.begin(), logits_f.end());
    auto r = ctc_loss(logits, T, C, targets);
    REQUIRE(r.feasible);
    const double eps = 1e-6;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      auto lp = logits, lm = logits;
      lp[i] += eps;
      lm[i] -= eps;
      double fd = (ctc_loss(lp, T, C, targets).loss - ctc_loss(lm, T, C, targets).loss) /
                  (2.0 * eps);
      double an = r.grad[i];
      double denom = std::max(1e-4, std::abs(fd));
      CHECK(std::abs(an - fd) / denom < 1e-3);
    }
  }
}

TEST_CASE("ctc invariances") {
  std::mt19937 rng(31);
  auto logits = random_logits(6, 4, rng);
  std::vector<int> targets = {2, 1};
  auto base = ctc_loss(logits, 6, 4, targets);

  SECTION("per-frame constant shift leaves the loss unchanged") {
    auto shifted = logits;
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t c = 0; c < 4; ++c) shifted[t * 4 + c] += static_cast<float>(t) * 0.7f;
    auto r = ctc_loss(shifted, 6, 4, targets);
    CHECK(r.loss == Catch::Approx(base.loss).margin(1e-5));
  }
  SECTION("posterior occupancies sum to one per frame") {
    // grad = softmax - gamma, so gamma = softmax - grad must sum to 1
    auto post = frame_posteriors(logits, 6, 4);
    for (std::size_t t = 0; t < 6; ++t) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 4; ++c) sum += post[t * 4 + c] - base.grad[t * 4 + c];
      CHECK(sum == Catch::Approx(1.0).margin(1e-5));
    }
  }
  SECTION("infeasible target reports cleanly") {
    auto r = ctc_loss(logits, 6, 4, {1, 1, 1, 1, 2, 2, 2});  // needs T >= 10
    CHECK_FALSE(r.feasible);
  }
}

TEST_CASE("greedy decoding") {
  auto one_hot = [](std::vector<int> path, std::size_t C) {
    std::vector<float> l(path.size() * C, 0.0f);
    for (std::size_t t = 0; t < path.size(); ++t)
      l[t * C + static_cast<std::size_t>(path[t])] = 10.0f;
    return l;
  };
  SECTION("collapse rule") {
    auto l = one_hot({0, 1, 1, 0, 2}, 3);
    CHECK(greedy_decode(l, 5, 3) == std::vector<int>{1, 2});
  }
  SECTION("all blank is empty") {
    auto l = one_hot({0, 0, 0}, 3);
    CHECK(greedy_decode(l, 3, 3).empty());
  }
  SECTION("blank separates repeats") {
    auto l = one_hot({1, 0, 1}, 3);
    CHECK(greedy_decode(l, 3, 3) == std::vector<int>{1, 1});
  }
  SECTION("ties break toward the lowest index") {
    std::vector<float> l = {0.5f, 0.5f, 0.5f};
    CHECK(greedy_decode(l, 1, 3).empty());  // blank wins the tie
  }
  SECTION("one-hot valid path reproduces its collapse") {
    std::mt19937 rng(7);
    std::uniform_int_distribution<int> label(0, 3);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<int> path(8);
      for (auto& p : path) p = label(rng);
      std::vector<int> collapsed;
      int prev = -1;
      for (int p : path) {
        if (p != prev && p != 0) collapsed.push_back(p);
        prev = p;
      }
      CHECK(greedy_decode(one_hot(path, 4), 8, 4) == collapsed);
    }
  }
}

TEST_CASE("frame posteriors") {
  SECTION("uniform logits give uniform rows") {
    std::vector<float> l(3 * 4, 0.7f);
    auto p = frame_posteriors(l, 3, 4);
    for (float v : p) CHECK(v == Catch::Approx(0.25).margin(1e-6));
  }
  SECTION("rows sum to one and match the naive oracle") {
    std::mt19937 rng(9);
    std::normal_distribution<float> dist(0.0f, 3.0f);
    std::vector<float> l(5 * 6);
    for (auto& v : l) v = dist(rng);
    auto p = frame_posteriors(l, 5, 6);
    for (std::size_t t = 0; t < 5; ++t) {
      double row = 0.0, z = 0.0;
      for (std::size_t c = 0; c < 6; ++c) z += std::exp(l[t * 6 + c]);
      for (std::size_t c = 0; c < 6; ++c) {
        CHECK(p[t * 6 + c] == Catch::Approx(std::exp(l[t * 6 + c]) / z).margin(1e-7));
        row += p[t * 6 + c];
      }
      CHECK(row == Catch::Approx(1.0).margin(1e-6));
    }
  }
}
