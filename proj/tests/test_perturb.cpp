#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "artic/perturb.hpp"

using namespace artic;

namespace {

// stream with frame t = {t, t+0.5} so frames are distinguishable
std::vector<float> ramp_stream(std::size_t T) {
  std::vector<float> s(T * 2);
  for (std::size_t t = 0; t < T; ++t) {
    s[t * 2] = static_cast<float>(t);
    s[t * 2 + 1] = static_cast<float>(t) + 0.5f;
  }
  return s;
}

std::multiset<float> frame_multiset(const std::vector<float>& s) {
  return {s.begin(), s.end()};
}

Alignment make_alignment(std::vector<std::pair<int, std::pair<std::size_t, std::size_t>>> segs) {
  Alignment a;
  for (auto& [p, be] : segs) a.segments.push_back({p, be.first, be.second});
  return a;
}

}  // namespace

TEST_CASE("cross-phoneme shuffle") {
  SECTION("single segment is the identity") {
    auto s = ramp_stream(4);
    auto orig = s;
    auto a = make_alignment({{1, {0, 4}}});
    auto na = cross_phoneme_shuffle({&s, 4, 2}, a, 123);
    CHECK(s == orig);
    CHECK(na.label_sequence() == std::vector<int>{1});
  }
  SECTION("two-segment swap permutation hand trace") {
    auto s = ramp_stream(5);
    auto a = make_alignment({{1, {0, 3}}, {2, {3, 5}}});
    // find a seed whose 2-element shuffle swaps
    std::uint64_t seed = 0;
    for (; seed < 100; ++seed) {
      std::vector<int> v{0, 1};
      std::mt19937_64 rng(seed);
      std::shuffle(v.begin(), v.end(), rng);
      if (v[0] == 1) break;
    }
    auto na = cross_phoneme_shuffle({&s, 5, 2}, a, seed);
    // frames reordered to 3,4,0,1,2
    CHECK(s[0] == 3.0f);
    CHECK(s[2] == 4.0f);
    CHECK(s[4] == 0.0f);
    CHECK(na.label_sequence() == std::vector<int>{2, 1});
    CHECK(na.segments[0].length() == 2);
    CHECK(na.segments[1].length() == 3);
  }
  SECTION("frame multiset preserved for any seed") {
    for (std::uint64_t seed : {1u, 7u, 99u}) {
      auto s = ramp_stream(11);
      auto orig = s;
      auto a = make_alignment({{1, {0, 3}}, {2, {3, 4}}, {1, {4, 9}}, {3, {9, 11}}});
      cross_phoneme_shuffle({&s, 11, 2}, a, seed);
      CHECK(frame_multiset(s) == frame_multiset(orig));
    }
  }
}

TEST_CASE("per-phoneme shuffle") {
  SECTION("length-1 segments give identity") {
    auto s = ramp_stream(3);
    auto orig = s;
    auto a = make_alignment({{1, {0, 1}}, {2, {1, 2}}, {3, {2, 3}}});
    per_phoneme_shuffle({&s, 3, 2}, a, 55);
    CHECK(s == orig);
  }
  SECTION("per-segment multisets preserved") {
    auto s = ramp_stream(10);
    auto orig = s;
    auto a = make_alignment({{1, {0, 4}}, {2, {4, 10}}});
    per_phoneme_shuffle({&s, 10, 2}, a, 9);
    for (const auto& seg : a.segments) {
      std::multiset<float> before(orig.begin() + static_cast<std::ptrdiff_t>(seg.begin * 2),
                                  orig.begin() + static_cast<std::ptrdiff_t>(seg.end * 2));
      std::multiset<float> after(s.begin() + static_cast<std::ptrdiff_t>(seg.begin * 2),
                                 s.begin() + static_cast<std::ptrdiff_t>(seg.end * 2));
      CHECK(before == after);
    }
  }
  SECTION("seeded permutation is reproducible") {
    auto s1 = ramp_stream(4);
    auto s2 = ramp_stream(4);
    auto a = make_alignment({{1, {0, 4}}});
    per_phoneme_shuffle({&s1, 4, 2}, a, 77);
    per_phoneme_shuffle({&s2, 4, 2}, a, 77);
    CHECK(s1 == s2);
    // and matches the PRNG trace: std::shuffle over [0,4) with mt19937_64(77)
    std::vector<std::size_t> order{0, 1, 2, 3};
    std::mt19937_64 rng(77);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < 4; ++i) CHECK(s1[i * 2] == static_cast<float>(order[i]));
  }
}

TEST_CASE("time reverse") {
  auto a = make_alignment({{1, {0, 3}}, {2, {3, 7}}});
  SECTION("segment frames reversed in place") {
    auto s = ramp_stream(7);
    time_reverse({&s, 7, 2}, a);
    CHECK(s[0] == 2.0f);
    CHECK(s[2] == 1.0f);
    CHECK(s[4] == 0.0f);
    CHECK(s[6] == 6.0f);
  }
  SECTION("involution") {
    auto s = ramp_stream(7);
    auto orig = s;
    time_reverse({&s, 7, 2}, a);
    time_reverse({&s, 7, 2}, a);
    CHECK(s == orig);
  }
  SECTION("palindromic segment unchanged") {
    std::vector<float> s = {1, 1, 2, 2, 1, 1};
    auto pal = make_alignment({{1, {0, 3}}});
    auto orig = s;
    time_reverse({&s, 3, 2}, pal);
    CHECK(s == orig);
  }
}

TEST_CASE("upsample and downsample") {
  SECTION("T=500 downsamples to 250") {
    auto s = ramp_stream(500);
    auto a = make_alignment({{1, {0, 200}}, {2, {200, 500}}});
    auto na = downsample2({&s, 500, 2}, a);
    CHECK(s.size() == 250 * 2);
    CHECK(na.span() == 250);
    CHECK(na.segments[0].end == 100);
  }
  SECTION("upsample doubles frames and boundaries") {
    auto s = ramp_stream(3);
    auto a = make_alignment({{1, {0, 2}}, {2, {2, 3}}});
    auto na = upsample2({&s, 3, 2}, a);
    CHECK(s.size() == 6 * 2);
    CHECK(s[0] == 0.0f);
    CHECK(s[2] == 0.0f);
    CHECK(s[4] == 1.0f);
    CHECK(na.segments[0].end == 4);
    CHECK(na.span() == 6);
  }
  SECTION("downsample after upsample recovers the frames") {
    auto s = ramp_stream(9);
    auto orig = s;
    auto a = make_alignment({{1, {0, 4}}, {2, {4, 9}}});
    auto ua = upsample2({&s, 9, 2}, a);
    downsample2({&s, 18, 2}, ua);
    CHECK(s == orig);
  }
  SECTION("vanishing segment keeps one frame") {
    auto s = ramp_stream(6);
    auto a = make_alignment({{1, {0, 3}}, {2, {3, 4}}, {3, {4, 6}}});
    auto na = downsample2({&s, 6, 2}, a);
    na.validate(3);
    for (const auto& seg : na.segments) CHECK(seg.length() >= 1);
    CHECK(na.segments.size() == 3);
  }
  SECTION("single-frame stream unchanged with warning") {
    auto s = ramp_stream(1);
    auto a = make_alignment({{1, {0, 1}}});
    bool warned = false;
    auto na = downsample2({&s, 1, 2}, a, &warned);
    CHECK(warned);
    CHECK(s.size() == 2);
    CHECK(na.span() == 1);
  }
}

TEST_CASE("roi channel ablation") {
  RoiTrace trace;
  trace.T = 2;
  trace.channels = 6;
  trace.values = {0, 1, 2, 3, 4, 5, 10, 11, 12, 13, 14, 15};
  SECTION("removing LX keeps the first five in order") {
    auto out = ablate_roi_channel(trace, 5);
    CHECK(out.channels == 5);
    CHECK(out.values == std::vector<float>{0, 1, 2, 3, 4, 10, 11, 12, 13, 14});
  }
  SECTION("removing then reinserting reconstructs") {
    auto out = ablate_roi_channel(trace, 2);
    std::vector<float> rebuilt;
    for (std::size_t t = 0; t < 2; ++t) {
      for (int c = 0; c < 5; ++c) {
        if (c == 2) rebuilt.push_back(trace.at(t, 2));
        rebuilt.push_back(out.at(t, c));
      }
    }
    CHECK(rebuilt == trace.values);
  }
  SECTION("out-of-range channel rejected") {
    CHECK_THROWS_AS(ablate_roi_channel(trace, 6), ConfigError);
  }
}

TEST_CASE("random utterance perturbation algebra") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<std::size_t> nseg(1, 6), seglen(1, 5);
    Alignment a;
    std::size_t cursor = 0;
    std::size_t n = nseg(rng);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t len = seglen(rng);
      a.segments.push_back({1 + static_cast<int>(i % 3), cursor, cursor + len});
      cursor += len;
    }
    const std::size_t T = cursor;
    std::vector<float> stream(T * 3);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (auto& v : stream) v = dist(rng);
    const auto orig = stream;

    // involution
    time_reverse({&stream, T, 3}, a);
    time_reverse({&stream, T, 3}, a);
    REQUIRE(stream == orig);

    // upsample then downsample identity
    auto ua = upsample2({&stream, T, 3}, a);
    downsample2({&stream, T * 2, 3}, ua);
    REQUIRE(stream == orig);

    // frame multiset preservation for both shuffles
    cross_phoneme_shuffle({&stream, T, 3}, a, rng());
    REQUIRE(frame_multiset(stream) == frame_multiset(orig));
    stream = orig;
    per_phoneme_shuffle({&stream, T, 3}, a, rng());
    REQUIRE(frame_multiset(stream) == frame_multiset(orig));
    stream = orig;
  }
}

TEST_CASE("shuffles commute with roi extraction") {
  // frame-wise permutations commute with frame-wise feature extraction
  auto inv = PhonemeInventory::with_phonemes({"A", "B"});
  GestureScore score;
  score.targets.assign(3, {0.5f, 0.5f, 0.5f, 0.5f, 0.5f, 0.5f});
  score.targets[1] = {0.9f, 0.1f, 0.5f, 0.3f, 0.7f, 0.2f};
  score.targets[2] = {0.1f, 0.9f, 0.2f, 0.8f, 0.4f, 0.6f};
  score.duration_ms.assign(3, 80.0f);
  GenerateOptions opt;
  opt.noise_sigma = 0.0f;
  auto u = artic::generate_utterance(inv, score, "commute", 5, opt);

  auto spec = default_roi_spec();
  auto trace = extract_roi_trace(u.frames, spec);

  auto frames_copy = u.frames.data;
  const std::size_t px = u.frames.H * u.frames.W;
  per_phoneme_shuffle({&frames_copy, u.frames.T, px}, u.alignment, 31);
  FrameSequence shuffled = u.frames;
  shuffled.data = frames_copy;
  auto trace_after = extract_roi_trace(shuffled, spec);

  auto trace_vals = trace.values;
  per_phoneme_shuffle({&trace_vals, u.frames.T, 6}, u.alignment, 31);
  CHECK(trace_after.values == trace_vals);
}
