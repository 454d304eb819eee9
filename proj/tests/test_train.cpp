#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "artic/checkpoint.hpp"
#include "artic/experiment.hpp"
#include "artic/train.hpp"

using namespace artic;

TEST_CASE("lr schedule decays stepwise") {
  TrainConfig cfg;  // lr0 1e-3, decay 0.9 every 20
  CHECK(lr_schedule(cfg, 0) == Catch::Approx(1e-3));
  CHECK(lr_schedule(cfg, 19) == Catch::Approx(1e-3));
  CHECK(lr_schedule(cfg, 20) == Catch::Approx(0.9e-3));
  CHECK(lr_schedule(cfg, 39) == Catch::Approx(0.9e-3));
  CHECK(lr_schedule(cfg, 40) == Catch::Approx(0.81e-3));
  CHECK(lr_schedule(cfg, 299) == Catch::Approx(1e-3 * std::pow(0.9, 14)));
  auto desk = TrainConfig::desk();
  CHECK(desk.epochs < cfg.epochs);
  CHECK(lr_schedule(desk, 0) == Catch::Approx(desk.lr0));
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lr0 = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("adam step matches the update rule by hand") {
  ParamStoreT<double> store;
  auto& p = store.add("p", {2});
  p.w = {1.0, -0.5};
  p.g = {0.3, -0.2};
  const double lr = 0.01, wd = 0.1;
  adam_step(store, lr, wd);
  // t=1: m = 0.1 g, v = 0.001 g^2; bias correction divides them right back
  for (int i = 0; i < 2; ++i) {
    double w0 = i == 0 ? 1.0 : -0.5;
    double g = i == 0 ? 0.3 : -0.2;
    double m_hat = 0.1 * g / 0.1;
    double v_hat = 0.001 * g * g / 0.001;
    double want = w0 - lr * wd * w0 - lr * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(p.w[static_cast<std::size_t>(i)] == Catch::Approx(want).epsilon(1e-12));
  }
  CHECK(store.adam_t == 1);
  SECTION("second step uses accumulated moments") {
    auto w_after_1 = p.w;
    double m0 = 0.1 * 0.3, v0 = 0.001 * 0.3 * 0.3;
    p.g = {0.1, 0.0};
    adam_step(store, lr, 0.0);
    double m = 0.9 * m0 + 0.1 * 0.1;
    double v = 0.999 * v0 + 0.001 * 0.01;
    double m_hat = m / (1.0 - 0.81);
    double v_hat = v / (1.0 - 0.999 * 0.999);
    double want = w_after_1[0] - lr * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(p.w[0] == Catch::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("adam skips non-finite gradients and counts them") {
  ParamStoreT<float> store;
  auto& p = store.add("p", {2});
  p.w = {1.0f, 2.0f};
  p.g = {std::numeric_limits<float>::quiet_NaN(), 0.5f};
  adam_step(store, 0.1, 0.0);
  CHECK(p.w[0] == 1.0f);
  CHECK(p.w[1] == 2.0f);
  CHECK(store.skipped_steps == 1);
  CHECK(store.adam_t == 0);
}

TEST_CASE("gradient clipping rescales to the target norm") {
  ParamStoreT<float> store;
  auto& p = store.add("p", {2});
  p.g = {3.0f, 4.0f};  // norm 5
  store.clip_grad(5.0);
  CHECK(p.g[0] == 3.0f);
  store.clip_grad(1.0);
  CHECK(store.grad_norm() == Catch::Approx(1.0).epsilon(1e-6));
  CHECK(p.g[0] == Catch::Approx(0.6f));
}

namespace {

// Tiny two-class task: the first ROI channel is +1 for class 1 windows and
// -1 for class 2 windows, everything else is noise.
std::vector<Sample> toy_samples(int n, std::uint64_t seed) {
  std::mt19937 rng(static_cast<unsigned>(seed));
  std::normal_distribution<float> noise(0.0f, 0.1f);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.id = "toy" + std::to_string(i);
    s.T = 12;
    s.roi_channels = 6;
    int label = 1 + i % 2;
    s.targets = {label};
    s.alignment.segments = {{label, 0, s.T}};
    s.roi.resize(s.T * 6);
    for (std::size_t t = 0; t < s.T; ++t)
      for (int c = 0; c < 6; ++c)
        s.roi[t * 6 + static_cast<std::size_t>(c)] =
            (c == 0 ? (label == 1 ? 1.0f : -1.0f) : 0.0f) + noise(rng);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("training overfits a separable toy task") {
  ModelConfig mcfg;
  mcfg.roi_channels = 6;
  mcfg.conv1d_c1 = 8;
  mcfg.conv1d_c2 = 8;
  mcfg.hidden = 16;
  mcfg.n_classes = 3;
  mcfg.seed = 5;
  Network net(mcfg);
  auto train = toy_samples(16, 1);
  auto valid = toy_samples(4, 2);
  TrainConfig tcfg = TrainConfig::desk();
  tcfg.epochs = 25;
  tcfg.lr0 = 3e-3;
  tcfg.seed = 7;
  RunRecord rec = train_model(net, train, valid, tcfg);
  REQUIRE(rec.train_loss.size() == 25);
  CHECK(rec.train_loss.back() < rec.train_loss.front());
  CHECK(rec.best_valid_per == 0.0);
  CHECK(mean_per(net, train) == 0.0);
  CHECK(rec.nonfinite_skipped == 0);
}

TEST_CASE("training is deterministic for fixed seeds") {
  auto run = [] {
    ModelConfig mcfg;
    mcfg.roi_channels = 6;
    mcfg.conv1d_c1 = 4;
    mcfg.conv1d_c2 = 4;
    mcfg.hidden = 8;
    mcfg.n_classes = 3;
    mcfg.seed = 11;
    Network net(mcfg);
    auto train = toy_samples(8, 3);
    auto valid = toy_samples(2, 4);
    TrainConfig tcfg = TrainConfig::desk();
    tcfg.epochs = 5;
    tcfg.seed = 13;
    RunRecord rec = train_model(net, train, valid, tcfg);
    return std::make_pair(rec.train_loss, net.params().snapshot_weights());
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("early stopping halts after patience epochs without improvement") {
  ModelConfig mcfg;
  mcfg.roi_channels = 6;
  mcfg.conv1d_c1 = 4;
  mcfg.conv1d_c2 = 4;
  mcfg.hidden = 8;
  mcfg.n_classes = 3;
  mcfg.seed = 5;
  Network net(mcfg);
  auto train = toy_samples(8, 5);
  auto valid = toy_samples(2, 6);
  TrainConfig tcfg = TrainConfig::desk();
  tcfg.epochs = 50;
  tcfg.lr0 = 3e-3;
  tcfg.patience = 3;
  RunRecord rec = train_model(net, train, valid, tcfg);
  CHECK(rec.train_loss.size() < 50);
  CHECK(rec.train_loss.size() >= static_cast<std::size_t>(rec.best_epoch + 1));
}

TEST_CASE("majority baseline predicts the most frequent phoneme") {
  std::vector<Sample> train(3), test(1);
  train[0].targets = {1, 2, 1};
  train[1].targets = {1};
  train[2].targets = {2};
  test[0].targets = {1, 1};
  // majority label is 1; predicting {1} for a {1,1} reference costs one edit
  CHECK(majority_baseline_per(train, test) == Catch::Approx(0.5));
}

TEST_CASE("checkpoint round trip preserves weights, config and stats") {
  namespace fs = std::filesystem;
  ModelConfig mcfg;
  mcfg.roi_channels = 5;
  mcfg.conv1d_c1 = 4;
  mcfg.conv1d_c2 = 6;
  mcfg.hidden = 8;
  mcfg.n_classes = 4;
  mcfg.seed = 77;
  Network net(mcfg);
  std::map<std::string, FeatureStats> stats;
  stats["roi"].mean = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f};
  stats["roi"].std = {1.0f, 2.0f, 3.0f, 4.0f, 5.0f};
  auto path = fs::temp_directory_path() / "artic_ckpt_test.ckpt";
  save_checkpoint(net, stats, path);

  auto ck = load_checkpoint(path);
  CHECK(ck.config.roi_channels == 5);
  CHECK(ck.config.hidden == 8);
  CHECK(ck.config.n_classes == 4);
  REQUIRE(ck.stats.count("roi"));
  CHECK(ck.stats["roi"].mean == stats["roi"].mean);
  CHECK(ck.stats["roi"].std == stats["roi"].std);

  Network restored = network_from_checkpoint(ck);
  std::mt19937 rng(9);
  Sample s;
  s.T = 7;
  s.roi_channels = 5;
  s.roi.resize(7 * 5);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  for (auto& v : s.roi) v = dist(rng);
  CHECK(net.forward(s) == restored.forward(s));
  fs::remove(path);
}

TEST_CASE("checkpoint loader rejects corrupt files") {
  namespace fs = std::filesystem;
  auto path = fs::temp_directory_path() / "artic_ckpt_bad.ckpt";
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  fs::remove(path);
}

TEST_CASE("manifest parsing") {
  SECTION("sections, comments and repeated experiments") {
    std::istringstream in(
        "# suite config\n"
        "[corpus]\n"
        "n = 40   # utterances\n"
        "seed=9\n"
        "[train]\n"
        "profile = desk\n"
        "[experiment]\n"
        "name = roi_base\n"
        "feature = roi\n"
        "[experiment]\n"
        "name = roi_xshuf\n"
        "feature = roi\n"
        "perturb = xshuf\n");
    auto m = parse_manifest(in);
    CHECK(m.corpus.at("n") == "40");
    CHECK(m.corpus.at("seed") == "9");
    CHECK(m.train.at("profile") == "desk");
    REQUIRE(m.experiments.size() == 2);
    CHECK(m.experiments[1].at("perturb") == "xshuf");
  }
  SECTION("unknown section is an error") {
    std::istringstream in("[banana]\nx = 1\n");
    CHECK_THROWS_AS(parse_manifest(in), ConfigError);
  }
  SECTION("key outside any section is an error") {
    std::istringstream in("x = 1\n");
    CHECK_THROWS_AS(parse_manifest(in), ConfigError);
  }
  SECTION("unknown keys are rejected with the valid list") {
    std::map<std::string, std::string> section{{"bogus", "1"}};
    try {
      detail::check_keys(section, {"n", "seed"}, "[corpus]");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      std::string msg = e.what();
      CHECK(msg.find("bogus") != std::string::npos);
      CHECK(msg.find("seed") != std::string::npos);
    }
  }
  SECTION("unparseable values are rejected") {
    std::map<std::string, std::string> m{{"n", "forty"}};
    CHECK_THROWS_AS(detail::get_or<std::size_t>(m, "n", 0), ConfigError);
  }
}

TEST_CASE("feature list parsing") {
  auto fs = parse_feature_list("roi+raw");
  REQUIRE(fs.size() == 2);
  CHECK(fs[0] == FeatureKind::Roi);
  CHECK(fs[1] == FeatureKind::Raw);
  CHECK(parse_feature_list("flow")[0] == FeatureKind::Flow);
  CHECK_THROWS_AS(parse_feature_list("roi+banana"), ConfigError);
  CHECK(roi_channel_index("TT") == 1);
  CHECK_THROWS_AS(roi_channel_index("XX"), ConfigError);
}

TEST_CASE("split dataset keeps training statistics and normalizes all splits") {
  auto inv = default_inventory();
  auto score = default_gesture_score(inv);
  CorpusConfig corpus;
  corpus.n = 12;
  corpus.n_train = 8;
  corpus.n_valid = 2;
  corpus.n_test = 2;
  corpus.seed = 21;
  corpus.gen.min_phonemes = 5;
  corpus.gen.max_phonemes = 7;
  PipelineConfig pipe;
  pipe.need_roi = true;
  auto data = build_split_dataset(inv, score, corpus, pipe);
  CHECK(!data.train.empty());
  CHECK(!data.valid.empty());
  CHECK(!data.test.empty());
  REQUIRE(data.stats.count("roi"));
  // training split is z-scored: per-channel mean ~0, variance ~1
  for (int c = 0; c < 6; ++c) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& s : data.train)
      for (std::size_t t = 0; t < s.T; ++t) {
        double v = s.roi[t * 6 + static_cast<std::size_t>(c)];
        sum += v;
        sq += v * v;
        ++n;
      }
    double mean = sum / static_cast<double>(n);
    CHECK(std::abs(mean) < 1e-4);
    CHECK(sq / static_cast<double>(n) - mean * mean == Catch::Approx(1.0).margin(1e-3));
  }
  for (const auto& s : data.train) {
    CHECK(s.T > 0);
    CHECK(!s.targets.empty());
    CHECK(s.raw.empty());  // frames dropped when only ROI features are needed
  }
}
