#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "artic/train.hpp"

namespace artic {

// Default desk-scale inventory and gesture score. The targets are built so
// that LA alone separates four otherwise-identical pairs (maximally
// discriminative channel) while LX is constant across phonemes
// (uninformative); the ROI ablation sweep leans on this contrast.
inline PhonemeInventory default_inventory() {
  return PhonemeInventory::with_phonemes({"AA", "P", "IY", "T", "UW", "K", "S", "N"});
}

inline GestureScore default_gesture_score(const PhonemeInventory& inv) {
  GestureScore score;
  score.targets.assign(inv.size(), {});
  score.duration_ms.assign(inv.size(), 100.0f);
  auto set = [&](const char* label, std::array<float, 6> tgt, float ms) {
    int i = inv.index_of(label);
    if (i <= 0) throw ConfigError(std::string("gesture score for unknown phoneme ") + label);
    score.targets[static_cast<std::size_t>(i)] = tgt;
    score.duration_ms[static_cast<std::size_t>(i)] = ms;
  };
  //                 LA     TT     TB     VL     TR     LX
  set("AA", {0.15f, 0.20f, 0.80f, 0.30f, 0.70f, 0.50f}, 120.0f);
  set("P",  {0.90f, 0.20f, 0.80f, 0.30f, 0.70f, 0.50f}, 60.0f);
  set("IY", {0.15f, 0.80f, 0.20f, 0.70f, 0.30f, 0.50f}, 110.0f);
  set("T",  {0.90f, 0.80f, 0.20f, 0.70f, 0.30f, 0.50f}, 55.0f);
  set("UW", {0.15f, 0.20f, 0.20f, 0.30f, 0.30f, 0.50f}, 130.0f);
  set("K",  {0.90f, 0.20f, 0.20f, 0.30f, 0.30f, 0.50f}, 65.0f);
  set("S",  {0.15f, 0.80f, 0.80f, 0.70f, 0.70f, 0.50f}, 90.0f);
  set("N",  {0.90f, 0.80f, 0.80f, 0.70f, 0.70f, 0.50f}, 70.0f);
  return score;
}

enum class PerturbMode { Retrain, EvalOnly };

struct PipelineConfig {
  double window_s = 2.0, hop_s = 1.0;
  bool need_roi = false, need_raw = false, need_flow = false;
  RoiSpec roi_spec = default_roi_spec();
  float mask_threshold = 0.2f;
  int flow_iterations = 100;
  float flow_alpha = 15.0f;
  int ablate_channel = -1;  // ROI channel index, -1 = none
  PerturbKind perturb = PerturbKind::None;
  std::uint64_t perturb_seed = 1;
};

// Utterance -> windows -> feature streams -> perturbed samples. Frames are
// dropped unless the raw branch needs them, which keeps large corpora in
// memory-friendly territory.
inline std::vector<Sample> build_samples(const Utterance& utt, const PipelineConfig& cfg) {
  std::vector<Sample> out;
  for (const auto& win : slice_windows(utt, cfg.window_s, cfg.hop_s)) {
    Sample s;
    s.id = win.id;
    s.T = win.frames.T;
    s.H = static_cast<int>(win.frames.H);
    s.W = static_cast<int>(win.frames.W);
    s.alignment = win.alignment;
    s.targets = win.targets;
    if (cfg.need_roi) {
      RoiTrace trace = extract_roi_trace(win.frames, cfg.roi_spec);
      if (cfg.ablate_channel >= 0) trace = ablate_roi_channel(trace, cfg.ablate_channel);
      s.roi = std::move(trace.values);
      s.roi_channels = cfg.ablate_channel >= 0 ? kNumRoiChannels - 1 : kNumRoiChannels;
    }
    if (cfg.need_raw) s.raw = win.frames.data;
    if (cfg.need_flow) {
      auto flow = mask_flow(estimate_flow(win.frames, cfg.flow_iterations, cfg.flow_alpha),
                            win.frames, cfg.mask_threshold);
      s.flow = std::move(flow.components);
    }
    if (cfg.perturb != PerturbKind::None) {
      Alignment na;
      const std::size_t roi_fs = static_cast<std::size_t>(s.roi_channels);
      const std::size_t frame_px = static_cast<std::size_t>(s.H) * static_cast<std::size_t>(s.W);
      // identical per-utterance seed per stream keeps all streams aligned
      if (cfg.need_roi)
        na = apply_perturb(cfg.perturb, {&s.roi, s.T, roi_fs}, s.alignment, cfg.perturb_seed, s.id);
      if (cfg.need_raw)
        na = apply_perturb(cfg.perturb, {&s.raw, s.T, frame_px}, s.alignment, cfg.perturb_seed, s.id);
      if (cfg.need_flow)
        na = apply_perturb(cfg.perturb, {&s.flow, s.T, 2 * frame_px}, s.alignment, cfg.perturb_seed,
                           s.id);
      s.alignment = na;
      s.targets = na.label_sequence();
      s.T = na.span();
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct SplitSamples {
  std::vector<Sample> train, valid, test;
  std::map<std::string, FeatureStats> stats;  // training-split normalization
};

inline void normalize_split(SplitSamples& data, const PipelineConfig& cfg) {
  auto all = [&](auto&& fn) {
    for (auto* split : {&data.train, &data.valid, &data.test})
      for (auto& s : *split) fn(s);
  };
  if (cfg.need_roi) {
    std::size_t ch = cfg.ablate_channel >= 0 ? kNumRoiChannels - 1 : kNumRoiChannels;
    StatsAccumulator acc(ch);
    for (const auto& s : data.train) acc.add_interleaved(s.roi, ch);
    data.stats["roi"] = acc.finalize();
    all([&](Sample& s) { data.stats["roi"].apply_interleaved(s.roi, ch); });
  }
  if (cfg.need_raw) {
    StatsAccumulator acc(1);
    for (const auto& s : data.train)
      acc.add_planar(s.raw, s.T, 1, static_cast<std::size_t>(s.H) * static_cast<std::size_t>(s.W));
    data.stats["raw"] = acc.finalize();
    all([&](Sample& s) {
      data.stats["raw"].apply_planar(s.raw, s.T, 1,
                                     static_cast<std::size_t>(s.H) * static_cast<std::size_t>(s.W));
    });
  }
  if (cfg.need_flow) {
    StatsAccumulator acc(2);
    for (const auto& s : data.train)
      acc.add_planar(s.flow, s.T, 2, static_cast<std::size_t>(s.H) * static_cast<std::size_t>(s.W));
    data.stats["flow"] = acc.finalize();
    all([&](Sample& s) {
      data.stats["flow"].apply_planar(s.flow, s.T, 2,
                                      static_cast<std::size_t>(s.H) * static_cast<std::size_t>(s.W));
    });
  }
}

struct CorpusConfig {
  std::size_t n = 250;
  std::uint64_t seed = 1;
  std::size_t n_train = 200, n_valid = 25, n_test = 25;
  GenerateOptions gen;
};

// Generates the synthetic corpus one utterance at a time and routes windows
// into hash-assigned splits, then z-scores with training statistics.
inline SplitSamples build_split_dataset(const PhonemeInventory& inv, const GestureScore& score,
                                        const CorpusConfig& corpus, const PipelineConfig& pipe) {
  inv.validate();
  score.validate(inv);
  // split assignment needs only the ids
  std::vector<Utterance> stubs(corpus.n);
  for (std::size_t i = 0; i < corpus.n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "utt%05zu", i);
    stubs[i].id = id;
  }
  auto splits = split_indices_exact(stubs, corpus.n_train, corpus.n_valid, corpus.n_test);
  std::vector<int> which(corpus.n, -1);
  for (int s = 0; s < 3; ++s)
    for (std::size_t i : splits[static_cast<std::size_t>(s)]) which[i] = s;

  SplitSamples data;
  for (std::size_t i = 0; i < corpus.n; ++i) {
    if (which[i] < 0) continue;
    Utterance u = generate_utterance(inv, score, stubs[i].id, corpus.seed, corpus.gen);
    auto samples = build_samples(u, pipe);
    auto* dst = which[i] == 0 ? &data.train : which[i] == 1 ? &data.valid : &data.test;
    for (auto& s : samples) dst->push_back(std::move(s));
  }
  normalize_split(data, pipe);
  return data;
}

// ---------------------------------------------------------------------------
// Experiment manifest: UTF-8 key-value file with [section] headers. Repeated
// [experiment] sections queue runs; [corpus], [model] and [train] set shared
// configuration. See docs in the repository README.

struct Manifest {
  std::map<std::string, std::string> corpus, model, train;
  std::vector<std::map<std::string, std::string>> experiments;
};

inline Manifest parse_manifest(std::istream& in) {
  Manifest m;
  std::map<std::string, std::string>* section = nullptr;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    if (line.front() == '[') {
      std::string name = line.substr(1, line.find(']') - 1);
      if (name == "corpus")
        section = &m.corpus;
      else if (name == "model")
        section = &m.model;
      else if (name == "train")
        section = &m.train;
      else if (name == "experiment") {
        m.experiments.emplace_back();
        section = &m.experiments.back();
      } else
        throw ConfigError("manifest line " + std::to_string(lineno) + ": unknown section [" +
                          name + "], expected corpus, model, train or experiment");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos || !section)
      throw ConfigError("manifest line " + std::to_string(lineno) + ": expected key = value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto strip = [](std::string s) {
      auto b2 = s.find_first_not_of(" \t");
      auto e2 = s.find_last_not_of(" \t");
      return b2 == std::string::npos ? std::string() : s.substr(b2, e2 - b2 + 1);
    };
    (*section)[strip(key)] = strip(val);
  }
  return m;
}

inline Manifest parse_manifest_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  return parse_manifest(in);
}

namespace detail {

inline void check_keys(const std::map<std::string, std::string>& section,
                       const std::set<std::string>& valid, const std::string& where) {
  for (const auto& [k, v] : section)
    if (!valid.count(k)) {
      std::string list;
      for (const auto& key : valid) list += (list.empty() ? "" : ", ") + key;
      throw ConfigError("unknown " + where + " key '" + k + "'; valid keys: " + list);
    }
}

template <class T>
T get_or(const std::map<std::string, std::string>& m, const std::string& key, T fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  std::istringstream ss(it->second);
  T v;
  ss >> v;
  if (!ss) throw ConfigError("manifest key '" + key + "': cannot parse '" + it->second + "'");
  return v;
}

inline std::string get_or(const std::map<std::string, std::string>& m, const std::string& key,
                          const char* fallback) {
  auto it = m.find(key);
  return it == m.end() ? fallback : it->second;
}

}  // namespace detail

inline int roi_channel_index(std::string_view name) {
  for (int c = 0; c < kNumRoiChannels; ++c)
    if (name == kRoiChannelNames[c]) return c;
  throw ConfigError("unknown ROI channel '" + std::string(name) +
                    "', expected LA, TT, TB, VL, TR or LX");
}

struct ExperimentSpec {
  std::string name;
  std::vector<FeatureKind> features;
  PerturbKind perturb = PerturbKind::None;
  PerturbMode mode = PerturbMode::Retrain;
  int ablate_channel = -1;
  std::string ablate_name = "none";
};

inline std::vector<FeatureKind> parse_feature_list(const std::string& s) {
  std::vector<FeatureKind> out;
  std::string tok;
  std::istringstream ss(s);
  while (std::getline(ss, tok, '+')) out.push_back(parse_feature(tok));
  return out;
}

struct SuiteResult {
  std::vector<ReportRow> rows;
  std::filesystem::path report_csv;
};

// Runs every [experiment] in the manifest and writes report.csv, per-run
// confusion matrices, loss curves and checkpoints under out_dir. A copy of
// the manifest is kept alongside for provenance.
inline SuiteResult run_experiment_suite(const Manifest& manifest,
                                        const std::filesystem::path& out_dir,
                                        std::uint64_t seed_override = 0, bool verbose = false) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  detail::check_keys(manifest.corpus,
                     {"n", "seed", "train", "valid", "test", "noise_sigma", "window_s", "hop_s",
                      "min_phonemes", "max_phonemes", "omega"},
                     "[corpus]");
  detail::check_keys(manifest.model, {"hidden", "seed", "conv1d_c1", "conv1d_c2"}, "[model]");
  detail::check_keys(manifest.train,
                     {"profile", "epochs", "seed", "lr0", "weight_decay", "lr_decay", "decay_every",
                      "patience", "flow_iterations", "flow_alpha", "mask_threshold"},
                     "[train]");

  CorpusConfig corpus;
  corpus.n = detail::get_or<std::size_t>(manifest.corpus, "n", 250);
  corpus.seed = detail::get_or<std::uint64_t>(manifest.corpus, "seed", 1);
  corpus.n_train = detail::get_or<std::size_t>(manifest.corpus, "train", corpus.n * 8 / 10);
  corpus.n_valid = detail::get_or<std::size_t>(manifest.corpus, "valid", corpus.n / 10);
  corpus.n_test = detail::get_or<std::size_t>(manifest.corpus, "test", corpus.n / 10);
  corpus.gen.noise_sigma = detail::get_or<float>(manifest.corpus, "noise_sigma", 0.02f);
  corpus.gen.min_phonemes = detail::get_or<std::size_t>(manifest.corpus, "min_phonemes", 5);
  corpus.gen.max_phonemes = detail::get_or<std::size_t>(manifest.corpus, "max_phonemes", 15);

  double window_s = detail::get_or<double>(manifest.corpus, "window_s", 2.0);
  double hop_s = detail::get_or<double>(manifest.corpus, "hop_s", 1.0);

  if (seed_override) corpus.seed = seed_override;

  PhonemeInventory inv = default_inventory();
  GestureScore score = default_gesture_score(inv);
  score.omega = detail::get_or<float>(manifest.corpus, "omega", score.omega);

  std::string profile = detail::get_or(manifest.train, "profile", "desk");
  TrainConfig tcfg = profile == "paper" ? TrainConfig::paper() : TrainConfig::desk();
  if (profile != "paper" && profile != "desk")
    throw ConfigError("unknown profile '" + profile + "', expected paper or desk");
  tcfg.epochs = detail::get_or<int>(manifest.train, "epochs", tcfg.epochs);
  tcfg.seed = detail::get_or<std::uint64_t>(manifest.train, "seed", tcfg.seed);
  tcfg.lr0 = detail::get_or<double>(manifest.train, "lr0", tcfg.lr0);
  tcfg.weight_decay = detail::get_or<double>(manifest.train, "weight_decay", tcfg.weight_decay);
  tcfg.lr_decay = detail::get_or<double>(manifest.train, "lr_decay", tcfg.lr_decay);
  tcfg.decay_every = detail::get_or<int>(manifest.train, "decay_every", tcfg.decay_every);
  tcfg.patience = detail::get_or<int>(manifest.train, "patience", tcfg.patience);
  if (seed_override) tcfg.seed = seed_override;

  SuiteResult result;
  for (const auto& ex : manifest.experiments) {
    detail::check_keys(ex, {"name", "feature", "perturb", "ablate", "mode"}, "[experiment]");
    ExperimentSpec spec;
    spec.name = detail::get_or(ex, "name", "");
    if (spec.name.empty())
      throw ConfigError("experiment needs a name key");
    spec.features = parse_feature_list(detail::get_or(ex, "feature", "roi"));
    spec.perturb = parse_perturb(detail::get_or(ex, "perturb", "none"));
    std::string mode = detail::get_or(ex, "mode", "retrain");
    if (mode == "retrain")
      spec.mode = PerturbMode::Retrain;
    else if (mode == "evalonly")
      spec.mode = PerturbMode::EvalOnly;
    else
      throw ConfigError("unknown mode '" + mode + "', expected retrain or evalonly");
    std::string ablate = detail::get_or(ex, "ablate", "none");
    if (ablate != "none") {
      spec.ablate_channel = roi_channel_index(ablate);
      spec.ablate_name = ablate;
    }

    PipelineConfig pipe;
    pipe.window_s = window_s;
    pipe.hop_s = hop_s;
    pipe.perturb_seed = corpus.seed + 17;
    pipe.ablate_channel = spec.ablate_channel;
    pipe.flow_iterations = detail::get_or<int>(manifest.train, "flow_iterations", 100);
    pipe.flow_alpha = detail::get_or<float>(manifest.train, "flow_alpha", 15.0f);
    pipe.mask_threshold = detail::get_or<float>(manifest.train, "mask_threshold", 0.2f);
    for (FeatureKind k : spec.features) {
      if (k == FeatureKind::Roi) pipe.need_roi = true;
      if (k == FeatureKind::Raw) pipe.need_raw = true;
      if (k == FeatureKind::Flow) pipe.need_flow = true;
    }
    if (spec.mode == PerturbMode::Retrain) pipe.perturb = spec.perturb;

    if (verbose) std::fprintf(stderr, "== experiment %s\n", spec.name.c_str());
    SplitSamples data = build_split_dataset(inv, score, corpus, pipe);
    if (spec.perturb != PerturbKind::None) {
      // Retrain mode measures how a model trained on temporally corrupted
      // data fares on intact data; eval-only measures the converse.
      PipelineConfig other = pipe;
      other.perturb = spec.mode == PerturbMode::Retrain ? PerturbKind::None : spec.perturb;
      SplitSamples od = build_split_dataset(inv, score, corpus, other);
      data.test = std::move(od.test);
    }

    ModelConfig mcfg;
    mcfg.inputs = spec.features;
    mcfg.roi_channels = spec.ablate_channel >= 0 ? kNumRoiChannels - 1 : kNumRoiChannels;
    mcfg.hidden = detail::get_or<int>(manifest.model, "hidden", 64);
    mcfg.conv1d_c1 = detail::get_or<int>(manifest.model, "conv1d_c1", 32);
    mcfg.conv1d_c2 = detail::get_or<int>(manifest.model, "conv1d_c2", 64);
    mcfg.n_classes = static_cast<int>(inv.size());
    mcfg.seed = detail::get_or<std::uint64_t>(manifest.model, "seed", 3);

    Network net(mcfg);
    RunRecord rec = train_model(net, data.train, data.valid, tcfg, verbose);
    EvalResult ev = evaluate(net, data.test);

    ReportRow row;
    row.name = spec.name;
    {
      std::string f;
      for (FeatureKind k : spec.features) f += (f.empty() ? "" : "+") + std::string(feature_name(k));
      row.feature = f;
    }
    row.perturb = perturb_name(spec.perturb);
    row.ablate = spec.ablate_name;
    row.per = ev.per;
    row.top1 = ev.top1;
    row.top3 = ev.top3;
    result.rows.push_back(row);

    save_checkpoint(net, data.stats, out_dir / (spec.name + ".ckpt"));
    write_confusion_csv(ev.matrix, inv, out_dir / (spec.name + ".confusion.csv"));
    write_confusion_svg(ev.matrix, inv, out_dir / (spec.name + ".confusion.svg"));
    std::ofstream curve(out_dir / (spec.name + ".runrecord.csv"), std::ios::binary);
    curve << "epoch,train_loss,valid_per\n";
    for (std::size_t e = 0; e < rec.train_loss.size(); ++e)
      curve << e << ',' << csv_number(rec.train_loss[e]) << ',' << csv_number(rec.valid_per[e])
            << '\n';
  }

  result.report_csv = out_dir / "report.csv";
  write_report_csv(result.rows, result.report_csv);
  write_per_bars_svg(result.rows, out_dir / "per_bars.svg");
  return result;
}

}  // namespace artic
