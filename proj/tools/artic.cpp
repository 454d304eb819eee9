// artic: synthetic articulatory video corpus tooling and sequence-model
// experiment runner. Subcommands: gen, extract, train, eval, perturb,
// ablate, suite, report. Exit codes: 0 ok, 1 runtime failure, 2 usage error.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "artic/checkpoint.hpp"
#include "artic/experiment.hpp"

namespace fs = std::filesystem;
using namespace artic;

namespace {

std::uint64_t env_seed(std::uint64_t fallback) {
  const char* s = std::getenv("ACL_SEED");
  if (!s || !*s) return fallback;
  char* end = nullptr;
  unsigned long long v = std::strtoull(s, &end, 10);
  if (end == s || *end) throw ConfigError("ACL_SEED must be an unsigned integer");
  return v;
}

void require_fresh(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw ConfigError("output " + dir.string() + " exists; pass --force to overwrite");
  fs::create_directories(dir);
}

void print_kv(const char* key, const std::string& val) {
  std::printf("  %-16s %s\n", key, val.c_str());
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string out = "corpus";
  std::size_t n = 200;
  std::uint64_t seed = 1;
  double noise_sigma = 0.02;
  std::size_t min_phonemes = 5, max_phonemes = 15;
  bool force = false;
};

int cmd_gen(const GenArgs& a) {
  GenerateOptions opt;
  opt.noise_sigma = static_cast<float>(a.noise_sigma);
  opt.min_phonemes = a.min_phonemes;
  opt.max_phonemes = a.max_phonemes;
  std::uint64_t seed = env_seed(a.seed);

  std::printf("gen:\n");
  print_kv("out", a.out);
  print_kv("n", std::to_string(a.n));
  print_kv("seed", std::to_string(seed));
  print_kv("noise_sigma", std::to_string(opt.noise_sigma));
  print_kv("phonemes", std::to_string(a.min_phonemes) + ".." + std::to_string(a.max_phonemes));

  require_fresh(a.out, a.force);
  auto inv = default_inventory();
  auto score = default_gesture_score(inv);
  auto corpus = generate_corpus(inv, score, a.n, seed, opt);
  write_container(corpus, inv, a.out);
  write_roi_spec(default_roi_spec(), fs::path(a.out) / "roi.spec");

  double total_s = 0.0;
  std::map<int, std::size_t> hist;
  for (const auto& u : corpus) {
    total_s += static_cast<double>(u.frames.T) / u.frames.fps;
    for (int t : u.targets) ++hist[t];
  }
  std::printf("wrote %zu utterances, %.1f min total\n", corpus.size(), total_s / 60.0);
  for (const auto& [ph, n] : hist)
    std::printf("  %-4s %zu\n", inv.labels[static_cast<std::size_t>(ph)].c_str(), n);
  return 0;
}

// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string in, out, feature = "roi", roi_spec;
  double mask_threshold = 0.2;
  int flow_iterations = 100;
  double flow_alpha = 15.0;
  bool force = false;
};

int cmd_extract(const ExtractArgs& a) {
  FeatureKind kind = parse_feature(a.feature);
  std::printf("extract:\n");
  print_kv("in", a.in);
  print_kv("out", a.out);
  print_kv("feature", a.feature);
  if (kind == FeatureKind::Roi)
    print_kv("roi_spec", a.roi_spec.empty() ? "(bundled with corpus)" : a.roi_spec);
  if (kind == FeatureKind::Flow) {
    print_kv("mask_threshold", std::to_string(a.mask_threshold));
    print_kv("flow_iterations", std::to_string(a.flow_iterations));
    print_kv("flow_alpha", std::to_string(a.flow_alpha));
  }

  PhonemeInventory inv;
  auto corpus = read_container(a.in, &inv);
  if (corpus.empty()) throw ConfigError("no utterances found in " + a.in);

  RoiSpec spec;
  if (kind == FeatureKind::Roi) {
    fs::path spec_path = a.roi_spec.empty() ? fs::path(a.in) / "roi.spec" : fs::path(a.roi_spec);
    if (!fs::exists(spec_path))
      throw ConfigError("roi extraction needs a roi spec; none at " + spec_path.string());
    spec = read_roi_spec(spec_path, corpus.front().frames.H, corpus.front().frames.W);
  }

  require_fresh(a.out, a.force);
  for (const auto& u : corpus) {
    fs::path out = fs::path(a.out) / (u.id + ".rtmf");
    switch (kind) {
      case FeatureKind::Roi: {
        auto trace = extract_roi_trace(u.frames, spec);
        write_feature(trace.values, FeatureFileKind::Roi, trace.T,
                      static_cast<std::size_t>(trace.channels), 1, 1, u.frames.fps, out);
        break;
      }
      case FeatureKind::Raw:
        write_feature(u.frames.data, FeatureFileKind::Raw, u.frames.T, 1, u.frames.H, u.frames.W,
                      u.frames.fps, out);
        break;
      case FeatureKind::Flow: {
        auto flow = mask_flow(estimate_flow(u.frames, a.flow_iterations,
                                            static_cast<float>(a.flow_alpha)),
                              u.frames, static_cast<float>(a.mask_threshold));
        write_feature(flow.components, FeatureFileKind::Flow, flow.T, 2, flow.H, flow.W,
                      u.frames.fps, out);
        break;
      }
    }
  }
  std::printf("wrote %zu feature files\n", corpus.size());
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string in, ckpt = "model.ckpt", feature = "roi", profile = "desk";
  double window_s = 2.0, hop_s = 1.0;
  int epochs = 0;  // 0 = profile default
  std::uint64_t seed = 1;
  double valid_frac = 0.1;
  std::string perturb = "none", ablate = "none";
};

PipelineConfig pipeline_for(const std::vector<FeatureKind>& features, const TrainArgs& a) {
  PipelineConfig pipe;
  pipe.window_s = a.window_s;
  pipe.hop_s = a.hop_s;
  for (FeatureKind k : features) {
    if (k == FeatureKind::Roi) pipe.need_roi = true;
    if (k == FeatureKind::Raw) pipe.need_raw = true;
    if (k == FeatureKind::Flow) pipe.need_flow = true;
  }
  pipe.perturb = parse_perturb(a.perturb);
  pipe.perturb_seed = a.seed + 17;
  if (a.ablate != "none") pipe.ablate_channel = roi_channel_index(a.ablate);
  return pipe;
}

int cmd_train(const TrainArgs& a) {
  std::uint64_t seed = env_seed(a.seed);
  auto features = parse_feature_list(a.feature);
  TrainConfig tcfg = a.profile == "paper" ? TrainConfig::paper() : TrainConfig::desk();
  if (a.profile != "paper" && a.profile != "desk")
    throw ConfigError("unknown profile '" + a.profile + "', expected paper or desk");
  if (a.epochs > 0) tcfg.epochs = a.epochs;
  tcfg.seed = seed;

  std::printf("train:\n");
  print_kv("in", a.in);
  print_kv("ckpt", a.ckpt);
  print_kv("feature", a.feature);
  print_kv("profile", a.profile);
  print_kv("epochs", std::to_string(tcfg.epochs));
  print_kv("window_s", std::to_string(a.window_s));
  print_kv("hop_s", std::to_string(a.hop_s));
  print_kv("seed", std::to_string(seed));
  print_kv("perturb", a.perturb);
  print_kv("ablate", a.ablate);
  std::fflush(stdout);

  PhonemeInventory inv;
  auto corpus = read_container(a.in, &inv);
  if (corpus.empty()) throw ConfigError("no utterances found in " + a.in);
  PipelineConfig pipe = pipeline_for(features, a);

  SplitSamples data;
  std::size_t n_valid = std::max<std::size_t>(1, static_cast<std::size_t>(
                            static_cast<double>(corpus.size()) * a.valid_frac));
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto samples = build_samples(corpus[i], pipe);
    auto* dst = i < corpus.size() - n_valid ? &data.train : &data.valid;
    for (auto& s : samples) dst->push_back(std::move(s));
  }
  normalize_split(data, pipe);
  if (data.train.empty()) throw ConfigError("window/hop settings left no training samples");

  ModelConfig mcfg;
  mcfg.inputs = features;
  mcfg.roi_channels = pipe.ablate_channel >= 0 ? kNumRoiChannels - 1 : kNumRoiChannels;
  mcfg.n_classes = static_cast<int>(inv.size());
  mcfg.seed = seed + 2;
  Network net(mcfg);

  RunRecord rec = train_model(net, data.train, data.valid, tcfg, /*verbose=*/true);
  save_checkpoint(net, data.stats, a.ckpt);
  std::printf("final train loss %.4f, best valid PER %.4f (epoch %d), wall %.1fs\n",
              rec.train_loss.back(), rec.best_valid_per, rec.best_epoch, rec.wall_seconds);
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, in, out;
  double window_s = 2.0, hop_s = 1.0;
  std::string perturb = "none";
  std::uint64_t seed = 1;
};

int cmd_eval(const EvalArgs& a) {
  std::printf("eval:\n");
  print_kv("ckpt", a.ckpt);
  print_kv("in", a.in);
  print_kv("window_s", std::to_string(a.window_s));
  print_kv("hop_s", std::to_string(a.hop_s));
  print_kv("perturb", a.perturb);

  auto ck = load_checkpoint(a.ckpt);
  Network net = network_from_checkpoint(ck);

  PhonemeInventory inv;
  auto corpus = read_container(a.in, &inv);
  if (corpus.empty()) throw ConfigError("no utterances found in " + a.in);
  if (static_cast<int>(inv.size()) != net.config().n_classes)
    throw ConfigError("checkpoint expects " + std::to_string(net.config().n_classes) +
                      " classes, corpus inventory has " + std::to_string(inv.size()));

  PipelineConfig pipe;
  pipe.window_s = a.window_s;
  pipe.hop_s = a.hop_s;
  pipe.perturb = parse_perturb(a.perturb);
  pipe.perturb_seed = env_seed(a.seed) + 17;
  for (FeatureKind k : net.config().inputs) {
    if (k == FeatureKind::Roi) pipe.need_roi = true;
    if (k == FeatureKind::Raw) pipe.need_raw = true;
    if (k == FeatureKind::Flow) pipe.need_flow = true;
  }
  if (net.config().roi_channels == kNumRoiChannels - 1)
    throw ConfigError("checkpoint was trained with an ablated ROI channel; evaluate through "
                      "`suite`, which rebuilds the matching pipeline");

  std::vector<Sample> samples;
  for (const auto& u : corpus)
    for (auto& s : build_samples(u, pipe)) samples.push_back(std::move(s));
  // normalize with the training statistics stored in the checkpoint
  for (auto& s : samples) {
    if (pipe.need_roi) {
      auto it = ck.stats.find("roi");
      if (it == ck.stats.end()) throw ConfigError("checkpoint lacks roi statistics");
      it->second.apply_interleaved(s.roi, static_cast<std::size_t>(s.roi_channels));
    }
    if (pipe.need_raw)
      ck.stats.at("raw").apply_planar(s.raw, s.T, 1,
                                      static_cast<std::size_t>(s.H) * static_cast<std::size_t>(s.W));
    if (pipe.need_flow)
      ck.stats.at("flow").apply_planar(
          s.flow, s.T, 2, static_cast<std::size_t>(s.H) * static_cast<std::size_t>(s.W));
  }

  EvalResult ev = evaluate(net, samples);
  std::printf("PER %.4f  Top-1 %.4f  Top-3 %.4f  (%zu windows)\n", ev.per, ev.top1, ev.top3,
              ev.n_utterances);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_confusion_csv(ev.matrix, inv, fs::path(a.out) / "confusion.csv");
    write_confusion_svg(ev.matrix, inv, fs::path(a.out) / "confusion.svg");
    std::printf("wrote %s/confusion.{csv,svg}\n", a.out.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct PerturbArgs {
  std::string in, out, kind = "xshuf";
  std::uint64_t seed = 1;
  bool force = false;
};

int cmd_perturb(const PerturbArgs& a) {
  PerturbKind kind = parse_perturb(a.kind);
  std::uint64_t seed = env_seed(a.seed);
  std::printf("perturb:\n");
  print_kv("in", a.in);
  print_kv("out", a.out);
  print_kv("kind", a.kind);
  print_kv("seed", std::to_string(seed));

  PhonemeInventory inv;
  auto corpus = read_container(a.in, &inv);
  if (corpus.empty()) throw ConfigError("no utterances found in " + a.in);
  require_fresh(a.out, a.force);
  for (auto& u : corpus) {
    const std::size_t px = u.frames.H * u.frames.W;
    Alignment na = apply_perturb(kind, {&u.frames.data, u.frames.T, px}, u.alignment, seed, u.id);
    u.alignment = na;
    u.targets = na.label_sequence();
    u.frames.T = na.span();
  }
  write_container(corpus, inv, a.out);
  if (fs::exists(fs::path(a.in) / "roi.spec"))
    fs::copy_file(fs::path(a.in) / "roi.spec", fs::path(a.out) / "roi.spec",
                  fs::copy_options::overwrite_existing);
  std::printf("wrote %zu perturbed utterances\n", corpus.size());
  return 0;
}

// ---------------------------------------------------------------------------

struct AblateArgs {
  std::string in, out, channel;
  bool force = false;
};

int cmd_ablate(const AblateArgs& a) {
  std::printf("ablate:\n");
  print_kv("in", a.in);
  print_kv("out", a.out);
  print_kv("channel", a.channel);
  int drop = roi_channel_index(a.channel);
  require_fresh(a.out, a.force);
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(a.in)) {
    if (entry.path().extension() != ".rtmf") continue;
    FeatureFile f = read_feature(entry.path());
    if (f.kind != FeatureFileKind::Roi)
      throw ConfigError(entry.path().string() + " is not a ROI feature file");
    if (static_cast<int>(f.C) != kNumRoiChannels)
      throw ConfigError(entry.path().string() + " already has " + std::to_string(f.C) +
                        " channels");
    RoiTrace trace;
    trace.T = f.T;
    trace.channels = static_cast<int>(f.C);
    trace.values = std::move(f.data);
    trace = ablate_roi_channel(trace, drop);
    write_feature(trace.values, FeatureFileKind::Roi, trace.T,
                  static_cast<std::size_t>(trace.channels), 1, 1, f.fps,
                  fs::path(a.out) / entry.path().filename());
    ++n;
  }
  if (n == 0) throw ConfigError("no .rtmf feature files under " + a.in);
  std::printf("wrote %zu five-channel feature files\n", n);
  return 0;
}

// ---------------------------------------------------------------------------

struct SuiteArgs {
  std::string manifest, out = "runs";
  std::string profile;
  int threads = 1;
};

int cmd_suite(const SuiteArgs& a) {
  std::printf("suite:\n");
  print_kv("manifest", a.manifest);
  print_kv("out", a.out);
  print_kv("threads", std::to_string(a.threads));

  Manifest m = parse_manifest_file(a.manifest);
  if (!a.profile.empty()) m.train["profile"] = a.profile;
  if (m.experiments.empty()) throw ConfigError("manifest has no [experiment] sections");

  fs::create_directories(a.out);
  fs::copy_file(a.manifest, fs::path(a.out) / "manifest.txt",
                fs::copy_options::overwrite_existing);
  auto result = run_experiment_suite(m, a.out, env_seed(0), /*verbose=*/true);
  std::printf("%-20s %-10s %-7s %-6s %8s %8s %8s\n", "name", "feature", "perturb", "ablate", "per",
              "top1", "top3");
  for (const auto& r : result.rows)
    std::printf("%-20s %-10s %-7s %-6s %8.4f %8.4f %8.4f\n", r.name.c_str(), r.feature.c_str(),
                r.perturb.c_str(), r.ablate.c_str(), r.per, r.top1, r.top3);
  std::printf("report: %s\n", result.report_csv.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_report(const std::string& run_dir) {
  std::printf("report:\n");
  print_kv("run", run_dir);
  fs::path csv = fs::path(run_dir) / "report.csv";
  std::ifstream in(csv);
  if (!in) throw ConfigError("no report.csv under " + run_dir);
  std::string header, line;
  std::getline(in, header);
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    ReportRow r;
    std::istringstream ss(line);
    std::string per, top1, top3;
    std::getline(ss, r.name, ',');
    std::getline(ss, r.feature, ',');
    std::getline(ss, r.perturb, ',');
    std::getline(ss, r.ablate, ',');
    std::getline(ss, per, ',');
    std::getline(ss, top1, ',');
    std::getline(ss, top3, ',');
    r.per = std::stod(per);
    r.top1 = std::stod(top1);
    r.top3 = std::stod(top3);
    rows.push_back(r);
  }
  std::printf("%-20s %-10s %-7s %-6s %8s %8s %8s\n", "name", "feature", "perturb", "ablate", "per",
              "top1", "top3");
  for (const auto& r : rows)
    std::printf("%-20s %-10s %-7s %-6s %8.4f %8.4f %8.4f\n", r.name.c_str(), r.feature.c_str(),
                r.perturb.c_str(), r.ablate.c_str(), r.per, r.top1, r.top3);
  write_per_bars_svg(rows, fs::path(run_dir) / "per_bars.svg");
  std::printf("refreshed %s/per_bars.svg\n", run_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::setvbuf(stdout, nullptr, _IOLBF, 0);  // keep config lines ahead of stderr logs
  CLI::App app{"synthetic articulatory video pipeline: corpus generation, feature extraction, "
               "sequence-model training and temporal-fidelity experiments"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* cgen = app.add_subcommand("gen", "generate a synthetic corpus");
  cgen->add_option("--out", gen.out, "output directory");
  cgen->add_option("--n", gen.n, "number of utterances")->check(CLI::PositiveNumber);
  cgen->add_option("--seed", gen.seed, "corpus seed");
  cgen->add_option("--noise-sigma", gen.noise_sigma, "frame noise sigma");
  cgen->add_option("--min-phonemes", gen.min_phonemes, "min phonemes per utterance");
  cgen->add_option("--max-phonemes", gen.max_phonemes, "max phonemes per utterance");
  cgen->add_flag("--force", gen.force, "overwrite existing output");

  ExtractArgs ext;
  auto* cext = app.add_subcommand("extract", "extract feature streams from a corpus");
  cext->add_option("--in", ext.in, "corpus directory")->required();
  cext->add_option("--out", ext.out, "output directory")->required();
  cext->add_option("--feature", ext.feature, "roi, raw or flow")
      ->check(CLI::IsMember({"roi", "raw", "flow"}));
  cext->add_option("--roi-spec", ext.roi_spec, "ROI spec file (default: corpus roi.spec)");
  cext->add_option("--mask-threshold", ext.mask_threshold, "relative intensity mask threshold");
  cext->add_option("--flow-iterations", ext.flow_iterations, "flow solver iterations");
  cext->add_option("--flow-alpha", ext.flow_alpha, "flow smoothness weight");
  cext->add_flag("--force", ext.force, "overwrite existing output");

  TrainArgs tr;
  auto* ctr = app.add_subcommand("train", "train a model on a corpus directory");
  ctr->add_option("--in", tr.in, "corpus directory")->required();
  ctr->add_option("--ckpt", tr.ckpt, "checkpoint output path");
  ctr->add_option("--feature", tr.feature, "feature list, e.g. roi or roi+raw");
  ctr->add_option("--profile", tr.profile, "paper or desk")
      ->check(CLI::IsMember({"paper", "desk"}));
  ctr->add_option("--epochs", tr.epochs, "override epoch count");
  ctr->add_option("--window-s", tr.window_s, "window length in seconds");
  ctr->add_option("--hop-s", tr.hop_s, "window hop in seconds");
  ctr->add_option("--seed", tr.seed, "training seed");
  ctr->add_option("--valid-frac", tr.valid_frac, "held-out validation fraction");
  ctr->add_option("--perturb", tr.perturb, "temporal perturbation for training data");
  ctr->add_option("--ablate", tr.ablate, "ROI channel to drop, e.g. LA");

  EvalArgs ev;
  auto* cev = app.add_subcommand("eval", "evaluate a checkpoint on a corpus directory");
  cev->add_option("--ckpt", ev.ckpt, "checkpoint path")->required();
  cev->add_option("--in", ev.in, "corpus directory")->required();
  cev->add_option("--out", ev.out, "directory for confusion CSV/SVG");
  cev->add_option("--window-s", ev.window_s, "window length in seconds");
  cev->add_option("--hop-s", ev.hop_s, "window hop in seconds");
  cev->add_option("--perturb", ev.perturb, "apply a temporal perturbation before scoring");
  cev->add_option("--seed", ev.seed, "perturbation seed");

  PerturbArgs pt;
  auto* cpt = app.add_subcommand("perturb", "write a temporally perturbed copy of a corpus");
  cpt->add_option("--in", pt.in, "corpus directory")->required();
  cpt->add_option("--out", pt.out, "output directory")->required();
  cpt->add_option("--kind", pt.kind, "xshuf, pshuf, trev, up2 or down2");
  cpt->add_option("--seed", pt.seed, "shuffle seed");
  cpt->add_flag("--force", pt.force, "overwrite existing output");

  AblateArgs ab;
  auto* cab = app.add_subcommand("ablate", "drop one channel from extracted ROI features");
  cab->add_option("--in", ab.in, "ROI feature directory")->required();
  cab->add_option("--out", ab.out, "output directory")->required();
  cab->add_option("--channel", ab.channel, "channel label to drop")->required();
  cab->add_flag("--force", ab.force, "overwrite existing output");

  SuiteArgs su;
  auto* csu = app.add_subcommand("suite", "run every experiment in a manifest");
  csu->add_option("--manifest", su.manifest, "experiment manifest file")->required();
  csu->add_option("--out", su.out, "run directory");
  csu->add_option("--profile", su.profile, "override the manifest train profile")
      ->check(CLI::IsMember({"paper", "desk"}));
  csu->add_option("--threads", su.threads, "worker cap (training itself is sequential)");

  std::string report_run = "runs";
  auto* crp = app.add_subcommand("report", "reprint and re-render a run directory report");
  crp->add_option("--run", report_run, "run directory");

  try {
    app.parse(argc, argv);
    if (*cgen) return cmd_gen(gen);
    if (*cext) return cmd_extract(ext);
    if (*ctr) return cmd_train(tr);
    if (*cev) return cmd_eval(ev);
    if (*cpt) return cmd_perturb(pt);
    if (*cab) return cmd_ablate(ab);
    if (*csu) return cmd_suite(su);
    if (*crp) return cmd_report(report_run);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
