// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "magms/checkpoint.hpp"
#include "magms/data.hpp"
#include "magms/evaluation.hpp"
#include "magms/pipeline.hpp"
#include "magms/theory.hpp"
#include "magms/training.hpp"

namespace magms::cli {

namespace fs = std::filesystem;

namespace {

enum class Level { error = 0, info = 1, debug = 2 };

class Log {
 public:
  explicit Log(std::ostream& err) : err_(err) {
    const char* env = std::getenv("MAGMS_LOG");
    const std::string v = env ? env : "info";
    if (v == "error") level_ = Level::error;
    else if (v == "debug") level_ = Level::debug;
    else level_ = Level::info;
  }
  void error(const std::string& msg) const { err_ << "magms: error: " << msg << '\n'; }
  void info(const std::string& msg) const {
    if (level_ >= Level::info) err_ << "magms: " << msg << '\n';
  }
  void debug(const std::string& msg) const {
    if (level_ >= Level::debug) err_ << "magms: " << msg << '\n';
  }

 private:
  std::ostream& err_;
  Level level_ = Level::info;
};

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct GenDataArgs {
  std::string out;
  int modalities = 4;
  int size = 32;
  std::uint64_t seed = 0;
  int subjects = 18;
  int classes = 4;
  std::string phantom = "standard";
  double noise = 0.1;
  std::vector<double> spacing{1.0, 1.0, 1.0};
};

struct TrainArgs {
  std::string data;
  std::string out;
  std::string arm = "magms";
  std::string config;
  std::string resume;
  std::optional<int> iterations;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::optional<double> gamma;
  std::optional<double> temperature;
  std::optional<double> lr;
  std::optional<int> batch_size;
  std::optional<double> dropout;
  std::optional<int> checkpoint_every;
  bool no_flips = false;
};

struct SweepArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string format = "csv,md";
  bool plots = false;
  int jobs = 1;
};

struct TheoryArgs {
  std::vector<std::string> pairs;
  std::int64_t n = 100000;
  std::uint64_t seed = 0;
  std::string with;
  std::string without;
  std::string data;
  std::string subset;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a, const std::vector<std::string>& raw, std::ostream& out,
                 const Log& log) {
  PhantomSpec spec;
  if (a.phantom == "standard") spec = PhantomSpec::standard(a.modalities, a.classes);
  else spec = PhantomSpec::complementary(a.modalities, a.classes);
  spec.grid = {a.size, a.size, a.size};
  spec.seed = a.seed;
  spec.noise_sigma = a.noise;
  spec.spacing = {a.spacing[0], a.spacing[1], a.spacing[2]};
  spec.validate();

  RunManifest manifest;
  manifest.command = "gen-data";
  manifest.arguments = raw;
  manifest.seed = a.seed;
  manifest.config_hash = hex64(fnv1a64(spec.to_json().dump()));
  manifest.started_at = utc_timestamp();
  manifest.outputs["dataset"] = a.out;
  manifest.write(a.out);

  log.info("generating " + std::to_string(a.subjects) + " subjects, " +
           std::to_string(a.modalities) + " modalities, grid " + std::to_string(a.size) + "^3");
  const Dataset ds = generate_phantom(spec, a.subjects);
  write_dataset(ds, a.out);

  manifest.finished_at = utc_timestamp();
  manifest.status = "ok";
  manifest.write(a.out);
  out << "dataset: " << a.out << " (" << ds.subjects.size() << " subjects, modalities";
  for (const auto& n : ds.modalities.names()) out << ' ' << n;
  out << ")\n";
  return kExitOk;
}

// Keeps only log lines at or before `iteration`, so a resumed run that
// shares the directory does not carry steps it is about to redo.
void truncate_log(const fs::path& path, std::int64_t iteration) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.contains("iteration") && j["iteration"].get<std::int64_t>() <= iteration) {
      kept += line + '\n';
    }
  }
  in.close();
  write_file_atomic(path.string(), kept);
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& raw, std::ostream& out,
              const Log& log) {
  const Dataset ds = read_dataset(a.data);
  std::optional<TrainState> state;
  if (!a.resume.empty()) {
    if (!a.config.empty() || a.iterations || a.seed || a.lambda || a.gamma || a.temperature ||
        a.lr || a.batch_size || a.dropout || a.checkpoint_every || a.no_flips || a.arm != "magms") {
      throw UsageError("--resume continues the stored configuration; other training flags are not allowed");
    }
    if (!fs::exists(a.resume)) throw LoadError("checkpoint '" + a.resume + "' not found");
    state.emplace(load_checkpoint(a.resume));
    log.info("resuming from " + a.resume + " at iteration " + std::to_string(state->iteration));
  } else {
    ExperimentConfig cfg = a.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(a.config);
    cfg.arm = parse_arm(a.arm);
    cfg.modalities = ds.modalities;
    cfg.num_classes = ds.num_classes;
    if (ds.subjects.empty()) throw DataError("dataset '" + a.data + "' has no subjects");
    const auto g = ds.subjects.front().grid_shape();
    cfg.input_shape = {g.at(0), g.at(1), g.at(2)};
    if (cfg.arm != Arm::magms) {
      cfg.lambda_kl = 0.0;
      cfg.gamma_l2 = 0.0;
    }
    if (a.lambda) cfg.lambda_kl = *a.lambda;
    if (a.gamma) cfg.gamma_l2 = *a.gamma;
    if (a.temperature) cfg.kl_temperature = *a.temperature;
    if (a.iterations) cfg.optimizer.iterations = *a.iterations;
    if (a.seed) cfg.optimizer.seed = *a.seed;
    if (a.lr) cfg.optimizer.learning_rate = *a.lr;
    if (a.batch_size) cfg.optimizer.batch_size = *a.batch_size;
    if (a.dropout) cfg.dropout_prob = *a.dropout;
    if (a.checkpoint_every) cfg.checkpoint_every = *a.checkpoint_every;
    if (a.no_flips) cfg.augment_flips = false;
    cfg.validate();
    state.emplace(cfg);
  }
  const auto& cfg = state->config;
  const std::int64_t remaining = cfg.optimizer.iterations - state->iteration;

  RunManifest manifest;
  manifest.command = "train";
  manifest.arguments = raw;
  manifest.seed = cfg.optimizer.seed;
  manifest.config_hash = hex64(cfg.hash());
  manifest.started_at = utc_timestamp();
  manifest.inputs["dataset"] = a.data;
  if (!a.resume.empty()) manifest.inputs["resume"] = a.resume;
  manifest.write(a.out);

  if (remaining <= 0) {
    log.info("checkpoint already at iteration " + std::to_string(state->iteration));
  } else {
    truncate_log(fs::path(a.out) / "log.jsonl", state->iteration);
    log.info("training arm " + std::string(arm_name(cfg.arm)) + " for " +
             std::to_string(remaining) + " iterations");
    TrainOptions opts;
    opts.run_dir = a.out;
    opts.on_step = [&](std::int64_t it, const LossBreakdown& b) {
      log.debug("iteration " + std::to_string(it) + " loss " + fixed(b.total));
      if (it % 50 == 0) log.info("iteration " + std::to_string(it) + " loss " + fixed(b.total));
    };
    try {
      train(*state, ds, static_cast<int>(remaining), opts);
    } catch (...) {
      manifest.status = "failed";
      manifest.finished_at = utc_timestamp();
      manifest.write(a.out);
      throw;
    }
  }
  const auto final_ckpt = (fs::path(a.out) / checkpoint_filename(state->iteration)).string();
  if (!fs::exists(final_ckpt)) save_checkpoint(*state, final_ckpt);
  manifest.finished_at = utc_timestamp();
  manifest.status = "ok";
  manifest.outputs["checkpoint"] = final_ckpt;
  manifest.outputs["log"] = (fs::path(a.out) / "log.jsonl").string();
  manifest.write(a.out);
  out << "checkpoint: " << final_ckpt << '\n';
  return kExitOk;
}

int cmd_sweep(const SweepArgs& a, const std::vector<std::string>& raw, std::ostream& out,
              const Log& log) {
  const auto formats = parse_report_formats(a.format);
  if (!fs::exists(a.checkpoint)) throw LoadError("checkpoint '" + a.checkpoint + "' not found");
  const ExperimentConfig cfg = peek_checkpoint_config(a.checkpoint);

  RunManifest manifest;
  manifest.command = "sweep";
  manifest.arguments = raw;
  manifest.seed = cfg.optimizer.seed;
  manifest.config_hash = hex64(cfg.hash());
  manifest.started_at = utc_timestamp();
  manifest.inputs["checkpoint"] = a.checkpoint;
  manifest.inputs["dataset"] = a.data;
  manifest.write(a.out);

  const Dataset ds = read_dataset(a.data);
  SweepAudit audit;
  const auto report = sweep_subsets(a.checkpoint, ds, SweepOptions{a.jobs}, &audit);
  log.info("swept " + std::to_string(report.rows.size()) + " subsets on " +
           std::to_string(report.subjects) + " test subjects; checkpoint loads " +
           std::to_string(audit.checkpoint_loads) + ", parameter updates " +
           std::to_string(audit.parameter_updates));
  const auto files = render_report(report, formats, a.out, a.plots);
  for (const auto& f : files) manifest.outputs[fs::path(f).filename().string()] = f;
  manifest.finished_at = utc_timestamp();
  manifest.status = "ok";
  manifest.write(a.out);
  out << render_markdown(report);
  return kExitOk;
}

ScalarLikelihoodPair parse_pair(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw UsageError("pair '" + text + "' is not of the form P_M:P_S");
  double pm = 0.0, ps = 0.0;
  try {
    std::size_t used = 0;
    const std::string a = text.substr(0, colon), b = text.substr(colon + 1);
    pm = std::stod(a, &used);
    if (used != a.size()) throw std::invalid_argument(a);
    ps = std::stod(b, &used);
    if (used != b.size()) throw std::invalid_argument(b);
  } catch (const std::logic_error&) {
    throw UsageError("pair '" + text + "' is not of the form P_M:P_S");
  }
  try {
    return ScalarLikelihoodPair(pm, ps);
  } catch (const DomainError& e) {
    throw UsageError("pair '" + text + "': " + e.what());
  }
}

int cmd_verify_theory(const TheoryArgs& a, const std::vector<std::string>& raw, std::ostream& out,
                      const Log& log) {
  std::vector<ScalarLikelihoodPair> pairs;
  for (const auto& p : a.pairs) pairs.push_back(parse_pair(p));
  if (a.pairs.empty()) {
    pairs.emplace_back(0.9, 0.6);
    pairs.emplace_back(1.0, 0.5);
  }
  const bool compare = !a.with.empty() || !a.without.empty();
  if (compare && (a.with.empty() || a.without.empty() || a.data.empty())) {
    throw UsageError("--with, --without and --data must be given together");
  }

  RunManifest manifest;
  manifest.command = "verify-theory";
  manifest.arguments = raw;
  manifest.seed = a.seed;
  manifest.started_at = utc_timestamp();
  if (!a.out.empty()) manifest.write(a.out);

  bool ok = true;
  nlohmann::json result;
  out << "p_M       p_S       h_S       h_M       d_kl      bound     holds\n";
  for (const auto& p : pairs) {
    const auto c = verify_entropy_bound(p);
    ok = ok && c.holds;
    out << fixed(c.p_m) << "  " << fixed(c.p_s) << "  " << fixed(c.h_s) << "  " << fixed(c.h_m)
        << "  " << fixed(c.d_kl) << "  " << fixed(c.bound) << "  " << (c.holds ? "yes" : "no")
        << '\n';
    result["checks"].push_back({{"p_m", c.p_m}, {"p_s", c.p_s}, {"h_s", c.h_s}, {"h_m", c.h_m},
                                {"d_kl", c.d_kl}, {"bound", c.bound}, {"holds", c.holds}});
  }
  if (a.n < 1) throw UsageError("-n must be at least 1");
  std::vector<BoundCheck> failures;
  const double fraction = sweep_bound(a.n, a.seed, &failures);
  ok = ok && fraction == 1.0;
  out << "sampled pairs: " << a.n << "\nfraction holding: " << fixed(fraction) << '\n';
  result["sampled"] = a.n;
  result["fraction_holding"] = fraction;
  for (const auto& f : failures) log.error("bound fails at p_M=" + fixed(f.p_m, 17) + " p_S=" + fixed(f.p_s, 17));

  if (compare) {
    const Dataset ds = read_dataset(a.data);
    std::string subset = a.subset;
    if (subset.empty()) subset = peek_checkpoint_config(a.with).modalities[0].name;
    const auto cmp = distillation_tightens_bound(a.with, a.without, ds, subset);
    out << "subset " << cmp.subset << " over " << cmp.subjects << " test subjects\n"
        << "  with distillation:    KL(fused||subset) " << fixed(cmp.with.mean_kl)
        << "  entropy " << fixed(cmp.with.mean_entropy) << '\n'
        << "  without distillation: KL(fused||subset) " << fixed(cmp.without.mean_kl)
        << "  entropy " << fixed(cmp.without.mean_entropy) << '\n'
        << "  KL reduction " << fixed(cmp.kl_reduction()) << ", entropy reduction "
        << fixed(cmp.entropy_reduction()) << '\n';
    result["comparison"] = cmp.to_json();
    manifest.inputs["with"] = a.with;
    manifest.inputs["without"] = a.without;
    manifest.inputs["dataset"] = a.data;
  }
  if (!a.out.empty()) {
    const auto path = (fs::path(a.out) / "theory.json").string();
    write_file_atomic(path, result.dump(2) + "\n");
    manifest.outputs["theory"] = path;
    manifest.finished_at = utc_timestamp();
    manifest.status = ok ? "ok" : "failed";
    manifest.write(a.out);
  }
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const Log log(err);
  CLI::App app{"Modality-agnostic multi-modal segmentation toolkit", "magms"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);

  GenDataArgs g;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-modal phantom dataset");
  gen->add_option("--out", g.out, "Output dataset directory")->required();
  gen->add_option("--modalities", g.modalities, "Number of modalities")
      ->check(CLI::Range(1, 16))->capture_default_str();
  gen->add_option("--size", g.size, "Grid extent per axis (voxels)")
      ->check(CLI::Range(4, 512))->capture_default_str();
  gen->add_option("--seed", g.seed, "Random seed")->capture_default_str();
  gen->add_option("--subjects", g.subjects, "Number of subjects")
      ->check(CLI::Range(1, 100000))->capture_default_str();
  gen->add_option("--classes", g.classes, "Number of classes including background")
      ->check(CLI::Range(2, 255))->capture_default_str();
  gen->add_option("--phantom", g.phantom, "Visibility pattern")
      ->check(CLI::IsMember({"standard", "complementary"}))->capture_default_str();
  gen->add_option("--noise", g.noise, "Gaussian noise standard deviation")
      ->check(CLI::NonNegativeNumber)->capture_default_str();
  gen->add_option("--spacing", g.spacing, "Voxel spacing in mm (z,y,x)")
      ->delimiter(',')->expected(3)->check(CLI::PositiveNumber);

  TrainArgs t;
  auto* tr = app.add_subcommand("train", "Train one model arm on a dataset");
  tr->add_option("--data", t.data, "Dataset directory")->required();
  tr->add_option("--out", t.out, "Run directory")->required();
  tr->add_option("--arm", t.arm, "Model arm")
      ->check(CLI::IsMember({"magms", "mag", "zero_fill", "mean_fill", "dropout_mean"}))
      ->capture_default_str();
  tr->add_option("--config", t.config, "Experiment configuration JSON")->check(CLI::ExistingFile);
  tr->add_option("--resume", t.resume, "Continue from this checkpoint");
  tr->add_option("--iterations", t.iterations, "Total optimizer steps")->check(CLI::PositiveNumber);
  tr->add_option("--seed", t.seed, "Training seed");
  tr->add_option("--lambda", t.lambda, "Weight of the logit distillation term");
  tr->add_option("--gamma", t.gamma, "Weight of the feature distillation term");
  tr->add_option("--temperature", t.temperature, "Softmax temperature for distillation");
  tr->add_option("--lr", t.lr, "Adam learning rate");
  tr->add_option("--batch-size", t.batch_size, "Samples per step")->check(CLI::PositiveNumber);
  tr->add_option("--dropout", t.dropout, "Modality dropout probability (dropout_mean arm)");
  tr->add_option("--checkpoint-every", t.checkpoint_every, "Checkpoint interval (0: final only)");
  tr->add_flag("--no-flips", t.no_flips, "Disable flip augmentation");

  SweepArgs s;
  auto* sw = app.add_subcommand("sweep", "Evaluate one checkpoint on every modality subset");
  sw->add_option("--checkpoint", s.checkpoint, "Checkpoint file")->required();
  sw->add_option("--data", s.data, "Dataset directory")->required();
  sw->add_option("--out", s.out, "Report directory")->required();
  sw->add_option("--format", s.format, "Comma-separated formats: csv, md")->capture_default_str();
  sw->add_flag("--plots", s.plots, "Also write a Dice bar plot (PPM)");
  sw->add_option("--jobs", s.jobs, "Worker threads")->check(CLI::Range(1, 256))->capture_default_str();

  TheoryArgs th;
  auto* vt = app.add_subcommand("verify-theory", "Check the entropy bound numerically");
  vt->add_option("--pairs", th.pairs, "Likelihood pairs P_M:P_S to tabulate");
  vt->add_option("-n,--samples", th.n, "Random pairs to sample")->capture_default_str();
  vt->add_option("--seed", th.seed, "Sampling seed")->capture_default_str();
  vt->add_option("--with", th.with, "Checkpoint trained with distillation");
  vt->add_option("--without", th.without, "Checkpoint trained without distillation");
  vt->add_option("--data", th.data, "Dataset directory for the checkpoint comparison");
  vt->add_option("--subset", th.subset, "Modality subset, e.g. T1+FLAIR");
  vt->add_option("--out", th.out, "Directory for theory.json and the run manifest");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "magms: " << e.what() << '\n';
    auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << "run 'magms " << (sub == &app ? "" : sub->get_name() + " ") << "--help' for usage\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(g, args, out, log);
    if (tr->parsed()) return cmd_train(t, args, out, log);
    if (sw->parsed()) return cmd_sweep(s, args, out, log);
    if (vt->parsed()) return cmd_verify_theory(th, args, out, log);
  } catch (const UsageError& e) {
    log.error(e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    log.error(e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace magms::cli
