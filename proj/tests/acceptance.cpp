// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cli.hpp"
#include "magms/checkpoint.hpp"
#include "magms/evaluation.hpp"
#include "magms/losses.hpp"
#include "magms/metrics.hpp"
#include "magms/theory.hpp"
#include "magms/training.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace magms::acceptance {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string join(const std::vector<double>& v, const char* f = "%.3f") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(f, v[i]);
  return s;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  std::string work;
  // Criterion 6 artifacts, reused by criterion 8.
  std::vector<std::string> c6_checkpoints;
  std::string c6_data;
  double c6_train_seconds = 0.0;
  // Complementary-phantom runs keyed by (arm, seed), shared by 7 and 9.
  std::map<std::pair<std::string, int>, std::string> comp_checkpoints;
  std::map<int, std::string> comp_data;
};

std::span<double> flat(TensorD& t) { return t.values(); }

// ---------------------------------------------------------------------------

Outcome gradient_suite(Context&) {
  const auto t0 = Clock::now();
  constexpr int kInstances = 25;
  constexpr double kTol = 1e-4;
  std::map<std::string, double> worst;
  std::map<std::string, int> count;
  Rng rng(101);
  for (int i = 0; i < kInstances; ++i) {
    auto in = testing::random_mag_instance(rng, 1 + static_cast<int>(rng.below(4)), true);
    auto& o = in.outputs;
    const auto& w = in.weights;

    TensorD logits = o.fused_logits, g;
    dice_ce(in.labels, logits, w.dice_epsilon, &g);
    worst["dice_ce"] = std::max(worst["dice_ce"], testing::max_gradient_error(
        [&] { return dice_ce(in.labels, logits, w.dice_epsilon); }, flat(logits), g.values()));
    ++count["dice_ce"];

    const TensorD teacher = o.fused_logits;
    TensorD student = o.modality_logits[0];
    pixel_kl(teacher, student, w.temperature, &g);
    worst["pixel_kl"] = std::max(worst["pixel_kl"], testing::max_gradient_error(
        [&] { return pixel_kl(teacher, student, w.temperature); }, flat(student), g.values()));
    ++count["pixel_kl"];

    auto sb = o.modality_bundles[0];
    FeatureBundleD gb;
    feature_l2(sb, o.fused_bundle, &gb);
    for (std::size_t l = 0; l < sb.levels.size(); ++l) {
      worst["feature_l2"] = std::max(worst["feature_l2"], testing::max_gradient_error(
          [&] { return feature_l2(sb, o.fused_bundle); }, flat(sb.levels[l]), gb.levels[l].values()));
    }
    ++count["feature_l2"];

    // Teacher held fixed; its value equals mag_loss on the same outputs.
    const TensorD t_logits = o.fused_logits;
    const FeatureBundleD t_bundle = o.fused_bundle;
    auto f = [&] { return mag_loss_with_teacher(in.labels, o, t_logits, t_bundle, w).total; };
    MagLossGrads mg;
    const double total = mag_loss_with_teacher(in.labels, o, t_logits, t_bundle, w, &mg).total;
    double e = testing::relative_error(total, mag_loss(in.labels, o, w).total);
    e = std::max(e, testing::max_gradient_error(f, flat(o.fused_logits), mg.fused_logits.values()));
    for (std::size_t m = 0; m < o.modality_logits.size(); ++m) {
      e = std::max(e, testing::max_gradient_error(f, flat(o.modality_logits[m]),
                                                  mg.modality_logits[m].values()));
      for (std::size_t l = 0; l < o.modality_bundles[m].levels.size(); ++l) {
        e = std::max(e, testing::max_gradient_error(f, flat(o.modality_bundles[m].levels[l]),
                                                    mg.modality_bundles[m].levels[l].values()));
      }
    }
    worst["mag_loss"] = std::max(worst["mag_loss"], e);
    ++count["mag_loss"];
  }
  const double secs = seconds_since(t0);
  bool pass = secs < 60.0;
  std::string detail;
  for (const auto& [name, err] : worst) {
    pass = pass && err < kTol && count[name] >= 20;
    detail += name + " " + fmt("%.1e", err) + " (" + std::to_string(count[name]) + "), ";
  }
  return {pass, "worst relative error: " + detail + "tolerance 1e-4, " + fmt("%.1f s", secs)};
}

Outcome fusion_invariants(Context&) {
  const auto t0 = Clock::now();
  auto config = testing::small_config(4, 3, 16);
  const auto ds = testing::small_dataset(config, 3, 102);
  MagModel model(config, 11);
  int checks = 0;
  bool pass = true;
  for (const auto& sample : ds.subjects) {
    std::vector<FeatureBundle> bundles;
    for (const auto& v : sample.volumes) bundles.push_back(model.encode(v));
    for (const auto& b : bundles) {
      pass = pass && fuse(std::span(&b, 1)) == b;
      ++checks;
    }
    const auto reference = fuse(bundles);
    auto permuted = bundles;
    const auto by_sources = [](const auto& a, const auto& b) { return a.sources < b.sources; };
    std::sort(permuted.begin(), permuted.end(), by_sources);
    do {
      pass = pass && fuse(permuted) == reference;
      ++checks;
    } while (std::next_permutation(permuted.begin(), permuted.end(), by_sources));
    const auto all = model.forward_all(sample);
    pass = pass && model.forward_subset(sample, ModalitySubset::all(config.modalities)) ==
                       all.fused_logits;
    ++checks;
  }
  const double secs = seconds_since(t0);
  pass = pass && secs < 60.0;
  return {pass, std::to_string(checks) +
                    " exact checks (singleton identity, all 24 orderings of 4 bundles, "
                    "forward_subset(M) against the fused branch), " + fmt("%.1f s", secs)};
}

Outcome loss_decomposition(Context&) {
  Rng rng(103);
  double worst = 0.0;
  bool collapse = true;
  for (int i = 0; i < 50; ++i) {
    const int M = 1 + static_cast<int>(rng.below(5));
    const auto in = testing::random_mag_instance(rng, M, true);
    const auto& o = in.outputs;
    const auto& w = in.weights;
    const auto b = mag_loss(in.labels, o, w);
    double expected = dice_ce(in.labels, o.fused_logits, w.dice_epsilon);
    for (int m = 0; m < M; ++m) {
      const auto k = static_cast<std::size_t>(m);
      expected += dice_ce(in.labels, o.modality_logits[k], w.dice_epsilon) +
                  w.lambda_kl * pixel_kl(o.fused_logits, o.modality_logits[k], w.temperature) +
                  w.gamma_l2 * feature_l2(o.modality_bundles[k], o.fused_bundle);
    }
    worst = std::max(worst, testing::relative_error(b.total, expected));

    auto zero = w;
    zero.lambda_kl = 0.0;
    zero.gamma_l2 = 0.0;
    const auto z = mag_loss(in.labels, o, zero);
    double plain = dice_ce(in.labels, o.fused_logits, w.dice_epsilon);
    for (int m = 0; m < M; ++m) {
      plain += dice_ce(in.labels, o.modality_logits[static_cast<std::size_t>(m)], w.dice_epsilon);
    }
    collapse = collapse && z.total == plain;
  }
  return {worst < 1e-6 && collapse,
          "50 instances, worst relative error " + fmt("%.1e", worst) +
              " (tolerance 1e-6); zero weights collapse to fused + per-modality dice-CE " +
              (collapse ? "exactly" : "NOT exactly")};
}

Outcome metric_oracles(Context&) {
  const auto t0 = Clock::now();
  Rng rng(104);
  int dice_mismatch = 0, hd_defined = 0, hd_mismatch = 0;
  double hd_worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto in = testing::random_metric_instance(rng);
    const auto dice = dice_score(in.pred, in.gt, 3);
    for (int c = 0; c < 3; ++c) {
      if (dice[static_cast<std::size_t>(c)] != testing::oracle_dice(in.pred, in.gt, c)) ++dice_mismatch;
    }
    for (int c = 1; c < 3; ++c) {
      const auto got = hd95(in.pred, in.gt, c, in.spacing);
      const auto want = testing::oracle_hd95(in.pred, in.gt, c, in.spacing);
      if (got.has_value() != want.has_value()) {
        ++hd_mismatch;
        continue;
      }
      if (!want) continue;
      ++hd_defined;
      hd_worst = std::max(hd_worst, std::abs(*got - *want));
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = dice_mismatch == 0 && hd_mismatch == 0 && hd_worst <= 1e-9 && secs < 120.0;
  return {pass, "100 instances: dice mismatches " + std::to_string(dice_mismatch) +
                    ", hd95 max deviation " + fmt("%.1e", hd_worst) + " mm over " +
                    std::to_string(hd_defined) + " defined cases, definedness mismatches " +
                    std::to_string(hd_mismatch) + ", " + fmt("%.2f s", secs)};
}

Outcome theorem_verifier(Context&) {
  const auto t0 = Clock::now();
  std::vector<BoundCheck> failures;
  const double fraction = sweep_bound(100000, 105, &failures);
  const double secs = seconds_since(t0);
  return {fraction == 1.0 && secs < 10.0,
          "fraction holding " + fmt("%.6f", fraction) + " over 100000 pairs, " +
              std::to_string(failures.size()) + " failures, " + fmt("%.2f s", secs)};
}

// ---------------------------------------------------------------------------

int run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::cerr << "magms " << args.front() << " failed (" << code << "): " << err.str();
  return code;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  return nlohmann::json::parse(in);
}

double all_modality_dice(const nlohmann::json& report) {
  return report.at("rows").back().at("mean_dice").at("mean").get<double>();
}

Outcome end_to_end(Context& ctx) {
  const auto t0 = Clock::now();
  const double cpu0 = cpu_seconds();
  std::vector<double> dice;
  bool rows_ok = true;
  std::string failure;
  for (int seed = 1; seed <= 3; ++seed) {
    const auto dir = ctx.work + "/e2e/seed" + std::to_string(seed);
    fs::remove_all(dir);
    const auto s = std::to_string(seed);
    if (run_cli({"gen-data", "--out", dir + "/data", "--modalities", "4", "--size", "32",
                 "--subjects", "18", "--seed", s}) != 0) {
      return {false, "gen-data failed for seed " + s};
    }
    const auto tt = Clock::now();
    if (run_cli({"train", "--data", dir + "/data", "--out", dir + "/run", "--arm", "magms",
                 "--iterations", "200", "--seed", s}) != 0) {
      return {false, "train failed for seed " + s};
    }
    if (seed == 1) ctx.c6_train_seconds = seconds_since(tt);
    const auto ckpt = dir + "/run/" + checkpoint_filename(200);
    if (run_cli({"sweep", "--checkpoint", ckpt, "--data", dir + "/data", "--out", dir + "/sweep",
                 "--format", "csv,md"}) != 0) {
      return {false, "sweep failed for seed " + s};
    }
    const auto report = read_json(dir + "/sweep/report.json");
    rows_ok = rows_ok && report.at("rows").size() == 15 &&
              report.at("checkpoint").get<std::string>() == ckpt &&
              report.at("rows").back().at("subset").get<std::string>() == "T1+T2+T1c+FLAIR";
    dice.push_back(all_modality_dice(report));
    ctx.c6_checkpoints.push_back(ckpt);
    if (seed == 1) ctx.c6_data = dir + "/data";
  }
  const double secs = seconds_since(t0), cpu = cpu_seconds() - cpu0;
  const double med = median(dice);
  const bool pass = rows_ok && med > 0.80 && secs < 600.0;
  return {pass, "15-row reports from one checkpoint each: " + std::string(rows_ok ? "yes" : "NO") +
                    "; all-modality Dice per seed " + join(dice) + ", median " + fmt("%.3f", med) +
                    " (threshold 0.80); " + fmt("%.0f s", secs) + " wall, " +
                    fmt("%.0f s", cpu) + " CPU (limit 600 s)"};
}

// Trains one arm on the complementary phantom (3 modalities, 4 classes,
// 32^3, 18 subjects) and returns the final checkpoint.
std::string complementary_run(Context& ctx, Arm arm, int seed) {
  const auto key = std::make_pair(std::string(arm_name(arm)), seed);
  if (auto it = ctx.comp_checkpoints.find(key); it != ctx.comp_checkpoints.end()) return it->second;
  const auto root = ctx.work + "/complementary/seed" + std::to_string(seed);
  if (!ctx.comp_data.count(seed)) {
    fs::remove_all(root + "/data");
    auto spec = PhantomSpec::complementary(3, 4);
    spec.seed = static_cast<std::uint64_t>(seed);
    write_dataset(generate_phantom(spec, 18), root + "/data");
    ctx.comp_data[seed] = root + "/data";
  }
  const Dataset ds = read_dataset(ctx.comp_data[seed]);
  ExperimentConfig config;
  config.modalities = ds.modalities;
  config.num_classes = ds.num_classes;
  const auto g = ds.subjects.front().grid_shape();
  config.input_shape = {g.at(0), g.at(1), g.at(2)};
  config.arm = arm;
  if (arm != Arm::magms) {
    config.lambda_kl = 0.0;
    config.gamma_l2 = 0.0;
  }
  config.optimizer.seed = static_cast<std::uint64_t>(seed);
  config.checkpoint_every = 0;
  config.validate();
  const auto run_dir = root + "/" + std::string(arm_name(arm));
  fs::remove_all(run_dir);
  TrainState state(config);
  train(state, ds, config.optimizer.iterations, {.run_dir = run_dir});
  const auto ckpt = run_dir + "/" + checkpoint_filename(config.optimizer.iterations);
  ctx.comp_checkpoints[key] = ckpt;
  return ckpt;
}

double single_modality_dice(const SweepReport& r) {
  double s = 0.0;
  int n = 0;
  for (const auto& row : r.rows) {
    if (row.subset.size() == 1) {
      s += row.mean_dice.mean;
      ++n;
    }
  }
  return s / n;
}

Outcome distillation_mechanism(Context& ctx) {
  const auto t0 = Clock::now();
  std::vector<double> kl_with, kl_without, dice_with, dice_without;
  for (int seed = 1; seed <= 5; ++seed) {
    const auto with = complementary_run(ctx, Arm::magms, seed);
    const auto without = complementary_run(ctx, Arm::mag, seed);
    const Dataset ds = read_dataset(ctx.comp_data[seed]);
    double kw = 0.0, kwo = 0.0;
    for (const auto& m : ds.modalities.names()) {
      const auto c = distillation_tightens_bound(with, without, ds, m);
      kw += c.with.mean_kl / 3.0;
      kwo += c.without.mean_kl / 3.0;
    }
    kl_with.push_back(kw);
    kl_without.push_back(kwo);
    dice_with.push_back(single_modality_dice(sweep_subsets(with, ds)));
    dice_without.push_back(single_modality_dice(sweep_subsets(without, ds)));
  }
  const double mkw = median(kl_with), mkwo = median(kl_without);
  const double mdw = median(dice_with), mdwo = median(dice_without);
  const bool pass = mkw < mkwo && mdw >= mdwo - 0.02;
  return {pass, "held-out KL(fused||single) median " + fmt("%.4f", mkw) + " with vs " +
                    fmt("%.4f", mkwo) + " without distillation (per seed with: " +
                    join(kl_with, "%.4f") + "; without: " + join(kl_without, "%.4f") +
                    "); single-modality Dice median " + fmt("%.3f", mdw) + " vs " +
                    fmt("%.3f", mdwo) + " (non-inferiority margin 0.02); " +
                    fmt("%.0f s", seconds_since(t0))};
}

Outcome efficiency_structure(Context& ctx) {
  if (ctx.c6_checkpoints.empty()) {
    const auto dir = ctx.work + "/efficiency";
    fs::remove_all(dir);
    if (run_cli({"gen-data", "--out", dir + "/data", "--modalities", "4", "--size", "32",
                 "--subjects", "18", "--seed", "1"}) != 0) {
      return {false, "gen-data failed"};
    }
    const auto tt = Clock::now();
    if (run_cli({"train", "--data", dir + "/data", "--out", dir + "/run", "--seed", "1"}) != 0) {
      return {false, "train failed"};
    }
    ctx.c6_train_seconds = seconds_since(tt);
    ctx.c6_checkpoints.push_back(dir + "/run/" + checkpoint_filename(200));
    ctx.c6_data = dir + "/data";
  }
  const Dataset ds = read_dataset(ctx.c6_data);
  SweepAudit audit;
  const auto t0 = Clock::now();
  const auto report = sweep_subsets(ctx.c6_checkpoints.front(), ds, {}, &audit);
  const double sweep_secs = seconds_since(t0);
  const auto state = load_checkpoint(ctx.c6_checkpoints.front());
  bool per_subset_params = false;
  for (const auto& p : state.network->params().all()) {
    per_subset_params = per_subset_params || p.name.find('+') != std::string::npos;
  }
  const bool pass = report.rows.size() == 15 && audit.checkpoint_loads == 1 &&
                    audit.parameter_updates == 0 && !per_subset_params &&
                    sweep_secs < ctx.c6_train_seconds;
  return {pass, std::to_string(report.rows.size()) + " subsets from " +
                    std::to_string(audit.checkpoint_loads) + " checkpoint load, " +
                    std::to_string(audit.parameter_updates) + " parameter updates, " +
                    (per_subset_params ? "has" : "no") + " per-subset parameters; sweep " +
                    fmt("%.1f s", sweep_secs) + " vs one training run " +
                    fmt("%.1f s", ctx.c6_train_seconds)};
}

Outcome baseline_arms(Context& ctx) {
  const auto t0 = Clock::now();
  const std::vector<Arm> arms{Arm::magms, Arm::zero_fill, Arm::mean_fill, Arm::dropout_mean};
  std::map<Arm, std::vector<double>> dice;
  bool schema = true;
  std::string header;
  for (int seed = 1; seed <= 3; ++seed) {
    for (Arm arm : arms) {
      const auto ckpt = complementary_run(ctx, arm, seed);
      const Dataset ds = read_dataset(ctx.comp_data[seed]);
      const auto report = sweep_subsets(ckpt, ds);
      const auto csv = render_csv(report);
      const auto h = csv.substr(0, csv.find('\n'));
      if (header.empty()) header = h;
      schema = schema && h == header && report.rows.size() == 7 && report.arm == arm_name(arm);
      dice[arm].push_back(report.rows.back().mean_dice.mean);
    }
  }
  const double ours = median(dice[Arm::magms]);
  bool pass = schema;
  std::string detail = std::string("identical report schema: ") + (schema ? "yes" : "NO") +
                       "; all-modality Dice median magms " + fmt("%.3f", ours) + " [" +
                       join(dice[Arm::magms]) + "]";
  for (Arm arm : {Arm::zero_fill, Arm::mean_fill, Arm::dropout_mean}) {
    const double m = median(dice[arm]);
    pass = pass && ours >= m - 0.02;
    detail += ", " + std::string(arm_name(arm)) + " " + fmt("%.3f", m) + " [" + join(dice[arm]) + "]";
  }
  return {pass, detail + " (tolerance 0.02); " + fmt("%.0f s", seconds_since(t0))};
}

}  // namespace
}  // namespace magms::acceptance

int main(int argc, char** argv) {
  using namespace magms::acceptance;
  CLI::App app{"Acceptance criteria for the magms toolkit"};
  std::string work = (fs::temp_directory_path() / "magms-acceptance").string();
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory for datasets and runs")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 9))->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome(Context&)>>> criteria{
      {"gradient suite", gradient_suite},
      {"fusion invariants", fusion_invariants},
      {"loss decomposition", loss_decomposition},
      {"metric oracles", metric_oracles},
      {"theorem verifier", theorem_verifier},
      {"end-to-end phantom run", end_to_end},
      {"distillation mechanism", distillation_mechanism},
      {"efficiency structure", efficiency_structure},
      {"baseline arms", baseline_arms},
  };
  Context ctx;
  ctx.work = work;
  fs::create_directories(work);
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  "
              << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
