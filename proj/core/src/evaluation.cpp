// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include "magms/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "magms/checkpoint.hpp"

namespace magms {

namespace fs = std::filesystem;

Aggregate Aggregate::of(const std::vector<double>& values) {
  Aggregate a;
  if (values.empty()) return a;
  a.count = static_cast<int>(values.size());
  double s = 0.0;
  for (double v : values) s += v;
  a.mean = s / a.count;
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(ss / a.count);
  return a;
}

const SweepRow& SweepReport::row(const std::string& label) const {
  for (const auto& r : rows) {
    if (r.subset.label() == label) return r;
  }
  throw LookupError("report has no row '" + label + "'");
}

namespace {

nlohmann::json agg_json(const Aggregate& a) {
  if (!a.defined()) return nullptr;
  return {{"mean", a.mean}, {"std", a.std}, {"count", a.count}};
}

}  // namespace

nlohmann::json SweepReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json cd = nlohmann::json::array(), ch = nlohmann::json::array();
    for (const auto& a : r.class_dice) cd.push_back(agg_json(a));
    for (const auto& a : r.class_hd95) ch.push_back(agg_json(a));
    rows_json.push_back({{"subset", r.subset.label()},
                         {"mean_dice", agg_json(r.mean_dice)},
                         {"class_dice", cd},
                         {"mean_hd95", agg_json(r.mean_hd95)},
                         {"class_hd95", ch}});
  }
  return {{"modalities", modalities},
          {"num_classes", num_classes},
          {"subjects", subjects},
          {"arm", arm},
          {"checkpoint", checkpoint},
          {"checkpoint_digest", checkpoint_digest},
          {"config_hash", config_hash},
          {"rows", rows_json}};
}

std::vector<MultiModalSample> align_samples(const Dataset& dataset, const ModalitySet& set,
                                            Split split) {
  std::vector<int> source;
  for (const auto& mod : set) {
    int found = -1;
    for (const auto& have : dataset.modalities) {
      if (have.name == mod.name) found = have.index;
    }
    if (found < 0) {
      throw ConfigError("dataset lacks modality '" + mod.name + "' required by the model");
    }
    source.push_back(found);
  }
  std::vector<MultiModalSample> out;
  for (const auto* s : dataset.subset(split)) {
    MultiModalSample a;
    a.labels = s->labels;
    a.subject_id = s->subject_id;
    for (std::size_t k = 0; k < source.size(); ++k) {
      ModalityVolume v = s->volume(source[k]);
      v.modality = set[static_cast<int>(k)];
      a.volumes.push_back(std::move(v));
    }
    out.push_back(std::move(a));
  }
  return out;
}

MetricResult evaluate_subset(const SegmentationNetwork& net, const MultiModalSample& sample,
                             const ModalitySubset& subset) {
  const auto pred = argmax_labels(net.predict(sample, subset));
  return evaluate_prediction(pred, sample.labels.classes, net.config().num_classes,
                             sample.spacing());
}

SweepReport sweep_network(const SegmentationNetwork& net,
                          const std::vector<MultiModalSample>& subjects,
                          const SweepOptions& options) {
  const auto& cfg = net.config();
  if (subjects.empty()) throw PreconditionError("sweep needs at least one test subject");
  if (options.jobs < 1) throw ConfigError("--jobs must be at least 1");
  for (const auto& s : subjects) s.validate(cfg.modalities);
  const auto subsets = enumerate_subsets(cfg.modalities);
  const std::size_t n_sub = subsets.size(), n_subj = subjects.size();
  std::vector<MetricResult> results(n_sub * n_subj);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < results.size(); t = next++) {
      results[t] = evaluate_subset(net, subjects[t % n_subj], subsets[t / n_subj]);
    }
  };
  const int jobs = std::min<int>(options.jobs, static_cast<int>(results.size()));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    std::exception_ptr failure;
    std::mutex failure_mu;
    for (int j = 0; j < jobs; ++j) {
      pool.emplace_back([&] {
        try {
          worker();
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
          next = results.size();
        }
      });
    }
    pool.clear();
    if (failure) std::rethrow_exception(failure);
  }

  SweepReport report;
  report.modalities = cfg.modalities.names();
  report.num_classes = cfg.num_classes;
  report.subjects = static_cast<int>(n_subj);
  report.arm = std::string(arm_name(cfg.arm));
  report.config_hash = hex64(cfg.hash());
  const int fg = cfg.num_classes - 1;
  for (std::size_t s = 0; s < n_sub; ++s) {
    SweepRow row{subsets[s], {}, {}, {}, {}};
    std::vector<double> md, mh;
    std::vector<std::vector<double>> cd(static_cast<std::size_t>(fg)), ch(cd);
    for (std::size_t j = 0; j < n_subj; ++j) {
      const auto& r = results[s * n_subj + j];
      md.push_back(r.mean_dice);
      if (r.mean_hd95) mh.push_back(*r.mean_hd95);
      for (int c = 0; c < fg; ++c) {
        const auto k = static_cast<std::size_t>(c);
        cd[k].push_back(r.per_class_dice[k]);
        if (r.per_class_hd95[k]) ch[k].push_back(*r.per_class_hd95[k]);
      }
    }
    row.mean_dice = Aggregate::of(md);
    row.mean_hd95 = Aggregate::of(mh);
    for (int c = 0; c < fg; ++c) {
      row.class_dice.push_back(Aggregate::of(cd[static_cast<std::size_t>(c)]));
      row.class_hd95.push_back(Aggregate::of(ch[static_cast<std::size_t>(c)]));
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

SweepReport sweep_subsets(const std::string& checkpoint, const Dataset& dataset,
                          const SweepOptions& options, SweepAudit* audit) {
  const auto loads_before = checkpoint_load_count();
  TrainState state = load_checkpoint(checkpoint);
  const auto updates_before = state.network->params().update_count();
  const auto subjects = align_samples(dataset, state.config.modalities, Split::test);
  SweepReport report = sweep_network(*state.network, subjects, options);
  report.checkpoint = checkpoint;
  report.checkpoint_digest = hex64(file_digest(checkpoint));
  if (audit) {
    audit->checkpoint_loads = checkpoint_load_count() - loads_before;
    audit->parameter_updates = state.network->params().update_count() - updates_before;
  }
  return report;
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "csv") return ReportFormat::csv;
  if (name == "md" || name == "markdown") return ReportFormat::markdown;
  throw UsageError("unknown report format '" + name + "' (expected csv or md)");
}

std::set<ReportFormat> parse_report_formats(const std::string& comma_list) {
  std::set<ReportFormat> out;
  std::stringstream ss(comma_list);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(parse_report_format(item));
  if (out.empty()) throw UsageError("no report format given");
  return out;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void csv_line(std::ostringstream& os, const SweepReport& rep, const SweepRow& row,
              const std::string& metric, const Aggregate& a) {
  os << row.subset.label();
  for (int m = 0; m < static_cast<int>(rep.modalities.size()); ++m) {
    os << ',' << (row.subset.contains(m) ? 1 : 0);
  }
  os << ',' << metric << ',';
  if (a.defined()) os << fixed(a.mean, 6) << ',' << fixed(a.std, 6);
  else os << ',';
  os << ',' << a.count << '\n';
}

std::string pm(const Aggregate& a) {
  if (!a.defined()) return "n/a";
  return fixed(a.mean, 3) + " ± " + fixed(a.std, 3);
}

}  // namespace

std::string render_csv(const SweepReport& report) {
  std::ostringstream os;
  os << "subset";
  for (const auto& m : report.modalities) os << ',' << m;
  os << ",metric,mean,std,count\n";
  for (const auto& row : report.rows) {
    csv_line(os, report, row, "mean_dice", row.mean_dice);
    for (std::size_t c = 0; c < row.class_dice.size(); ++c) {
      csv_line(os, report, row, "dice_class" + std::to_string(c + 1), row.class_dice[c]);
    }
    csv_line(os, report, row, "mean_hd95_mm", row.mean_hd95);
    for (std::size_t c = 0; c < row.class_hd95.size(); ++c) {
      csv_line(os, report, row, "hd95_mm_class" + std::to_string(c + 1), row.class_hd95[c]);
    }
  }
  return os.str();
}

std::string render_markdown(const SweepReport& report) {
  std::ostringstream os;
  os << "# Subset sweep (" << report.arm << ")\n\n";
  os << "Checkpoint `" << report.checkpoint << "` (digest `" << report.checkpoint_digest
     << "`), config hash `" << report.config_hash << "`.\n\n";
  os << "Mean ± standard deviation over " << report.subjects
     << " test subjects. • available, ○ missing. HD95 in mm.\n\n";
  os << '|';
  for (const auto& m : report.modalities) os << ' ' << m << " |";
  os << " Dice |";
  for (int c = 1; c < report.num_classes; ++c) os << " Dice c" << c << " |";
  os << " HD95 |\n|";
  for (std::size_t m = 0; m < report.modalities.size(); ++m) os << ":-:|";
  for (int c = 0; c < report.num_classes + 1; ++c) os << "--:|";
  os << '\n';
  for (const auto& row : report.rows) {
    os << '|';
    for (int m = 0; m < static_cast<int>(report.modalities.size()); ++m) {
      os << ' ' << (row.subset.contains(m) ? "•" : "○") << " |";
    }
    os << ' ' << pm(row.mean_dice) << " |";
    for (const auto& a : row.class_dice) os << ' ' << pm(a) << " |";
    os << ' ' << pm(row.mean_hd95) << " |\n";
  }
  return os.str();
}

std::string render_dice_plot(const SweepReport& report) {
  constexpr int kBar = 16, kGap = 8, kMargin = 12, kPlotH = 200;
  const int n = static_cast<int>(report.rows.size());
  const int W = 2 * kMargin + n * kBar + std::max(0, n - 1) * kGap;
  const int H = kPlotH + 2 * kMargin;
  std::vector<unsigned char> px(static_cast<std::size_t>(W * H * 3), 255);
  auto set = [&](int x, int y, unsigned char r, unsigned char g, unsigned char b) {
    const auto k = static_cast<std::size_t>((y * W + x) * 3);
    px[k] = r;
    px[k + 1] = g;
    px[k + 2] = b;
  };
  const int base = kMargin + kPlotH;
  for (int x = 0; x < W; ++x) set(x, base, 0, 0, 0);
  for (int i = 0; i < n; ++i) {
    const auto& a = report.rows[static_cast<std::size_t>(i)].mean_dice;
    const double v = a.defined() ? std::clamp(a.mean, 0.0, 1.0) : 0.0;
    const int h = static_cast<int>(std::lround(v * kPlotH));
    const int x0 = kMargin + i * (kBar + kGap);
    for (int y = base - h; y < base; ++y) {
      for (int x = x0; x < x0 + kBar; ++x) set(x, y, 40, 90, 160);
    }
  }
  std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  out.append(reinterpret_cast<const char*>(px.data()), px.size());
  return out;
}

namespace {

void write_file(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw Error("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

}  // namespace

std::vector<std::string> render_report(const SweepReport& report,
                                       const std::set<ReportFormat>& formats,
                                       const std::string& directory, bool plots) {
  fs::create_directories(directory);
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    const auto p = fs::path(directory) / name;
    write_file(p, content);
    written.push_back(p.string());
  };
  if (formats.count(ReportFormat::csv)) emit("report.csv", render_csv(report));
  if (formats.count(ReportFormat::markdown)) emit("report.md", render_markdown(report));
  emit("report.json", report.to_json().dump(2) + "\n");
  if (plots) emit("plot_dice.ppm", render_dice_plot(report));
  return written;
}

}  // namespace magms
