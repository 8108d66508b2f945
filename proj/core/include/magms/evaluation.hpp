// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magms/data.hpp"
#include "magms/metrics.hpp"
#include "magms/network.hpp"
#include "magms/types.hpp"

namespace magms {

/// Mean and population standard deviation over the values that are defined.
/// count == 0 means the statistic is undefined.
struct Aggregate {
  double mean = 0.0;
  double std = 0.0;
  int count = 0;

  static Aggregate of(const std::vector<double>& values);
  bool defined() const { return count > 0; }
  friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

struct SweepRow {
  ModalitySubset subset;
  Aggregate mean_dice;
  std::vector<Aggregate> class_dice;  // foreground classes 1..C-1
  Aggregate mean_hd95;
  std::vector<Aggregate> class_hd95;
  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

struct SweepReport {
  std::vector<std::string> modalities;
  int num_classes = 0;
  int subjects = 0;
  std::string arm;
  std::string checkpoint;         // path as given
  std::string checkpoint_digest;  // FNV-1a of the file, hex
  std::string config_hash;
  std::vector<SweepRow> rows;

  const SweepRow& row(const std::string& label) const;
  nlohmann::json to_json() const;
  friend bool operator==(const SweepReport&, const SweepReport&) = default;
};

struct SweepOptions {
  int jobs = 1;
};

/// Dataset samples with their volumes reordered to `set`. Throws ConfigError
/// when a modality of `set` is absent from the dataset.
std::vector<MultiModalSample> align_samples(const Dataset& dataset, const ModalitySet& set,
                                            Split split);

MetricResult evaluate_subset(const SegmentationNetwork& net, const MultiModalSample& sample,
                             const ModalitySubset& subset);

/// Every non-empty subset of the network's modalities, argmax decoding,
/// metrics per subject, mean ± std per row.
SweepReport sweep_network(const SegmentationNetwork& net,
                          const std::vector<MultiModalSample>& subjects,
                          const SweepOptions& options = {});

struct SweepAudit {
  std::uint64_t checkpoint_loads = 0;
  std::uint64_t parameter_updates = 0;
};

/// Loads the checkpoint once and sweeps the test split of `dataset`.
SweepReport sweep_subsets(const std::string& checkpoint, const Dataset& dataset,
                          const SweepOptions& options = {}, SweepAudit* audit = nullptr);

enum class ReportFormat { csv, markdown };

/// "csv" or "md"/"markdown"; anything else throws UsageError.
ReportFormat parse_report_format(const std::string& name);
std::set<ReportFormat> parse_report_formats(const std::string& comma_list);

std::string render_csv(const SweepReport& report);
std::string render_markdown(const SweepReport& report);

/// Binary PPM bar chart of mean foreground Dice, one bar per subset.
std::string render_dice_plot(const SweepReport& report);

/// Writes report.csv / report.md (and plot_dice.ppm when `plots`) into
/// `directory`. Returns the written paths.
std::vector<std::string> render_report(const SweepReport& report,
                                       const std::set<ReportFormat>& formats,
                                       const std::string& directory, bool plots = false);

}  // namespace magms
