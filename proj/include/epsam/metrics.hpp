#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "epsam/image.hpp"
#include "epsam/selftrain.hpp"

namespace epsam {

struct PatchEval {
  std::string id;
  double dice_pct = 0.0;
  double iou_pct = 0.0;
  bool operator==(const PatchEval&) const = default;
};

struct SplitSummary {
  double mean_dice_pct = 0.0;
  double mean_iou_pct = 0.0;
  int count = 0;
  bool operator==(const SplitSummary&) const = default;
};

struct EvalReport {
  std::string run_id;
  std::string config_hash;
  std::map<std::string, SplitSummary> splits;
  std::vector<PatchEval> rows;  // sorted by id
  bool operator==(const EvalReport&) const = default;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

// Per-patch Dice/IoU between matching id sets; both-empty masks score 1.
// Id mismatch raises ConfigError listing the symmetric difference.
EvalReport eval_masks(const std::map<std::string, Mask>& predicted,
                      const std::map<std::string, Mask>& ground_truth,
                      const std::string& split_name = "test");

// Writes report.txt (fixed trend column order: phase, Dice, IoU, n_selected),
// report.json and the Dice/IoU-vs-iteration trend plot.
void emit_report(const EvalReport& report,
                 const std::vector<IterationMetrics>& trends,
                 const std::filesystem::path& out_dir);

void write_metrics_csv(const std::vector<IterationMetrics>& rows,
                       const std::filesystem::path& path);
std::vector<IterationMetrics> read_metrics_csv(const std::filesystem::path& path);

}  // namespace epsam
