#include "epsam/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "epsam/errors.hpp"

namespace epsam {

void render_trend_plot(const std::vector<IterationMetrics>& rows,
                       const std::filesystem::path& out_png,
                       int* tick_count);  // plot.cpp

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["run_id"] = run_id;
  j["config_hash"] = config_hash;
  nlohmann::json js = nlohmann::json::object();
  for (const auto& [name, s] : splits)
    js[name] = {{"mean_dice_pct", s.mean_dice_pct},
                {"mean_iou_pct", s.mean_iou_pct},
                {"count", s.count}};
  j["splits"] = std::move(js);
  nlohmann::json jr = nlohmann::json::array();
  for (const auto& r : rows)
    jr.push_back(
        {{"id", r.id}, {"dice_pct", r.dice_pct}, {"iou_pct", r.iou_pct}});
  j["rows"] = std::move(jr);
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.run_id = j.at("run_id").get<std::string>();
  r.config_hash = j.at("config_hash").get<std::string>();
  for (const auto& [name, js] : j.at("splits").items()) {
    SplitSummary s;
    s.mean_dice_pct = js.at("mean_dice_pct").get<double>();
    s.mean_iou_pct = js.at("mean_iou_pct").get<double>();
    s.count = js.at("count").get<int>();
    r.splits[name] = s;
  }
  for (const auto& jr : j.at("rows")) {
    PatchEval p;
    p.id = jr.at("id").get<std::string>();
    p.dice_pct = jr.at("dice_pct").get<double>();
    p.iou_pct = jr.at("iou_pct").get<double>();
    r.rows.push_back(std::move(p));
  }
  return r;
}

EvalReport eval_masks(const std::map<std::string, Mask>& predicted,
                      const std::map<std::string, Mask>& ground_truth,
                      const std::string& split_name) {
  std::set<std::string> only_pred, only_gt;
  for (const auto& [id, m] : predicted)
    if (!ground_truth.count(id)) only_pred.insert(id);
  for (const auto& [id, m] : ground_truth)
    if (!predicted.count(id)) only_gt.insert(id);
  if (!only_pred.empty() || !only_gt.empty()) {
    std::string msg = "eval_masks: patch id mismatch;";
    if (!only_pred.empty()) {
      msg += " only-predicted:";
      for (const auto& id : only_pred) msg += " " + id;
    }
    if (!only_gt.empty()) {
      msg += " only-ground-truth:";
      for (const auto& id : only_gt) msg += " " + id;
    }
    throw ConfigError(msg);
  }

  EvalReport report;
  double dice_sum = 0.0, iou_sum = 0.0;
  for (const auto& [id, pred] : predicted) {
    const Mask& gt = ground_truth.at(id);
    double dice = dice_hard(pred, gt);
    double iou = iou_hard(pred, gt);
    dice_sum += dice;
    iou_sum += iou;
    report.rows.push_back({id, dice * 100.0, iou * 100.0});
  }
  std::sort(report.rows.begin(), report.rows.end(),
            [](const PatchEval& a, const PatchEval& b) { return a.id < b.id; });
  SplitSummary s;
  s.count = static_cast<int>(predicted.size());
  if (s.count > 0) {
    s.mean_dice_pct = dice_sum / s.count * 100.0;
    s.mean_iou_pct = iou_sum / s.count * 100.0;
  }
  report.splits[split_name] = s;
  return report;
}

void write_metrics_csv(const std::vector<IterationMetrics>& rows,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "phase,mean_dice,mean_iou,n_selected\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%d\n", r.phase.c_str(),
                  r.mean_dice, r.mean_iou, r.n_selected);
    out << buf;
  }
}

std::vector<IterationMetrics> read_metrics_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<IterationMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    IterationMetrics m;
    size_t p1 = line.find(',');
    size_t p2 = line.find(',', p1 + 1);
    size_t p3 = line.find(',', p2 + 1);
    if (p1 == std::string::npos || p2 == std::string::npos ||
        p3 == std::string::npos)
      throw IoError("malformed metrics row: " + line);
    m.phase = line.substr(0, p1);
    m.mean_dice = std::stod(line.substr(p1 + 1, p2 - p1 - 1));
    m.mean_iou = std::stod(line.substr(p2 + 1, p3 - p2 - 1));
    m.n_selected = std::stoi(line.substr(p3 + 1));
    rows.push_back(std::move(m));
  }
  return rows;
}

void emit_report(const EvalReport& report,
                 const std::vector<IterationMetrics>& trends,
                 const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  {
    std::ofstream out(out_dir / "report.json");
    if (!out) throw IoError("cannot write report.json");
    out << report.to_json().dump(2) << "\n";
  }

  {
    std::ofstream out(out_dir / "report.txt");
    if (!out) throw IoError("cannot write report.txt");
    out << "run_id      " << report.run_id << "\n";
    out << "config_hash " << report.config_hash << "\n\n";
    char buf[160];
    for (const auto& [name, s] : report.splits) {
      std::snprintf(buf, sizeof(buf),
                    "%-8s mean Dice %6.2f%%  mean IoU %6.2f%%  (n=%d)\n",
                    name.c_str(), s.mean_dice_pct, s.mean_iou_pct, s.count);
      out << buf;
    }
    if (!trends.empty()) {
      out << "\nphase        Dice     IoU      n_selected\n";
      for (const auto& t : trends) {
        std::snprintf(buf, sizeof(buf), "%-12s %-8.2f %-8.2f %d\n",
                      t.phase.c_str(), t.mean_dice * 100.0,
                      t.mean_iou * 100.0, t.n_selected);
        out << buf;
      }
    }
  }

  if (!trends.empty())
    render_trend_plot(trends, out_dir / "trend.png", nullptr);
}

}  // namespace epsam
