// epsam - weakly supervised segmentation pipeline on synthetic data.
// Exit codes: 0 success, 2 configuration error, 3 stage failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "epsam/image_io.hpp"
#include "epsam/pipeline.hpp"
#include "epsam/postproc.hpp"

namespace fs = std::filesystem;
using namespace epsam;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<uint64_t> seed;
  std::optional<int> workers;

  PipelineConfig resolve() const {
    PipelineConfig cfg = config_path.empty()
                             ? PipelineConfig::preset_named("desk")
                             : PipelineConfig::load(config_path);
    if (seed) cfg.apply_master_seed(*seed);
    if (workers) cfg.workers = *workers;
    cfg.validate();
    return cfg;
  }
};

Manifest load_manifest(const std::string& path) {
  return Manifest::load(path);
}

void print_report(const EvalReport& report) {
  for (const auto& [name, s] : report.splits)
    std::printf("%s: mean Dice %.2f%%  mean IoU %.2f%%  (n=%d)\n", name.c_str(),
                s.mean_dice_pct, s.mean_iou_pct, s.count);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EP-SAM style weakly supervised segmentation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  GlobalOpts g;
  app.add_option("--config", g.config_path, "pipeline config JSON");
  app.add_option("--out-dir", g.out_dir, "run directory");
  uint64_t seed_value = 0;
  auto* seed_opt =
      app.add_option("--seed", seed_value, "master seed override");
  int workers_value = 0;
  auto* workers_opt =
      app.add_option("--workers", workers_value, "worker thread count");

  // synth
  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
  std::string synth_out;
  synth->add_option("--out", synth_out, "dataset directory");
  uint64_t synth_seed_v = 0;
  auto* synth_seed_opt = synth->add_option("--seed", synth_seed_v);
  int tr = 0, va = 0, te = 0, sl = 0, sz = 0;
  auto* tr_o = synth->add_option("--train", tr, "train patch count");
  auto* va_o = synth->add_option("--valid", va, "valid patch count");
  auto* te_o = synth->add_option("--test", te, "test patch count");
  auto* sl_o = synth->add_option("--slides", sl, "synthetic slide count");
  auto* sz_o = synth->add_option("--size", sz, "patch side length");

  // train-cam
  auto* train_cam = app.add_subcommand("train-cam", "train the patch classifier");
  std::string tc_manifest, tc_weights;
  train_cam->add_option("--manifest", tc_manifest)->required();
  train_cam->add_option("--weights", tc_weights, "output weights file");

  // extract-cam
  auto* extract = app.add_subcommand("extract-cam",
                                     "rotate-fused Enhanced CAMs per patch");
  std::string ec_manifest, ec_weights, ec_out;
  extract->add_option("--manifest", ec_manifest)->required();
  extract->add_option("--weights", ec_weights)->required();
  extract->add_option("--out-dir", ec_out, "CAM output directory");

  // initmask
  auto* initmask = app.add_subcommand("initmask", "initial masks from CAMs");
  std::string im_manifest, im_cams, im_weights, im_out, im_grid;
  double im_q = -1.0;
  int im_se = -1;
  initmask->add_option("--manifest", im_manifest)->required();
  initmask->add_option("--cams", im_cams, "fused CAM directory");
  initmask->add_option("--weights", im_weights,
                       "classifier weights (compute CAMs on the fly)");
  initmask->add_option("--q", im_q, "quantile");
  initmask->add_option("--se-radius", im_se, "structuring element radius");
  initmask->add_option("--grid-q", im_grid,
                       "comma-separated q values; prints mean train-split Dice "
                       "per value and uses the best");
  initmask->add_option("--out-dir", im_out, "initial mask directory");

  // prompts
  auto* prompts_cmd = app.add_subcommand("prompts", "entropy-based point prompts");
  std::string pr_manifest, pr_cams, pr_out;
  int pr_k_v = 0;
  uint64_t pr_seed_v = 0;
  prompts_cmd->add_option("--manifest", pr_manifest)->required();
  prompts_cmd->add_option("--cams", pr_cams)->required();
  auto* pr_k_o = prompts_cmd->add_option("--k", pr_k_v, "points per patch");
  auto* pr_seed_o = prompts_cmd->add_option("--seed", pr_seed_v);
  prompts_cmd->add_option("--out", pr_out, "output JSONL file");

  // pretrain-decoder
  auto* pretrain = app.add_subcommand("pretrain-decoder",
                                      "preliminary decoder fine-tuning");
  std::string pt_manifest, pt_init, pt_prompts, pt_out;
  pretrain->add_option("--manifest", pt_manifest)->required();
  pretrain->add_option("--init-masks", pt_init)->required();
  pretrain->add_option("--prompts", pt_prompts)->required();
  pretrain->add_option("--out-dir", pt_out, "segmenter weights directory");

  // selftrain
  auto* self_cmd = app.add_subcommand("selftrain", "iterative retraining loop");
  std::string st_manifest, st_init, st_prompts, st_encoder, st_decoder, st_out;
  double st_t = -1.0;
  int st_iters = -1;
  uint64_t st_seed_v = 0;
  self_cmd->add_option("--manifest", st_manifest)->required();
  self_cmd->add_option("--init-masks", st_init)->required();
  self_cmd->add_option("--prompts", st_prompts)->required();
  self_cmd->add_option("--encoder", st_encoder)->required();
  self_cmd->add_option("--decoder", st_decoder, "preliminary decoder")->required();
  self_cmd->add_option("--t", st_t, "IDS selection threshold");
  self_cmd->add_option("--iters", st_iters, "iteration count");
  auto* st_seed_o = self_cmd->add_option("--seed", st_seed_v);
  self_cmd->add_option("--out-dir", st_out, "selftrain output directory");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "classifier-gated inference");
  std::string in_manifest, in_clf, in_encoder, in_decoder, in_prompts,
      in_out, in_split = "test";
  infer_cmd->add_option("--manifest", in_manifest)->required();
  infer_cmd->add_option("--classifier", in_clf)->required();
  infer_cmd->add_option("--encoder", in_encoder)->required();
  infer_cmd->add_option("--decoder", in_decoder)->required();
  infer_cmd->add_option("--prompts", in_prompts)->required();
  infer_cmd->add_option("--split", in_split);
  infer_cmd->add_option("--out-dir", in_out, "prediction directory");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score predictions against GT");
  std::string ev_manifest, ev_pred, ev_out, ev_split = "test", ev_trends;
  eval_cmd->add_option("--manifest", ev_manifest)->required();
  eval_cmd->add_option("--pred-dir", ev_pred)->required();
  eval_cmd->add_option("--split", ev_split);
  eval_cmd->add_option("--trends", ev_trends, "metrics.csv for the trend table");
  eval_cmd->add_option("--out-dir", ev_out, "report directory");

  // run
  auto* run_cmd = app.add_subcommand("run", "full pipeline end-to-end");

  CLI11_PARSE(app, argc, argv);

  if (*seed_opt) g.seed = seed_value;
  if (*workers_opt) g.workers = workers_value;

  try {
    const fs::path out_dir = g.out_dir;

    if (*synth) {
      PipelineConfig cfg = g.resolve();
      if (*synth_seed_opt) cfg.syn.seed = synth_seed_v;
      if (*tr_o) cfg.syn.train = tr;
      if (*va_o) cfg.syn.valid = va;
      if (*te_o) cfg.syn.test = te;
      if (*sl_o) cfg.syn.slides = sl;
      if (*sz_o) cfg.syn.size = sz;
      cfg.validate();
      fs::path dir = synth_out.empty() ? out_dir / "data" : fs::path(synth_out);
      Manifest m = stages::synth(cfg, dir);
      std::printf("wrote %zu patches under %s\n", m.entries.size(),
                  dir.string().c_str());
    } else if (*train_cam) {
      PipelineConfig cfg = g.resolve();
      fs::path wpath = tc_weights.empty() ? out_dir / "cam" / "weights.epw"
                                          : fs::path(tc_weights);
      ClassifierWeights w =
          stages::train_cam(cfg, load_manifest(tc_manifest), wpath);
      std::printf("best validation accuracy %.3f -> %s\n",
                  w.best_val_accuracy, wpath.string().c_str());
    } else if (*extract) {
      PipelineConfig cfg = g.resolve();
      fs::path dir = ec_out.empty() ? out_dir / "cam" / "cams" : fs::path(ec_out);
      stages::extract_cams(cfg, load_manifest(ec_manifest),
                           ClassifierWeights::load(ec_weights), dir);
      std::printf("CAMs written to %s\n", dir.string().c_str());
    } else if (*initmask) {
      PipelineConfig cfg = g.resolve();
      if (im_q >= 0.0) cfg.post.quantile_q = im_q;
      if (im_se >= 1) cfg.post.se_radius = im_se;
      cfg.validate();
      Manifest manifest = load_manifest(im_manifest);
      fs::path cams = im_cams;
      if (im_cams.empty()) {
        if (im_weights.empty())
          throw ConfigError("initmask needs --cams or --weights");
        cams = out_dir / "cam" / "cams";
        stages::extract_cams(cfg, manifest, ClassifierWeights::load(im_weights),
                             cams);
      }
      if (!im_grid.empty()) {
        // grid-search helper: mean Dice of initial masks on the train split
        double best_q = cfg.post.quantile_q, best_dice = -1.0;
        std::stringstream ss(im_grid);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
          double q = std::stod(tok);
          PipelineConfig trial = cfg;
          trial.post.quantile_q = q;
          double dice = 0.0;
          int n = 0;
          for (const auto* e : manifest.split_positives("train")) {
            Image cam = load_map_png16(cams / (e->id + "_cam.png"));
            Mask m = morph_open(quantile_threshold(cam, q),
                                trial.post.se_radius);
            dice += dice_hard(m, load_ground_truth(manifest, *e));
            ++n;
          }
          if (n) dice /= n;
          std::printf("q=%.3f  mean train Dice %.4f\n", q, dice);
          if (dice > best_dice) {
            best_dice = dice;
            best_q = q;
          }
        }
        std::printf("best q=%.3f\n", best_q);
        cfg.post.quantile_q = best_q;
      }
      fs::path dir = im_out.empty() ? out_dir / "initmask" : fs::path(im_out);
      stages::initial_masks(cfg, manifest, cams, dir);
      std::printf("initial masks written to %s\n", dir.string().c_str());
    } else if (*prompts_cmd) {
      PipelineConfig cfg = g.resolve();
      if (*pr_k_o) cfg.pepm.k = pr_k_v;
      if (*pr_seed_o) cfg.pepm.seed = pr_seed_v;
      cfg.validate();
      fs::path file = pr_out.empty() ? out_dir / "prompts" / "prompts.jsonl"
                                     : fs::path(pr_out);
      stages::write_prompts(cfg, load_manifest(pr_manifest), pr_cams, file);
      std::printf("prompts written to %s\n", file.string().c_str());
    } else if (*pretrain) {
      PipelineConfig cfg = g.resolve();
      fs::path dir = pt_out.empty() ? out_dir / "segmenter" : fs::path(pt_out);
      stages::pretrain_decoder(cfg, load_manifest(pt_manifest),
                                           pt_init, pt_prompts, dir);
      std::printf("encoder + preliminary decoder written to %s\n",
                  dir.string().c_str());
    } else if (*self_cmd) {
      PipelineConfig cfg = g.resolve();
      if (st_t > 0.0) cfg.self.threshold = st_t;
      if (st_iters >= 1) cfg.self.iterations = st_iters;
      if (*st_seed_o) cfg.self.seed = st_seed_v;
      cfg.validate();
      fs::path dir = st_out.empty() ? out_dir / "selftrain" : fs::path(st_out);
      SelfTrainResult r = stages::selftrain(
          cfg, load_manifest(st_manifest), st_init, st_prompts,
          EncoderWeights::load(st_encoder), DecoderWeights::load(st_decoder),
          dir);
      for (const auto& m : r.metrics)
        std::printf("%-12s Dice %.2f%%  IoU %.2f%%  selected %d\n",
                    m.phase.c_str(), m.mean_dice * 100.0, m.mean_iou * 100.0,
                    m.n_selected);
    } else if (*infer_cmd) {
      PipelineConfig cfg = g.resolve();
      fs::path dir = in_out.empty() ? out_dir / "infer" : fs::path(in_out);
      stages::infer(cfg, load_manifest(in_manifest), in_split,
                    ClassifierWeights::load(in_clf),
                    EncoderWeights::load(in_encoder),
                    DecoderWeights::load(in_decoder), in_prompts, dir);
      std::printf("predictions written to %s\n", dir.string().c_str());
    } else if (*eval_cmd) {
      PipelineConfig cfg = g.resolve();
      EvalReport report =
          stages::evaluate(cfg, load_manifest(ev_manifest), ev_split, ev_pred);
      std::vector<IterationMetrics> trends;
      if (!ev_trends.empty()) trends = read_metrics_csv(ev_trends);
      fs::path dir = ev_out.empty() ? out_dir / "eval" : fs::path(ev_out);
      emit_report(report, trends, dir);
      print_report(report);
    } else if (*run_cmd) {
      PipelineConfig cfg = g.resolve();
      RunResult result = run_pipeline(cfg, out_dir);
      for (const auto& s : result.stages)
        std::printf("stage %-16s %s\n", s.name.c_str(),
                    s.skipped ? "skipped (up to date)" : "done");
      print_report(result.report);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const StageError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
