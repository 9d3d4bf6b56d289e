#include "epsam/pipeline.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "epsam/errors.hpp"
#include "epsam/hash.hpp"
#include "epsam/image_io.hpp"
#include "epsam/parallel.hpp"
#include "epsam/pepm.hpp"
#include "epsam/postproc.hpp"

namespace epsam {

namespace stages {

Manifest synth(const PipelineConfig& cfg, const std::filesystem::path& data_dir) {
  return build_dataset(cfg.dataset_params(), cfg.syn.seed, data_dir,
                       cfg.workers);
}

ClassifierWeights train_cam(const PipelineConfig& cfg, const Manifest& manifest,
                            const std::filesystem::path& weights_path) {
  ClassifierWeights w = train_classifier(manifest, cfg.adl_config(),
                                         cfg.cam_hyper(), cfg.cam.freq_cut_ratio,
                                         cfg.workers);
  std::filesystem::create_directories(weights_path.parent_path());
  w.save(weights_path);
  return w;
}

void extract_cams(const PipelineConfig& cfg, const Manifest& manifest,
                  const ClassifierWeights& weights,
                  const std::filesystem::path& cams_dir) {
  std::filesystem::create_directories(cams_dir);
  const auto& entries = manifest.entries;
  std::vector<Image> cams(entries.size());
  parallel_for(static_cast<int>(entries.size()), cfg.workers, [&](int i) {
    Patch patch = load_patch(manifest, entries[i]);
    cams[i] = rotate_fuse(
        [&weights](const Patch& p) {
          return extract_cam(weights, p, extract_evp(p, weights.freq_cut_ratio));
        },
        patch);
  });
  for (size_t i = 0; i < entries.size(); ++i)
    save_map_png16(cams_dir / (entries[i].id + "_cam.png"), cams[i]);
}

void initial_masks(const PipelineConfig& cfg, const Manifest& manifest,
                   const std::filesystem::path& cams_dir,
                   const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<const ManifestEntry*> positives;
  for (const auto& e : manifest.entries)
    if (e.label == Label::positive) positives.push_back(&e);
  const PostprocConfig pc = cfg.post_config();
  std::vector<Mask> masks(positives.size());
  parallel_for(static_cast<int>(positives.size()), cfg.workers, [&](int i) {
    Image cam = load_map_png16(cams_dir / (positives[i]->id + "_cam.png"));
    masks[i] = morph_open(quantile_threshold(cam, pc.quantile_q), pc.se_radius);
  });
  for (size_t i = 0; i < positives.size(); ++i)
    save_mask_png(out_dir / (positives[i]->id + "_init.png"), masks[i]);
}

void write_prompts(const PipelineConfig& cfg, const Manifest& manifest,
                   const std::filesystem::path& cams_dir,
                   const std::filesystem::path& out_file) {
  std::filesystem::create_directories(out_file.parent_path());
  const auto& entries = manifest.entries;
  std::vector<std::string> lines(entries.size());
  parallel_for(static_cast<int>(entries.size()), cfg.workers, [&](int i) {
    Image cam = load_map_png16(cams_dir / (entries[i].id + "_cam.png"));
    EntropyMap entropy = entropy_map(cam);
    if (entropy.degenerate) return;  // skipped patch: no prompt row
    Rng rng(mix_seed(cfg.pepm.seed, fnv1a64(entries[i].id)));
    PointPromptSet prompts = sample_points(entropy, cfg.pepm.k, rng);
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : prompts.points)
      points.push_back({p.row, p.col});
    nlohmann::json row = {{"patch_id", entries[i].id},
                          {"points", std::move(points)}};
    lines[i] = row.dump();
  });
  std::ofstream out(out_file);
  if (!out) throw IoError("cannot write " + out_file.string());
  for (const auto& line : lines)
    if (!line.empty()) out << line << "\n";
}

std::map<std::string, PointPromptSet> load_prompts(
    const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read prompts file: " + file.string());
  std::map<std::string, PointPromptSet> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    PointPromptSet set;
    for (const auto& p : j.at("points"))
      set.points.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
    out[j.at("patch_id").get<std::string>()] = std::move(set);
  }
  return out;
}

namespace {

SelfTrainInputs gather_pool(const Manifest& manifest,
                            const std::filesystem::path& initmask_dir,
                            const std::map<std::string, PointPromptSet>& prompts) {
  SelfTrainInputs inputs;
  for (const auto* e : manifest.split_positives("train")) {
    auto it = prompts.find(e->id);
    if (it == prompts.end()) continue;  // degenerate CAM: patch is skipped
    inputs.patches.push_back(load_patch(manifest, *e));
    inputs.initial_masks[e->id] =
        load_mask_png(initmask_dir / (e->id + "_init.png"));
    inputs.prompts[e->id] = it->second;
    inputs.ground_truth[e->id] = load_ground_truth(manifest, *e);
  }
  if (inputs.patches.empty())
    throw ConfigError("no usable positive training patches (all degenerate?)");
  return inputs;
}

}  // namespace

PretrainOutputs pretrain_decoder(const PipelineConfig& cfg,
                                 const Manifest& manifest,
                                 const std::filesystem::path& initmask_dir,
                                 const std::filesystem::path& prompts_file,
                                 const std::filesystem::path& seg_dir) {
  std::filesystem::create_directories(seg_dir);
  PretrainOutputs out;
  out.encoder = init_encoder(cfg.seg.encoder_seed, cfg.seg.embed_dim);
  out.encoder.save(seg_dir / "encoder.epw");

  auto prompts = load_prompts(prompts_file);
  SelfTrainInputs pool = gather_pool(manifest, initmask_dir, prompts);

  std::vector<FinetunePair> pairs(pool.patches.size());
  parallel_for(static_cast<int>(pool.patches.size()), cfg.workers, [&](int i) {
    const Patch& p = pool.patches[i];
    pairs[i] = {p.id, encode_image(p, out.encoder), pool.prompts.at(p.id),
                pool.initial_masks.at(p.id)};
  });
  out.decoder = finetune_decoder(pairs,
                                 init_decoder(cfg.seg.seed, cfg.seg.embed_dim),
                                 cfg.decoder_hyper(), cfg.workers);
  out.decoder.save(seg_dir / "decoder_pre.epw");
  return out;
}

SelfTrainResult selftrain(const PipelineConfig& cfg, const Manifest& manifest,
                          const std::filesystem::path& initmask_dir,
                          const std::filesystem::path& prompts_file,
                          const EncoderWeights& encoder,
                          const DecoderWeights& preliminary,
                          const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto prompts = load_prompts(prompts_file);
  SelfTrainInputs pool = gather_pool(manifest, initmask_dir, prompts);
  SelfTrainResult result = iterate(pool, encoder, cfg.retrain_config(),
                                   preliminary, cfg.workers, &out_dir);
  result.decoder.save(out_dir / "decoder_final.epw");
  write_metrics_csv(result.metrics, out_dir / "metrics.csv");
  return result;
}

void infer(const PipelineConfig& cfg, const Manifest& manifest,
           const std::string& split, const ClassifierWeights& classifier,
           const EncoderWeights& encoder, const DecoderWeights& decoder,
           const std::filesystem::path& prompts_file,
           const std::filesystem::path& pred_dir) {
  std::filesystem::create_directories(pred_dir);
  auto prompts = load_prompts(prompts_file);
  auto entries = manifest.split(split);
  std::vector<Mask> preds(entries.size());
  parallel_for(static_cast<int>(entries.size()), cfg.workers, [&](int i) {
    const ManifestEntry& e = *entries[i];
    Patch patch = load_patch(manifest, e);
    const int s = patch.size();
    Image evp = extract_evp(patch, classifier.freq_cut_ratio);
    const double logit = classify_logit(classifier, patch, evp);
    // classifier gates the segmenter (negative prediction -> empty mask)
    auto prompt_it = prompts.find(e.id);
    if (logit < 0.0 || prompt_it == prompts.end()) {
      preds[i] = Mask(s, s, 0);
      return;
    }
    Tensor embedding = encode_image(patch, encoder);
    PredictedMask pm = predict_mask(embedding, prompt_it->second, decoder,
                                    cfg.seg.heat_sigma, e.id);
    preds[i] = std::move(pm.mask);
  });
  for (size_t i = 0; i < entries.size(); ++i)
    save_mask_png(pred_dir / (entries[i]->id + "_pred.png"), preds[i]);
}

EvalReport evaluate(const PipelineConfig& cfg, const Manifest& manifest,
                    const std::string& split,
                    const std::filesystem::path& pred_dir) {
  std::map<std::string, Mask> predicted, ground_truth;
  for (const auto* e : manifest.split(split)) {
    predicted[e->id] = load_mask_png(pred_dir / (e->id + "_pred.png"));
    ground_truth[e->id] = load_ground_truth(manifest, *e);
  }
  EvalReport report = eval_masks(predicted, ground_truth, split);
  report.run_id = cfg.run_id();
  report.config_hash = cfg.hash();
  return report;
}

}  // namespace stages

namespace {

struct StageRunner {
  std::filesystem::path out_dir;
  std::vector<StageOutcome> outcomes;

  std::filesystem::path manifest_path(const std::string& name) const {
    return out_dir / "stages" / (name + ".json");
  }

  bool is_done(const std::string& name, const std::string& inputs_hash,
               const std::vector<std::filesystem::path>& outputs) const {
    std::ifstream in(manifest_path(name));
    if (!in) return false;
    nlohmann::json j;
    try {
      in >> j;
    } catch (...) {
      return false;
    }
    if (!j.contains("inputs_hash") ||
        j.at("inputs_hash").get<std::string>() != inputs_hash)
      return false;
    for (const auto& p : outputs)
      if (!std::filesystem::exists(p)) return false;
    return true;
  }

  // Runs fn unless this stage already completed with the same inputs.
  bool run(const std::string& name, const std::string& inputs_hash,
           const std::vector<std::filesystem::path>& outputs,
           const std::function<void()>& fn) {
    if (is_done(name, inputs_hash, outputs)) {
      outcomes.push_back({name, true});
      return false;
    }
    try {
      fn();
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
    for (const auto& p : outputs)
      if (!std::filesystem::exists(p))
        throw StageError(name, "expected output missing: " + p.string());
    nlohmann::json j;
    j["stage"] = name;
    j["inputs_hash"] = inputs_hash;
    nlohmann::json jout = nlohmann::json::array();
    for (const auto& p : outputs)
      jout.push_back(std::filesystem::relative(p, out_dir).string());
    j["outputs"] = std::move(jout);
    std::filesystem::create_directories(out_dir / "stages");
    std::ofstream out(manifest_path(name));
    out << j.dump(2) << "\n";
    outcomes.push_back({name, false});
    return true;
  }
};

std::string chain_hash(const std::string& parent, const nlohmann::json& stage_cfg) {
  return hex64(fnv1a64(stage_cfg.dump(), fnv1a64(parent)));
}

}  // namespace

RunResult run_pipeline(const PipelineConfig& cfg,
                       const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  cfg.save(out_dir / "config.json");

  const nlohmann::json cj = cfg.to_json();
  const std::string h_synth = chain_hash("", cj.at("syndata"));
  const std::string h_cam = chain_hash(h_synth, cj.at("cam"));
  const std::string h_extract = chain_hash(h_cam, "extract");
  const std::string h_init = chain_hash(h_extract, cj.at("postproc"));
  const std::string h_prompts = chain_hash(h_extract, cj.at("pepm"));
  const std::string h_pretrain =
      chain_hash(h_init + h_prompts, cj.at("segmenter"));
  const std::string h_self = chain_hash(h_pretrain, cj.at("selftrain"));
  const std::string h_infer = chain_hash(h_self, "infer");
  const std::string h_eval = chain_hash(h_infer, "eval");

  const auto data_dir = out_dir / "data";
  const auto cams_dir = out_dir / "cam" / "cams";
  const auto clf_path = out_dir / "cam" / "weights.epw";
  const auto init_dir = out_dir / "initmask";
  const auto prompts_file = out_dir / "prompts" / "prompts.jsonl";
  const auto seg_dir = out_dir / "segmenter";
  const auto self_dir = out_dir / "selftrain";
  const auto pred_dir = out_dir / "infer";
  const auto eval_dir = out_dir / "eval";

  StageRunner runner{out_dir, {}};

  runner.run("synth", h_synth, {data_dir / "manifest.json"},
             [&] { stages::synth(cfg, data_dir); });
  Manifest manifest = Manifest::load(data_dir / "manifest.json");

  runner.run("train-cam", h_cam, {clf_path},
             [&] { stages::train_cam(cfg, manifest, clf_path); });
  ClassifierWeights classifier = ClassifierWeights::load(clf_path);

  {
    std::vector<std::filesystem::path> outs;
    for (const auto& e : manifest.entries)
      outs.push_back(cams_dir / (e.id + "_cam.png"));
    runner.run("extract-cam", h_extract, outs,
               [&] { stages::extract_cams(cfg, manifest, classifier, cams_dir); });
  }
  {
    std::vector<std::filesystem::path> outs;
    for (const auto& e : manifest.entries)
      if (e.label == Label::positive)
        outs.push_back(init_dir / (e.id + "_init.png"));
    runner.run("initmask", h_init, outs,
               [&] { stages::initial_masks(cfg, manifest, cams_dir, init_dir); });
  }
  runner.run("prompts", h_prompts, {prompts_file},
             [&] { stages::write_prompts(cfg, manifest, cams_dir, prompts_file); });

  runner.run("pretrain-decoder", h_pretrain,
             {seg_dir / "encoder.epw", seg_dir / "decoder_pre.epw"}, [&] {
               stages::pretrain_decoder(cfg, manifest, init_dir, prompts_file,
                                        seg_dir);
             });

  runner.run("selftrain", h_self,
             {self_dir / "decoder_final.epw", self_dir / "metrics.csv"}, [&] {
               EncoderWeights encoder =
                   EncoderWeights::load(seg_dir / "encoder.epw");
               DecoderWeights preliminary =
                   DecoderWeights::load(seg_dir / "decoder_pre.epw");
               stages::selftrain(cfg, manifest, init_dir, prompts_file, encoder,
                                 preliminary, self_dir);
             });

  {
    std::vector<std::filesystem::path> outs;
    for (const auto* e : manifest.split("test"))
      outs.push_back(pred_dir / (e->id + "_pred.png"));
    runner.run("infer", h_infer, outs, [&] {
      EncoderWeights encoder = EncoderWeights::load(seg_dir / "encoder.epw");
      DecoderWeights decoder =
          DecoderWeights::load(self_dir / "decoder_final.epw");
      stages::infer(cfg, manifest, "test", classifier, encoder, decoder,
                    prompts_file, pred_dir);
    });
  }

  runner.run("eval", h_eval,
             {eval_dir / "report.json", eval_dir / "report.txt",
              eval_dir / "trend.png"},
             [&] {
               EvalReport report =
                   stages::evaluate(cfg, manifest, "test", pred_dir);
               auto trends = read_metrics_csv(self_dir / "metrics.csv");
               emit_report(report, trends, eval_dir);
             });

  RunResult result;
  {
    std::ifstream in(eval_dir / "report.json");
    nlohmann::json j;
    in >> j;
    result.report = EvalReport::from_json(j);
  }
  result.trends = read_metrics_csv(self_dir / "metrics.csv");
  result.stages = runner.outcomes;
  return result;
}

}  // namespace epsam
