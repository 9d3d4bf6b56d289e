#include "epsam/config.hpp"

#include <fstream>

#include "epsam/errors.hpp"
#include "epsam/hash.hpp"

namespace epsam {

PipelineConfig PipelineConfig::preset_named(const std::string& name) {
  PipelineConfig cfg;
  if (name == "desk") {
    cfg.preset = "desk";
    return cfg;
  }
  if (name == "paper") {
    cfg.preset = "paper";
    cfg.cam.lr = 1e-5;
    cfg.cam.weight_decay = 1e-3;
    cfg.cam.batch_size = 16;
    cfg.cam.epochs = 50;
    cfg.seg.decoder_lr = 2e-4;
    cfg.seg.decoder_epochs = 20;
    cfg.self.threshold = 0.9;
    cfg.self.iterations = 3;
    return cfg;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

nlohmann::json PipelineConfig::to_json() const {
  return {
      {"preset", preset},
      {"syndata",
       {{"size", syn.size},
        {"slides", syn.slides},
        {"train", syn.train},
        {"valid", syn.valid},
        {"test", syn.test},
        {"seed", syn.seed},
        {"blob_min", syn.blob_min},
        {"blob_max", syn.blob_max},
        {"fg_min", syn.fg_min},
        {"fg_max", syn.fg_max},
        {"texture_noise", syn.texture_noise},
        {"boundary_softness", syn.boundary_softness}}},
      {"cam",
       {{"freq_cut_ratio", cam.freq_cut_ratio},
        {"drop_threshold_ratio", cam.drop_threshold_ratio},
        {"drop_rate", cam.drop_rate},
        {"attach_points", cam.attach_points},
        {"lr", cam.lr},
        {"weight_decay", cam.weight_decay},
        {"batch_size", cam.batch_size},
        {"epochs", cam.epochs},
        {"seed", cam.seed}}},
      {"postproc",
       {{"quantile_q", post.quantile_q}, {"se_radius", post.se_radius}}},
      {"pepm", {{"k", pepm.k}, {"seed", pepm.seed}}},
      {"segmenter",
       {{"embed_dim", seg.embed_dim},
        {"encoder_seed", seg.encoder_seed},
        {"decoder_lr", seg.decoder_lr},
        {"decoder_weight_decay", seg.decoder_weight_decay},
        {"decoder_epochs", seg.decoder_epochs},
        {"batch_size", seg.batch_size},
        {"heat_sigma", seg.heat_sigma},
        {"seed", seg.seed}}},
      {"selftrain",
       {{"threshold", self.threshold},
        {"iterations", self.iterations},
        {"seed", self.seed}}},
      {"workers", workers}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  PipelineConfig cfg;
  if (j.contains("preset")) cfg = preset_named(j.at("preset").get<std::string>());
  auto get = [](const nlohmann::json& obj, const char* key, auto& slot) {
    if (obj.contains(key)) slot = obj.at(key).get<std::decay_t<decltype(slot)>>();
  };
  if (j.contains("syndata")) {
    const auto& s = j.at("syndata");
    get(s, "size", cfg.syn.size);
    get(s, "slides", cfg.syn.slides);
    get(s, "train", cfg.syn.train);
    get(s, "valid", cfg.syn.valid);
    get(s, "test", cfg.syn.test);
    get(s, "seed", cfg.syn.seed);
    get(s, "blob_min", cfg.syn.blob_min);
    get(s, "blob_max", cfg.syn.blob_max);
    get(s, "fg_min", cfg.syn.fg_min);
    get(s, "fg_max", cfg.syn.fg_max);
    get(s, "texture_noise", cfg.syn.texture_noise);
    get(s, "boundary_softness", cfg.syn.boundary_softness);
  }
  if (j.contains("cam")) {
    const auto& s = j.at("cam");
    get(s, "freq_cut_ratio", cfg.cam.freq_cut_ratio);
    get(s, "drop_threshold_ratio", cfg.cam.drop_threshold_ratio);
    get(s, "drop_rate", cfg.cam.drop_rate);
    get(s, "attach_points", cfg.cam.attach_points);
    get(s, "lr", cfg.cam.lr);
    get(s, "weight_decay", cfg.cam.weight_decay);
    get(s, "batch_size", cfg.cam.batch_size);
    get(s, "epochs", cfg.cam.epochs);
    get(s, "seed", cfg.cam.seed);
  }
  if (j.contains("postproc")) {
    const auto& s = j.at("postproc");
    get(s, "quantile_q", cfg.post.quantile_q);
    get(s, "se_radius", cfg.post.se_radius);
  }
  if (j.contains("pepm")) {
    const auto& s = j.at("pepm");
    get(s, "k", cfg.pepm.k);
    get(s, "seed", cfg.pepm.seed);
  }
  if (j.contains("segmenter")) {
    const auto& s = j.at("segmenter");
    get(s, "embed_dim", cfg.seg.embed_dim);
    get(s, "encoder_seed", cfg.seg.encoder_seed);
    get(s, "decoder_lr", cfg.seg.decoder_lr);
    get(s, "decoder_weight_decay", cfg.seg.decoder_weight_decay);
    get(s, "decoder_epochs", cfg.seg.decoder_epochs);
    get(s, "batch_size", cfg.seg.batch_size);
    get(s, "heat_sigma", cfg.seg.heat_sigma);
    get(s, "seed", cfg.seg.seed);
  }
  if (j.contains("selftrain")) {
    const auto& s = j.at("selftrain");
    get(s, "threshold", cfg.self.threshold);
    get(s, "iterations", cfg.self.iterations);
    get(s, "seed", cfg.self.seed);
  }
  get(j, "workers", cfg.workers);
  return cfg;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " +
                      e.what());
  }
  PipelineConfig cfg = from_json(j);
  cfg.validate();
  return cfg;
}

void PipelineConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file: " + path.string());
  out << to_json().dump(2) << "\n";
}

void PipelineConfig::validate() const {
  if (syn.size < 16 || syn.size % 16 != 0)
    throw ConfigError("syndata.size must be a positive multiple of 16");
  if (syn.train % 2 || syn.valid % 2 || syn.test % 2)
    throw ConfigError("split counts must be even for label balance");
  if (syn.train <= 0 || syn.valid <= 0 || syn.test <= 0)
    throw ConfigError("split counts must be positive");
  if (syn.slides < 3) throw ConfigError("need at least 3 slides for 3 splits");
  if (syn.blob_min < 1 || syn.blob_max < syn.blob_min)
    throw ConfigError("blob count range invalid");
  if (!(syn.fg_min >= 0.0 && syn.fg_min < syn.fg_max && syn.fg_max <= 1.0))
    throw ConfigError("foreground-fraction range invalid");
  if (!(cam.freq_cut_ratio > 0.0 && cam.freq_cut_ratio < 1.0))
    throw ConfigError("cam.freq_cut_ratio must lie in (0,1)");
  if (!(cam.drop_threshold_ratio > 0.0 && cam.drop_threshold_ratio < 1.0))
    throw ConfigError("cam.drop_threshold_ratio must lie in (0,1)");
  if (!(cam.drop_rate >= 0.0 && cam.drop_rate <= 1.0))
    throw ConfigError("cam.drop_rate must lie in [0,1]");
  for (int p : cam.attach_points)
    if (p < 1 || p > 4)
      throw ConfigError("cam.attach_points entries must lie in 1..4");
  if (cam.batch_size < 1 || cam.epochs < 1)
    throw ConfigError("cam training hyperparameters invalid");
  if (!(post.quantile_q >= 0.0 && post.quantile_q < 1.0))
    throw ConfigError("postproc.quantile_q must lie in [0,1)");
  if (post.se_radius < 1) throw ConfigError("postproc.se_radius must be >= 1");
  if (pepm.k < 1) throw ConfigError("pepm.k must be >= 1");
  if (seg.embed_dim < 2 || seg.embed_dim % 2 != 0)
    throw ConfigError("segmenter.embed_dim must be a positive even number");
  if (seg.decoder_epochs < 1 || seg.batch_size < 1)
    throw ConfigError("segmenter training hyperparameters invalid");
  if (seg.heat_sigma <= 0.0)
    throw ConfigError("segmenter.heat_sigma must be positive");
  if (!(self.threshold > 0.0 && self.threshold <= 1.0))
    throw ConfigError("selftrain.threshold must lie in (0,1]");
  if (self.iterations < 1)
    throw ConfigError("selftrain.iterations must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

namespace {

// workers only affects scheduling, never results
nlohmann::json canonical_json(const PipelineConfig& cfg) {
  nlohmann::json j = cfg.to_json();
  j.erase("workers");
  return j;
}

}  // namespace

std::string PipelineConfig::hash() const {
  return hex64(fnv1a64(canonical_json(*this).dump()));
}

std::string PipelineConfig::run_id() const {
  return hex64(fnv1a64(canonical_json(*this).dump(), fnv1a64("epsam.run")));
}

void PipelineConfig::apply_master_seed(uint64_t master) {
  syn.seed = mix_seed(master, "stage.syndata");
  cam.seed = mix_seed(master, "stage.cam");
  pepm.seed = mix_seed(master, "stage.pepm");
  seg.encoder_seed = mix_seed(master, "stage.encoder");
  seg.seed = mix_seed(master, "stage.decoder");
  self.seed = mix_seed(master, "stage.selftrain");
}

SynParams PipelineConfig::syn_params() const {
  SynParams p;
  p.size = syn.size;
  p.blob_min = syn.blob_min;
  p.blob_max = syn.blob_max;
  p.fg_min = syn.fg_min;
  p.fg_max = syn.fg_max;
  p.texture_noise = syn.texture_noise;
  p.boundary_softness = syn.boundary_softness;
  return p;
}

DatasetParams PipelineConfig::dataset_params() const {
  DatasetParams p;
  p.syn = syn_params();
  p.train_count = syn.train;
  p.valid_count = syn.valid;
  p.test_count = syn.test;
  p.slides = syn.slides;
  return p;
}

AdlConfig PipelineConfig::adl_config() const {
  AdlConfig a;
  a.drop_threshold_ratio = cam.drop_threshold_ratio;
  a.drop_rate = cam.drop_rate;
  a.attach_points = cam.attach_points;
  return a;
}

CamTrainHyper PipelineConfig::cam_hyper() const {
  CamTrainHyper h;
  h.lr = cam.lr;
  h.weight_decay = cam.weight_decay;
  h.batch_size = cam.batch_size;
  h.epochs = cam.epochs;
  h.seed = cam.seed;
  return h;
}

PostprocConfig PipelineConfig::post_config() const {
  PostprocConfig p;
  p.quantile_q = post.quantile_q;
  p.se_radius = post.se_radius;
  return p;
}

DecoderHyper PipelineConfig::decoder_hyper() const {
  DecoderHyper h;
  h.lr = seg.decoder_lr;
  h.weight_decay = seg.decoder_weight_decay;
  h.epochs = seg.decoder_epochs;
  h.batch_size = seg.batch_size;
  h.heat_sigma = seg.heat_sigma;
  h.seed = seg.seed;
  return h;
}

RetrainConfig PipelineConfig::retrain_config() const {
  RetrainConfig r;
  r.threshold = self.threshold;
  r.iterations = self.iterations;
  r.base_seed = self.seed;
  r.decoder = decoder_hyper();
  return r;
}

}  // namespace epsam
