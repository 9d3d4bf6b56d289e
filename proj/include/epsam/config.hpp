#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "epsam/cam.hpp"
#include "epsam/postproc.hpp"
#include "epsam/segmenter.hpp"
#include "epsam/selftrain.hpp"
#include "epsam/syndata.hpp"

namespace epsam {

// Single configuration surface for the whole pipeline. "desk" runs in minutes
// on a CPU; "paper" swaps in the publication hyperparameters (classifier
// lr 1e-5 / wd 1e-3 / batch 16 / 50 epochs, decoder lr 2e-4 / 20 epochs,
// threshold 0.9, 3 iterations) on the same synthetic data sizes.
struct PipelineConfig {
  std::string preset = "desk";

  struct Syn {
    int size = 64;
    int slides = 12;
    int train = 64, valid = 16, test = 32;
    uint64_t seed = 1;
    int blob_min = 1, blob_max = 4;
    double fg_min = 0.20, fg_max = 0.90;
    double texture_noise = 0.08;
    double boundary_softness = 0.15;
    bool operator==(const Syn&) const = default;
  } syn;

  struct Cam {
    double freq_cut_ratio = 0.25;
    double drop_threshold_ratio = 0.9;
    double drop_rate = 0.75;
    std::vector<int> attach_points = {3, 4};
    double lr = 5e-3;
    double weight_decay = 0.0;
    int batch_size = 16;
    int epochs = 10;
    uint64_t seed = 11;
    bool operator==(const Cam&) const = default;
  } cam;

  struct Post {
    double quantile_q = 0.3;
    int se_radius = 2;
    bool operator==(const Post&) const = default;
  } post;

  struct Pepm {
    int k = 50;
    uint64_t seed = 21;
    bool operator==(const Pepm&) const = default;
  } pepm;

  struct Seg {
    int embed_dim = 64;
    uint64_t encoder_seed = 31;
    double decoder_lr = 2e-4;
    double decoder_weight_decay = 0.0;
    int decoder_epochs = 20;
    int batch_size = 4;
    double heat_sigma = 1.5;
    uint64_t seed = 41;
    bool operator==(const Seg&) const = default;
  } seg;

  struct Self {
    double threshold = 0.9;
    int iterations = 3;
    uint64_t seed = 51;
    bool operator==(const Self&) const = default;
  } self;

  int workers = 1;

  bool operator==(const PipelineConfig&) const = default;

  static PipelineConfig preset_named(const std::string& name);
  static PipelineConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);

  void validate() const;       // ConfigError on violations
  std::string hash() const;    // hex over the canonical JSON (workers excluded)
  std::string run_id() const;

  // --seed override: rederives every stage seed from one master seed.
  void apply_master_seed(uint64_t master);

  // module-parameter views
  SynParams syn_params() const;
  DatasetParams dataset_params() const;
  AdlConfig adl_config() const;
  CamTrainHyper cam_hyper() const;
  PostprocConfig post_config() const;
  DecoderHyper decoder_hyper() const;
  RetrainConfig retrain_config() const;
};

}  // namespace epsam
