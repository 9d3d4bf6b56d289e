#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "epsam/config.hpp"
#include "epsam/metrics.hpp"

namespace epsam {

struct StageOutcome {
  std::string name;
  bool skipped = false;
};

struct RunResult {
  EvalReport report;
  std::vector<IterationMetrics> trends;
  std::vector<StageOutcome> stages;
};

// Stage bodies shared by `epsam run` and the standalone subcommands.
namespace stages {

Manifest synth(const PipelineConfig& cfg, const std::filesystem::path& data_dir);

ClassifierWeights train_cam(const PipelineConfig& cfg, const Manifest& manifest,
                            const std::filesystem::path& weights_path);

// Rotate-fused Enhanced CAMs for every manifest entry, persisted as 16-bit
// grayscale <id>_cam.png.
void extract_cams(const PipelineConfig& cfg, const Manifest& manifest,
                  const ClassifierWeights& weights,
                  const std::filesystem::path& cams_dir);

// Quantile threshold + opening over the persisted fused CAMs of positive
// patches; writes <id>_init.png.
void initial_masks(const PipelineConfig& cfg, const Manifest& manifest,
                   const std::filesystem::path& cams_dir,
                   const std::filesystem::path& out_dir);

// Entropy-based point prompts from the persisted fused CAMs (one JSONL row
// per non-degenerate patch).
void write_prompts(const PipelineConfig& cfg, const Manifest& manifest,
                   const std::filesystem::path& cams_dir,
                   const std::filesystem::path& out_file);

std::map<std::string, PointPromptSet> load_prompts(
    const std::filesystem::path& file);

struct PretrainOutputs {
  EncoderWeights encoder;
  DecoderWeights decoder;
};

PretrainOutputs pretrain_decoder(const PipelineConfig& cfg,
                                 const Manifest& manifest,
                                 const std::filesystem::path& initmask_dir,
                                 const std::filesystem::path& prompts_file,
                                 const std::filesystem::path& seg_dir);

SelfTrainResult selftrain(const PipelineConfig& cfg, const Manifest& manifest,
                          const std::filesystem::path& initmask_dir,
                          const std::filesystem::path& prompts_file,
                          const EncoderWeights& encoder,
                          const DecoderWeights& preliminary,
                          const std::filesystem::path& out_dir);

// Classifier-gated inference over one split: negative-classified patches emit
// all-zero masks without touching the segmenter.
void infer(const PipelineConfig& cfg, const Manifest& manifest,
           const std::string& split, const ClassifierWeights& classifier,
           const EncoderWeights& encoder, const DecoderWeights& decoder,
           const std::filesystem::path& prompts_file,
           const std::filesystem::path& pred_dir);

EvalReport evaluate(const PipelineConfig& cfg, const Manifest& manifest,
                    const std::string& split,
                    const std::filesystem::path& pred_dir);

}  // namespace stages

// Full pipeline: synth -> train-cam -> extract-cam -> initmask -> prompts ->
// pretrain-decoder -> selftrain -> infer -> eval, with per-stage manifests.
// Completed stages whose inputs are unchanged are skipped on rerun.
RunResult run_pipeline(const PipelineConfig& cfg,
                       const std::filesystem::path& out_dir);

}  // namespace epsam
