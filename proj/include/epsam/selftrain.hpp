#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "epsam/segmenter.hpp"

namespace epsam {

// |initial AND predicted| / |predicted|; empty prediction yields 0 with the
// degenerate flag instead of a division error.
struct IdsScore {
  double value = 0.0;
  bool degenerate = false;
};

IdsScore ids(const Mask& initial, const Mask& predicted);

struct PseudoRecord {
  Mask mask;
  double ids = 0.0;
  int iteration = 0;
};

// Keyed by patch id; insertion replaces (latest mask wins, never deletes).
using PseudoLabelSet = std::map<std::string, PseudoRecord>;

struct SelectionCandidate {
  std::string patch_id;
  const Mask* initial = nullptr;
  const Mask* predicted = nullptr;
};

// Inserts/replaces records whose IDS strictly exceeds t; others leave the set
// untouched. Returns the number selected.
int select(const std::vector<SelectionCandidate>& candidates, double t,
           int iteration, PseudoLabelSet& labels);

struct RetrainConfig {
  double threshold = 0.9;  // strict > gate
  int iterations = 3;
  uint64_t base_seed = 51;  // per-iteration decoder init seed = base_seed + n
  DecoderHyper decoder;
};

struct IterationMetrics {
  std::string phase;  // "preliminary", "1", "2", ...
  double mean_dice = 0.0;  // predictions of this phase's decoder vs synthetic GT
  double mean_iou = 0.0;
  int n_selected = 0;  // candidates from this phase's predictions passing the gate
  uint64_t decoder_init_checksum = 0;  // init weights this phase trained from
};

struct SelfTrainInputs {
  std::vector<Patch> patches;  // positive pool
  std::map<std::string, Mask> initial_masks;
  std::map<std::string, PointPromptSet> prompts;
  std::map<std::string, Mask> ground_truth;  // metrics only, never trains
};

struct SelfTrainResult {
  PseudoLabelSet labels;
  DecoderWeights decoder;
  std::vector<IterationMetrics> metrics;  // "preliminary" + one row per iteration
};

// Iterative retraining: per iteration, predict with the current decoder,
// gate by IDS into the pseudo-label set, re-initialize the decoder and
// fine-tune on the set. When `preliminary` is absent the preliminary
// fine-tuning on the initial masks runs first. When persist_dir is given,
// each iteration writes its pseudo-label snapshot and a selection ledger.
SelfTrainResult iterate(const SelfTrainInputs& inputs,
                        const EncoderWeights& encoder,
                        const RetrainConfig& cfg,
                        const std::optional<DecoderWeights>& preliminary,
                        int workers = 1,
                        const std::filesystem::path* persist_dir = nullptr);

}  // namespace epsam
