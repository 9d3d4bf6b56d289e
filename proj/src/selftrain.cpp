#include "epsam/selftrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "epsam/errors.hpp"
#include "epsam/hash.hpp"
#include "epsam/image_io.hpp"
#include "epsam/parallel.hpp"

namespace epsam {

IdsScore ids(const Mask& initial, const Mask& predicted) {
  if (!initial.same_shape(predicted))
    throw ShapeError("ids: mask shape mismatch");
  size_t inter = 0, pred = 0;
  for (size_t i = 0; i < initial.v.size(); ++i) {
    const bool p = predicted.v[i] != 0;
    inter += (p && initial.v[i] != 0);
    pred += p;
  }
  if (pred == 0) return {0.0, true};
  return {static_cast<double>(inter) / static_cast<double>(pred), false};
}

int select(const std::vector<SelectionCandidate>& candidates, double t,
           int iteration, PseudoLabelSet& labels) {
  if (t <= 0.0 || t > 1.0)
    throw ConfigError("selection threshold must lie in (0,1]");
  int selected = 0;
  for (const auto& c : candidates) {
    IdsScore score = ids(*c.initial, *c.predicted);
    if (score.degenerate || !(score.value > t)) continue;
    labels[c.patch_id] = PseudoRecord{*c.predicted, score.value, iteration};
    ++selected;
  }
  return selected;
}

namespace {

std::string ids_percentiles(std::vector<double> values) {
  if (values.empty()) return "no candidates";
  std::sort(values.begin(), values.end());
  auto pct = [&](double q) {
    double pos = q * static_cast<double>(values.size() - 1);
    return values[static_cast<size_t>(std::lround(pos))];
  };
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "IDS percentiles min=%.3f p25=%.3f p50=%.3f p75=%.3f max=%.3f",
                pct(0.0), pct(0.25), pct(0.5), pct(0.75), pct(1.0));
  return buf;
}

void persist_round(const std::filesystem::path& dir, int iteration,
                   const std::vector<SelectionCandidate>& candidates,
                   double t, const PseudoLabelSet& labels) {
  std::filesystem::path iter_dir =
      dir / ("iter_" + std::to_string(iteration));
  std::filesystem::create_directories(iter_dir);
  nlohmann::json ledger = nlohmann::json::array();
  for (const auto& c : candidates) {
    IdsScore score = ids(*c.initial, *c.predicted);
    ledger.push_back({{"patch_id", c.patch_id},
                      {"ids", score.value},
                      {"selected", !score.degenerate && score.value > t},
                      {"iteration", iteration}});
  }
  std::ofstream out(iter_dir / "ledger.json");
  out << ledger.dump(2) << "\n";
  for (const auto& [id, rec] : labels)
    save_mask_png(iter_dir / (id + ".png"), rec.mask);
}

}  // namespace

SelfTrainResult iterate(const SelfTrainInputs& inputs,
                        const EncoderWeights& encoder,
                        const RetrainConfig& cfg,
                        const std::optional<DecoderWeights>& preliminary,
                        int workers,
                        const std::filesystem::path* persist_dir) {
  if (cfg.iterations < 1)
    throw ConfigError("retraining needs at least one iteration");
  if (cfg.threshold <= 0.0 || cfg.threshold > 1.0)
    throw ConfigError("selection threshold must lie in (0,1]");
  if (inputs.patches.empty())
    throw ConfigError("retraining pool is empty");
  for (const auto& p : inputs.patches) {
    if (!inputs.initial_masks.count(p.id))
      throw ConfigError("no initial mask for patch " + p.id);
    if (!inputs.prompts.count(p.id))
      throw ConfigError("no prompts for patch " + p.id);
  }

  const int n_patches = static_cast<int>(inputs.patches.size());
  std::vector<Tensor> embeddings(n_patches);
  parallel_for(n_patches, workers, [&](int i) {
    embeddings[i] = encode_image(inputs.patches[i], encoder);
  });

  auto make_pairs = [&](const std::map<std::string, Mask>& targets) {
    std::vector<FinetunePair> pairs;
    for (int i = 0; i < n_patches; ++i) {
      const std::string& id = inputs.patches[i].id;
      auto it = targets.find(id);
      if (it == targets.end()) continue;
      pairs.push_back({id, embeddings[i], inputs.prompts.at(id), it->second});
    }
    return pairs;
  };

  auto predict_all = [&](const DecoderWeights& decoder) {
    std::vector<PredictedMask> preds(n_patches);
    parallel_for(n_patches, workers, [&](int i) {
      const std::string& id = inputs.patches[i].id;
      preds[i] = predict_mask(embeddings[i], inputs.prompts.at(id), decoder,
                              cfg.decoder.heat_sigma, id);
    });
    return preds;
  };

  auto pool_metrics = [&](const std::vector<PredictedMask>& preds) {
    double dice = 0.0, iou = 0.0;
    int counted = 0;
    for (int i = 0; i < n_patches; ++i) {
      auto it = inputs.ground_truth.find(inputs.patches[i].id);
      if (it == inputs.ground_truth.end()) continue;
      dice += dice_hard(preds[i].mask, it->second);
      iou += iou_hard(preds[i].mask, it->second);
      ++counted;
    }
    if (counted > 0) {
      dice /= counted;
      iou /= counted;
    }
    return std::pair<double, double>(dice, iou);
  };

  SelfTrainResult result;

  DecoderWeights current;
  uint64_t prelim_checksum = 0;
  if (preliminary.has_value()) {
    current = *preliminary;
  } else {
    DecoderWeights init = init_decoder(cfg.base_seed, encoder.embed_dim);
    prelim_checksum = init.checksum();
    DecoderHyper hyper = cfg.decoder;
    hyper.seed = cfg.base_seed;
    current = finetune_decoder(make_pairs(inputs.initial_masks), init, hyper,
                               workers);
  }

  std::vector<PredictedMask> preds = predict_all(current);
  {
    auto [dice, iou] = pool_metrics(preds);
    result.metrics.push_back(
        {"preliminary", dice, iou, 0, prelim_checksum});
  }

  for (int n = 1; n <= cfg.iterations; ++n) {
    std::vector<SelectionCandidate> candidates;
    candidates.reserve(n_patches);
    for (int i = 0; i < n_patches; ++i) {
      const std::string& id = inputs.patches[i].id;
      candidates.push_back(
          {id, &inputs.initial_masks.at(id), &preds[i].mask});
    }
    const int n_selected = select(candidates, cfg.threshold, n, result.labels);
    result.metrics.back().n_selected = n_selected;
    if (persist_dir)
      persist_round(*persist_dir, n, candidates, cfg.threshold, result.labels);
    if (result.labels.empty()) {
      std::vector<double> scores;
      for (const auto& c : candidates)
        scores.push_back(ids(*c.initial, *c.predicted).value);
      throw TrainingError("no pseudo-labels selected at iteration " +
                          std::to_string(n) + " with threshold " +
                          std::to_string(cfg.threshold) + "; " +
                          ids_percentiles(std::move(scores)));
    }

    DecoderWeights init =
        init_decoder(cfg.base_seed + static_cast<uint64_t>(n),
                     encoder.embed_dim);
    const uint64_t init_checksum = init.checksum();

    std::map<std::string, Mask> targets;
    for (const auto& [id, rec] : result.labels) targets.emplace(id, rec.mask);
    DecoderHyper hyper = cfg.decoder;
    hyper.seed = cfg.base_seed + static_cast<uint64_t>(n);
    current = finetune_decoder(make_pairs(targets), init, hyper, workers);

    preds = predict_all(current);
    auto [dice, iou] = pool_metrics(preds);
    result.metrics.push_back(
        {std::to_string(n), dice, iou, 0, init_checksum});
  }

  // informational gate count for the final phase's predictions
  {
    int would_pass = 0;
    for (int i = 0; i < n_patches; ++i) {
      const std::string& id = inputs.patches[i].id;
      IdsScore s = ids(inputs.initial_masks.at(id), preds[i].mask);
      would_pass += (!s.degenerate && s.value > cfg.threshold);
    }
    result.metrics.back().n_selected = would_pass;
  }

  result.decoder = current;
  return result;
}

}  // namespace epsam
