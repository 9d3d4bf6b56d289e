#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "epsam/image.hpp"
#include "epsam/nn.hpp"
#include "epsam/rng.hpp"
#include "epsam/syndata.hpp"
#include "epsam/tensor.hpp"

namespace epsam {

struct AdlConfig {
  double drop_threshold_ratio = 0.9;  // threshold = ratio * max(attention)
  double drop_rate = 0.75;            // probability of the drop branch per step
  std::vector<int> attach_points = {3, 4};  // 1-based classifier stages
};

struct CamTrainHyper {
  double lr = 5e-3;
  double weight_decay = 0.0;
  int batch_size = 16;
  int epochs = 10;
  uint64_t seed = 11;
};

// --- Enhanced ADL building blocks -----------------------------------------

// Channel-wise mean pooling of a feature block.
Image adl_attention(const Tensor& features);

// 0 exactly where attention exceeds ratio * max(attention), 1 elsewhere.
Mask adl_drop_mask(const Image& attention, double threshold_ratio);

// Elementwise sigmoid of the attention map.
Image adl_importance(const Image& attention);

// Training: selects the drop mask with probability cfg.drop_rate, else the
// importance map, and multiplies it into every channel. Inference: identity.
Tensor adl_forward(const Tensor& features, const AdlConfig& cfg, Rng& rng,
                   bool training);

// High-frequency content of a patch: per-channel 2-D transform, zero the
// centred low-frequency square of side freq_cut_ratio * min(H,W), inverse
// transform, magnitude, channel average, min-max normalization.
Image extract_evp(const Patch& patch, double freq_cut_ratio);

// --- Patch classifier -------------------------------------------------------

// 4-stage stride-2 CNN over patch+EVP channels with ADL at the configured
// stages, global average pooling and a single-logit head.
struct ClassifierNet {
  std::array<nn::Conv, 4> stages;
  nn::Linear head;

  void build(int input_channels, const std::vector<int>& stage_channels);
  void init(Rng& rng);
};

struct ClassifierWeights {
  AdlConfig adl;
  double freq_cut_ratio = 0.25;
  CamTrainHyper hyper;
  int input_channels = 4;
  std::vector<int> stage_channels = {16, 32, 64, 128};
  uint64_t init_seed = 0;
  double best_val_accuracy = 0.0;
  // ADL maps scale features during training only, so the raw logit is shifted
  // at inference; the decision threshold is calibrated on train logits.
  double decision_threshold = 0.0;
  ClassifierNet net;

  void save(const std::filesystem::path& path) const;
  static ClassifierWeights load(const std::filesystem::path& path);
  uint64_t checksum() const;
};

// Per-sample forward records needed by backward.
struct AdlApply {
  bool applied = false;
  bool drop_branch = false;
  Image map;  // the multiplier actually used
};

struct ClassifierTrace {
  Tensor input;
  std::array<Tensor, 4> relu_out;   // pre-ADL stage activations
  std::array<AdlApply, 4> adl;
  std::array<Tensor, 4> stage_out;  // post-ADL
  std::vector<double> pooled;
  double logit = 0.0;
};

struct ClassifierGrads {
  std::array<std::vector<double>, 4> dw, db;
  std::vector<double> head_dw, head_db;

  void init(const ClassifierNet& net);
  void add(const ClassifierGrads& other);
  void scale(double s);
  double squared_norm() const;
};

double classifier_forward(const ClassifierWeights& w, const Tensor& x,
                          bool training,
                          const std::array<bool, 4>& drop_branch,
                          ClassifierTrace* trace);
void classifier_backward(const ClassifierWeights& w,
                         const ClassifierTrace& trace, double dlogit,
                         ClassifierGrads& grads);

// Builds the 4-channel classifier input (patch + EVP).
Tensor classifier_input(const Patch& patch, const Image& evp);

// Trains on image-level labels only (BCE; no pixel supervision). Returns the
// weights of the best-validation-accuracy epoch. Deterministic given seed.
ClassifierWeights train_classifier(const Manifest& manifest,
                                   const AdlConfig& adl,
                                   const CamTrainHyper& hyper,
                                   double freq_cut_ratio, int workers = 1);

// Inference-mode logit for classifier gating.
double classify_logit(const ClassifierWeights& w, const Patch& patch,
                      const Image& evp);

// logit >= calibrated decision threshold
bool classify_positive(const ClassifierWeights& w, const Patch& patch,
                       const Image& evp);

// Enhanced ADL CAM: class-evidence map from final-stage features weighted by
// the head, ReLU-clamped, bilinearly upsampled to patch size and min-max
// normalized.
Image extract_cam(const ClassifierWeights& w, const Patch& patch,
                  const Image& evp);

}  // namespace epsam
