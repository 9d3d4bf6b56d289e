#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "epsam/image.hpp"
#include "epsam/nn.hpp"
#include "epsam/pepm.hpp"
#include "epsam/tensor.hpp"

namespace epsam {

// Frozen convolutional pyramid standing in for a foundation image encoder.
// Initialized once from a fixed seed and never trained.
struct EncoderWeights {
  int embed_dim = 64;
  uint64_t init_seed = 0;
  nn::Conv conv1;  // 3 -> embed_dim/2, stride 2
  nn::Conv conv2;  // embed_dim/2 -> embed_dim, stride 2

  void save(const std::filesystem::path& path) const;
  static EncoderWeights load(const std::filesystem::path& path);
  uint64_t checksum() const;
};

EncoderWeights init_encoder(uint64_t seed, int embed_dim = 64);

// Deterministic embedding at patch_size/4 resolution with embed_dim channels.
Tensor encode_image(const Patch& patch, const EncoderWeights& encoder);

struct DecoderHyper {
  double lr = 2e-4;
  double weight_decay = 0.0;
  int epochs = 20;
  int batch_size = 4;
  double heat_sigma = 1.5;  // Gaussian prompt footprint, embedding cells
  uint64_t seed = 41;
};

// Lightweight trainable mask decoder: prompt heatmap + embedding through an
// upsampling conv stack, plus a quality head used only for reporting.
struct DecoderWeights {
  int embed_dim = 64;
  uint64_t init_seed = 0;
  int epochs_trained = 0;
  DecoderHyper hyper;  // echo of the last training run
  nn::Conv conv1;      // embed_dim+1 -> 48
  nn::Conv conv2;      // 48 -> 32
  nn::Conv conv3;      // 32 -> 16 (after x2 upsample)
  nn::Conv conv4;      // 16 -> 8 (after x2 upsample)
  nn::Conv conv5;      // 8 -> 1, 1x1
  nn::Linear quality;  // GAP(conv2 features) -> 1

  void save(const std::filesystem::path& path) const;
  static DecoderWeights load(const std::filesystem::path& path);
  uint64_t checksum() const;
};

// Fresh weights, reproducible per seed, epoch count 0.
DecoderWeights init_decoder(uint64_t seed, int embed_dim = 64);

struct PredictedMask {
  std::string patch_id;
  Image logits;
  Mask mask;  // 1 where logits > 0
  double predicted_quality = 0.0;
};

// Renders the point prompts as a Gaussian heatmap channel at embedding
// resolution (order-free) and decodes logits at patch resolution.
PredictedMask predict_mask(const Tensor& embedding,
                           const PointPromptSet& prompts,
                           const DecoderWeights& decoder,
                           double heat_sigma = 1.5,
                           const std::string& patch_id = "");

// Dice + IoU on sigmoid(logits) vs target, both with smoothing eps = 1.0.
double seg_loss(const Image& logits, const Mask& target);
// Analytic dL/dlogits, matching seg_loss.
Image seg_loss_grad(const Image& logits, const Mask& target);

struct FinetunePair {
  std::string patch_id;
  Tensor embedding;
  PointPromptSet prompts;
  Mask target;
};

// AdamW fine-tuning of the decoder only; the encoder never appears here.
// Returns the final-epoch weights. Deterministic given hyper.seed.
DecoderWeights finetune_decoder(const std::vector<FinetunePair>& pairs,
                                const DecoderWeights& decoder_init,
                                const DecoderHyper& hyper, int workers = 1);

// Hard-mask overlap metrics; both-empty scores 1.
double dice_hard(const Mask& a, const Mask& b);
double iou_hard(const Mask& a, const Mask& b);

}  // namespace epsam
