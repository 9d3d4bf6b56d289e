#include "epsam/segmenter.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "epsam/errors.hpp"
#include "epsam/hash.hpp"
#include "epsam/parallel.hpp"
#include "epsam/weights_io.hpp"

namespace epsam {

namespace {

WeightsFile encoder_to_file(const EncoderWeights& e) {
  WeightsFile wf;
  wf.header = {{"kind", "encoder"},
               {"embed_dim", e.embed_dim},
               {"init_seed", e.init_seed}};
  wf.tensors = {e.conv1.w, e.conv1.b, e.conv2.w, e.conv2.b};
  return wf;
}

nlohmann::json decoder_hyper_json(const DecoderHyper& h) {
  return {{"lr", h.lr},
          {"weight_decay", h.weight_decay},
          {"epochs", h.epochs},
          {"batch_size", h.batch_size},
          {"heat_sigma", h.heat_sigma},
          {"seed", h.seed}};
}

DecoderHyper decoder_hyper_from_json(const nlohmann::json& j) {
  DecoderHyper h;
  h.lr = j.at("lr").get<double>();
  h.weight_decay = j.at("weight_decay").get<double>();
  h.epochs = j.at("epochs").get<int>();
  h.batch_size = j.at("batch_size").get<int>();
  h.heat_sigma = j.at("heat_sigma").get<double>();
  h.seed = j.at("seed").get<uint64_t>();
  return h;
}

WeightsFile decoder_to_file(const DecoderWeights& d) {
  WeightsFile wf;
  wf.header = {{"kind", "decoder"},
               {"embed_dim", d.embed_dim},
               {"init_seed", d.init_seed},
               {"epochs_trained", d.epochs_trained},
               {"hyper", decoder_hyper_json(d.hyper)}};
  wf.tensors = {d.conv1.w, d.conv1.b, d.conv2.w,   d.conv2.b,
                d.conv3.w, d.conv3.b, d.conv4.w,   d.conv4.b,
                d.conv5.w, d.conv5.b, d.quality.w, d.quality.b};
  return wf;
}

void decoder_shapes(DecoderWeights& d) {
  d.conv1 = nn::Conv(d.embed_dim + 1, 48, 3, 1, 1);
  d.conv2 = nn::Conv(48, 32, 3, 1, 1);
  d.conv3 = nn::Conv(32, 16, 3, 1, 1);
  d.conv4 = nn::Conv(16, 8, 3, 1, 1);
  d.conv5 = nn::Conv(8, 1, 1, 1, 0);
  d.quality = nn::Linear(32, 1);
}

}  // namespace

void EncoderWeights::save(const std::filesystem::path& path) const {
  save_weights_file(path, encoder_to_file(*this));
}

EncoderWeights EncoderWeights::load(const std::filesystem::path& path) {
  WeightsFile wf = load_weights_file(path);
  if (wf.header.at("kind").get<std::string>() != "encoder")
    throw IoError("weights file is not an encoder");
  EncoderWeights e;
  e.embed_dim = wf.header.at("embed_dim").get<int>();
  e.init_seed = wf.header.at("init_seed").get<uint64_t>();
  e.conv1 = nn::Conv(3, e.embed_dim / 2, 3, 2, 1);
  e.conv2 = nn::Conv(e.embed_dim / 2, e.embed_dim, 3, 2, 1);
  if (wf.tensors.size() != 4) throw IoError("encoder tensor count mismatch");
  e.conv1.w = wf.tensors[0];
  e.conv1.b = wf.tensors[1];
  e.conv2.w = wf.tensors[2];
  e.conv2.b = wf.tensors[3];
  return e;
}

uint64_t EncoderWeights::checksum() const {
  return weights_checksum(encoder_to_file(*this));
}

EncoderWeights init_encoder(uint64_t seed, int embed_dim) {
  if (embed_dim < 2 || embed_dim % 2 != 0)
    throw ConfigError("embed_dim must be a positive even number");
  EncoderWeights e;
  e.embed_dim = embed_dim;
  e.init_seed = seed;
  e.conv1 = nn::Conv(3, embed_dim / 2, 3, 2, 1);
  e.conv2 = nn::Conv(embed_dim / 2, embed_dim, 3, 2, 1);
  Rng rng(mix_seed(seed, "encoder-init"));
  e.conv1.init_he(rng);
  e.conv2.init_he(rng);
  return e;
}

Tensor encode_image(const Patch& patch, const EncoderWeights& encoder) {
  if (patch.channels.size() != 3)
    throw ShapeError("encode_image: patch must have 3 channels");
  if (patch.size() % 4 != 0)
    throw ShapeError("encode_image: patch size must be a multiple of 4");
  Tensor x = tensor_from_channels(patch.channels);
  Tensor a = nn::relu(encoder.conv1.forward(x));
  return nn::relu(encoder.conv2.forward(a));
}

void DecoderWeights::save(const std::filesystem::path& path) const {
  save_weights_file(path, decoder_to_file(*this));
}

DecoderWeights DecoderWeights::load(const std::filesystem::path& path) {
  WeightsFile wf = load_weights_file(path);
  if (wf.header.at("kind").get<std::string>() != "decoder")
    throw IoError("weights file is not a decoder");
  DecoderWeights d;
  d.embed_dim = wf.header.at("embed_dim").get<int>();
  d.init_seed = wf.header.at("init_seed").get<uint64_t>();
  d.epochs_trained = wf.header.at("epochs_trained").get<int>();
  d.hyper = decoder_hyper_from_json(wf.header.at("hyper"));
  decoder_shapes(d);
  if (wf.tensors.size() != 12) throw IoError("decoder tensor count mismatch");
  d.conv1.w = wf.tensors[0];
  d.conv1.b = wf.tensors[1];
  d.conv2.w = wf.tensors[2];
  d.conv2.b = wf.tensors[3];
  d.conv3.w = wf.tensors[4];
  d.conv3.b = wf.tensors[5];
  d.conv4.w = wf.tensors[6];
  d.conv4.b = wf.tensors[7];
  d.conv5.w = wf.tensors[8];
  d.conv5.b = wf.tensors[9];
  d.quality.w = wf.tensors[10];
  d.quality.b = wf.tensors[11];
  return d;
}

uint64_t DecoderWeights::checksum() const {
  return weights_checksum(decoder_to_file(*this));
}

DecoderWeights init_decoder(uint64_t seed, int embed_dim) {
  DecoderWeights d;
  d.embed_dim = embed_dim;
  d.init_seed = seed;
  d.epochs_trained = 0;
  decoder_shapes(d);
  Rng rng(mix_seed(seed, "decoder-init"));
  d.conv1.init_he(rng);
  d.conv2.init_he(rng);
  d.conv3.init_he(rng);
  d.conv4.init_he(rng);
  d.conv5.init_he(rng);
  d.quality.init_he(rng);
  // low foreground prior at the start: fresh decoders predict near-empty masks
  d.conv5.b[0] = -2.0;
  return d;
}

namespace {

Image render_heatmap(const PointPromptSet& prompts, int emb_h, int emb_w,
                     int patch_size, double sigma) {
  Image heat(emb_h, emb_w, 0.0);
  const double scale = static_cast<double>(patch_size) / emb_h;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (const auto& pt : prompts.points) {
    const double py = (pt.row + 0.5) / scale - 0.5;
    const double px = (pt.col + 0.5) / scale - 0.5;
    for (int y = 0; y < emb_h; ++y)
      for (int x = 0; x < emb_w; ++x) {
        const double dy = y - py, dx = x - px;
        heat.at(y, x) += std::exp(-(dy * dy + dx * dx) * inv2s2);
      }
  }
  const double hi = max_value(heat);
  if (hi > 0.0)
    for (double& v : heat.v) v /= hi;
  return heat;
}

struct DecoderTrace {
  Tensor input;  // embedding + heatmap
  Tensor a1, a2, u1, a3, u2, a4;
  Image logits;
  std::vector<double> pooled;
  double quality_logit = 0.0;
};

void decoder_forward(const DecoderWeights& d, const Tensor& input,
                     DecoderTrace& t) {
  t.input = input;
  t.a1 = nn::relu(d.conv1.forward(t.input));
  t.a2 = nn::relu(d.conv2.forward(t.a1));
  t.u1 = nn::upsample2x(t.a2);
  t.a3 = nn::relu(d.conv3.forward(t.u1));
  t.u2 = nn::upsample2x(t.a3);
  t.a4 = nn::relu(d.conv4.forward(t.u2));
  Tensor z = d.conv5.forward(t.a4);
  t.logits = z.plane(0);
  t.pooled = nn::global_avg_pool(t.a2);
  t.quality_logit = d.quality.forward(t.pooled)[0];
}

struct DecoderGrads {
  std::vector<double> dw1, db1, dw2, db2, dw3, db3, dw4, db4, dw5, db5, dq_w,
      dq_b;

  void init(const DecoderWeights& d) {
    dw1.assign(d.conv1.w.size(), 0.0);
    db1.assign(d.conv1.b.size(), 0.0);
    dw2.assign(d.conv2.w.size(), 0.0);
    db2.assign(d.conv2.b.size(), 0.0);
    dw3.assign(d.conv3.w.size(), 0.0);
    db3.assign(d.conv3.b.size(), 0.0);
    dw4.assign(d.conv4.w.size(), 0.0);
    db4.assign(d.conv4.b.size(), 0.0);
    dw5.assign(d.conv5.w.size(), 0.0);
    db5.assign(d.conv5.b.size(), 0.0);
    dq_w.assign(d.quality.w.size(), 0.0);
    dq_b.assign(d.quality.b.size(), 0.0);
  }
  void add(const DecoderGrads& o) {
    auto acc = [](std::vector<double>& a, const std::vector<double>& b) {
      for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    acc(dw1, o.dw1);
    acc(db1, o.db1);
    acc(dw2, o.dw2);
    acc(db2, o.db2);
    acc(dw3, o.dw3);
    acc(db3, o.db3);
    acc(dw4, o.dw4);
    acc(db4, o.db4);
    acc(dw5, o.dw5);
    acc(db5, o.db5);
    acc(dq_w, o.dq_w);
    acc(dq_b, o.dq_b);
  }
  void scale(double s) {
    for (auto* t : {&dw1, &db1, &dw2, &db2, &dw3, &db3, &dw4, &db4, &dw5, &db5,
                    &dq_w, &dq_b})
      for (double& v : *t) v *= s;
  }
};

// dquality flows only into the quality head (the trunk is not disturbed by
// the reporting objective).
void decoder_backward(const DecoderWeights& d, const DecoderTrace& t,
                      const Image& dlogits, double dquality_logit,
                      DecoderGrads& g) {
  Tensor dz(1, dlogits.h, dlogits.w);
  std::copy(dlogits.v.begin(), dlogits.v.end(), dz.v.begin());
  Tensor da4 = d.conv5.backward(t.a4, dz, g.dw5, g.db5);
  da4 = nn::relu_backward(t.a4, da4);
  Tensor du2 = d.conv4.backward(t.u2, da4, g.dw4, g.db4);
  Tensor da3 = nn::upsample2x_backward(du2, t.a3.h, t.a3.w);
  da3 = nn::relu_backward(t.a3, da3);
  Tensor du1 = d.conv3.backward(t.u1, da3, g.dw3, g.db3);
  Tensor da2 = nn::upsample2x_backward(du1, t.a2.h, t.a2.w);
  da2 = nn::relu_backward(t.a2, da2);
  Tensor da1 = d.conv2.backward(t.a1, da2, g.dw2, g.db2);
  da1 = nn::relu_backward(t.a1, da1);
  d.conv1.backward(t.input, da1, g.dw1, g.db1);
  if (dquality_logit != 0.0)
    d.quality.backward(t.pooled, {dquality_logit}, g.dq_w, g.dq_b);
}

Tensor decoder_input(const Tensor& embedding, const Image& heat) {
  Tensor input(embedding.c + 1, embedding.h, embedding.w);
  std::copy(embedding.v.begin(), embedding.v.end(), input.v.begin());
  std::copy(heat.v.begin(), heat.v.end(),
            input.v.begin() + embedding.v.size());
  return input;
}

}  // namespace

PredictedMask predict_mask(const Tensor& embedding,
                           const PointPromptSet& prompts,
                           const DecoderWeights& decoder, double heat_sigma,
                           const std::string& patch_id) {
  if (prompts.points.empty())
    throw PromptError("predict_mask: empty prompt set");
  if (embedding.c != decoder.embed_dim)
    throw ShapeError("predict_mask: embedding channel mismatch");
  const int patch_size = embedding.h * 4;
  Image heat =
      render_heatmap(prompts, embedding.h, embedding.w, patch_size, heat_sigma);
  DecoderTrace t;
  decoder_forward(decoder, decoder_input(embedding, heat), t);

  PredictedMask out;
  out.patch_id = patch_id;
  out.logits = std::move(t.logits);
  out.mask = Mask(out.logits.h, out.logits.w, 0);
  for (size_t i = 0; i < out.logits.v.size(); ++i)
    out.mask.v[i] = out.logits.v[i] > 0.0 ? 1 : 0;
  out.predicted_quality = nn::sigmoid(t.quality_logit);
  return out;
}

namespace {
constexpr double kSmooth = 1.0;
}

double seg_loss(const Image& logits, const Mask& target) {
  if (logits.h != target.h || logits.w != target.w)
    throw ShapeError("seg_loss: shape mismatch");
  double sum_p = 0.0, sum_t = 0.0, sum_pt = 0.0;
  for (size_t i = 0; i < logits.v.size(); ++i) {
    const double p = nn::sigmoid(logits.v[i]);
    const double t = target.v[i];
    sum_p += p;
    sum_t += t;
    sum_pt += p * t;
  }
  const double dice =
      1.0 - (2.0 * sum_pt + kSmooth) / (sum_p + sum_t + kSmooth);
  const double iou =
      1.0 - (sum_pt + kSmooth) / (sum_p + sum_t - sum_pt + kSmooth);
  return dice + iou;
}

Image seg_loss_grad(const Image& logits, const Mask& target) {
  if (logits.h != target.h || logits.w != target.w)
    throw ShapeError("seg_loss_grad: shape mismatch");
  double sum_p = 0.0, sum_t = 0.0, sum_pt = 0.0;
  std::vector<double> probs(logits.v.size());
  for (size_t i = 0; i < logits.v.size(); ++i) {
    probs[i] = nn::sigmoid(logits.v[i]);
    sum_p += probs[i];
    sum_t += target.v[i];
    sum_pt += probs[i] * target.v[i];
  }
  const double dice_den = sum_p + sum_t + kSmooth;
  const double dice_num = 2.0 * sum_pt + kSmooth;
  const double iou_den = sum_p + sum_t - sum_pt + kSmooth;
  const double iou_num = sum_pt + kSmooth;

  Image grad(logits.h, logits.w);
  for (size_t i = 0; i < logits.v.size(); ++i) {
    const double t = target.v[i];
    // d(dice)/dp_i and d(iou)/dp_i by the quotient rule
    const double ddice = -(2.0 * t * dice_den - dice_num) / (dice_den * dice_den);
    const double diou =
        -(t * iou_den - iou_num * (1.0 - t)) / (iou_den * iou_den);
    const double dp = probs[i] * (1.0 - probs[i]);
    grad.v[i] = (ddice + diou) * dp;
  }
  return grad;
}

DecoderWeights finetune_decoder(const std::vector<FinetunePair>& pairs,
                                const DecoderWeights& decoder_init,
                                const DecoderHyper& hyper, int workers) {
  if (pairs.empty())
    throw ConfigError("finetune_decoder: empty training pair list");
  for (const auto& p : pairs) {
    if (p.prompts.points.empty())
      throw PromptError("finetune_decoder: pair '" + p.patch_id +
                        "' has no prompts");
    if (p.embedding.c != decoder_init.embed_dim)
      throw ShapeError("finetune_decoder: embedding channel mismatch");
  }

  DecoderWeights d = decoder_init;
  d.hyper = hyper;

  struct Prepared {
    Tensor input;
    const Mask* target;
  };
  std::vector<Prepared> prepared(pairs.size());
  parallel_for(static_cast<int>(pairs.size()), workers, [&](int i) {
    const auto& p = pairs[i];
    Image heat = render_heatmap(p.prompts, p.embedding.h, p.embedding.w,
                                p.embedding.h * 4, hyper.heat_sigma);
    prepared[i].input = decoder_input(p.embedding, heat);
    prepared[i].target = &p.target;
  });

  Rng rng(mix_seed(hyper.seed, "decoder-train"));
  std::array<nn::AdamState, 12> adam;
  std::vector<int> order(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(0, i)]);

    double epoch_loss = 0.0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(hyper.batch_size)) {
      const size_t stop =
          std::min(order.size(), start + static_cast<size_t>(hyper.batch_size));
      const int bs = static_cast<int>(stop - start);
      std::vector<DecoderGrads> grads(bs);
      std::vector<double> losses(bs);
      parallel_for(bs, workers, [&](int bi) {
        const Prepared& s = prepared[order[start + bi]];
        DecoderTrace trace;
        decoder_forward(d, s.input, trace);
        losses[bi] = seg_loss(trace.logits, *s.target);
        Image dlogits = seg_loss_grad(trace.logits, *s.target);
        // quality head regression toward the hard IoU of this prediction
        Mask pred(trace.logits.h, trace.logits.w, 0);
        for (size_t i2 = 0; i2 < trace.logits.v.size(); ++i2)
          pred.v[i2] = trace.logits.v[i2] > 0.0 ? 1 : 0;
        const double q = nn::sigmoid(trace.quality_logit);
        const double q_target = iou_hard(pred, *s.target);
        const double dquality = 2.0 * (q - q_target) * q * (1.0 - q);
        grads[bi].init(d);
        decoder_backward(d, trace, dlogits, dquality, grads[bi]);
      });
      DecoderGrads total;
      total.init(d);
      for (int bi = 0; bi < bs; ++bi) {
        total.add(grads[bi]);
        epoch_loss += losses[bi];
      }
      total.scale(1.0 / bs);
      adam[0].step(d.conv1.w, total.dw1, hyper.lr, hyper.weight_decay, true);
      adam[1].step(d.conv1.b, total.db1, hyper.lr, hyper.weight_decay, true);
      adam[2].step(d.conv2.w, total.dw2, hyper.lr, hyper.weight_decay, true);
      adam[3].step(d.conv2.b, total.db2, hyper.lr, hyper.weight_decay, true);
      adam[4].step(d.conv3.w, total.dw3, hyper.lr, hyper.weight_decay, true);
      adam[5].step(d.conv3.b, total.db3, hyper.lr, hyper.weight_decay, true);
      adam[6].step(d.conv4.w, total.dw4, hyper.lr, hyper.weight_decay, true);
      adam[7].step(d.conv4.b, total.db4, hyper.lr, hyper.weight_decay, true);
      adam[8].step(d.conv5.w, total.dw5, hyper.lr, hyper.weight_decay, true);
      adam[9].step(d.conv5.b, total.db5, hyper.lr, hyper.weight_decay, true);
      adam[10].step(d.quality.w, total.dq_w, hyper.lr, hyper.weight_decay, true);
      adam[11].step(d.quality.b, total.dq_b, hyper.lr, hyper.weight_decay, true);
    }
    epoch_loss /= static_cast<double>(pairs.size());
    if (!std::isfinite(epoch_loss))
      throw TrainingError("NaN loss at epoch " + std::to_string(epoch));
    d.epochs_trained += 1;
  }
  return d;
}

double dice_hard(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw ShapeError("dice_hard: shape mismatch");
  size_t inter = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const bool va = a.v[i] != 0, vb = b.v[i] != 0;
    inter += (va && vb);
    na += va;
    nb += vb;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double iou_hard(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw ShapeError("iou_hard: shape mismatch");
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const bool va = a.v[i] != 0, vb = b.v[i] != 0;
    inter += (va && vb);
    uni += (va || vb);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace epsam
