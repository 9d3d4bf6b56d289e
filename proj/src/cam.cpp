#include "epsam/cam.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include <nlohmann/json.hpp>

#include "epsam/fft.hpp"
#include "epsam/hash.hpp"
#include "epsam/parallel.hpp"
#include "epsam/weights_io.hpp"

namespace epsam {

Image adl_attention(const Tensor& features) {
  Image att(features.h, features.w, 0.0);
  const double inv = 1.0 / features.c;
  for (int c = 0; c < features.c; ++c)
    for (int y = 0; y < features.h; ++y)
      for (int x = 0; x < features.w; ++x)
        att.at(y, x) += features.at(c, y, x) * inv;
  return att;
}

Mask adl_drop_mask(const Image& attention, double threshold_ratio) {
  const double threshold = threshold_ratio * max_value(attention);
  Mask drop(attention.h, attention.w);
  for (int y = 0; y < attention.h; ++y)
    for (int x = 0; x < attention.w; ++x)
      drop.at(y, x) = attention.at(y, x) > threshold ? 0 : 1;
  return drop;
}

Image adl_importance(const Image& attention) {
  Image imp = attention;
  for (double& v : imp.v) v = nn::sigmoid(v);
  return imp;
}

namespace {

Tensor apply_map(const Tensor& features, const Image& map) {
  Tensor out = features;
  for (int c = 0; c < features.c; ++c)
    for (int y = 0; y < features.h; ++y)
      for (int x = 0; x < features.w; ++x) out.at(c, y, x) *= map.at(y, x);
  return out;
}

// Backward through features * map. The drop mask is a constant; the
// importance map feeds gradient back through the channel mean.
Tensor adl_backward(const Tensor& features, const AdlApply& adl,
                    const Tensor& dout) {
  Tensor dx(features.c, features.h, features.w);
  if (adl.drop_branch) {
    for (int c = 0; c < features.c; ++c)
      for (int y = 0; y < features.h; ++y)
        for (int x = 0; x < features.w; ++x)
          dx.at(c, y, x) = dout.at(c, y, x) * adl.map.at(y, x);
    return dx;
  }
  const double inv_c = 1.0 / features.c;
  for (int y = 0; y < features.h; ++y)
    for (int x = 0; x < features.w; ++x) {
      double s = 0.0;
      for (int c = 0; c < features.c; ++c)
        s += dout.at(c, y, x) * features.at(c, y, x);
      const double imp = adl.map.at(y, x);
      const double through_att = inv_c * imp * (1.0 - imp) * s;
      for (int c = 0; c < features.c; ++c)
        dx.at(c, y, x) = dout.at(c, y, x) * imp + through_att;
    }
  return dx;
}

AdlApply make_adl_apply(const Tensor& features, const AdlConfig& cfg,
                        bool drop_branch) {
  AdlApply a;
  a.applied = true;
  a.drop_branch = drop_branch;
  Image att = adl_attention(features);
  if (drop_branch) {
    Mask drop = adl_drop_mask(att, cfg.drop_threshold_ratio);
    a.map = Image(att.h, att.w);
    for (size_t i = 0; i < drop.v.size(); ++i) a.map.v[i] = drop.v[i];
  } else {
    a.map = adl_importance(att);
  }
  return a;
}

}  // namespace

Tensor adl_forward(const Tensor& features, const AdlConfig& cfg, Rng& rng,
                   bool training) {
  if (!training) return features;
  const bool drop = rng.bernoulli(cfg.drop_rate);
  AdlApply a = make_adl_apply(features, cfg, drop);
  return apply_map(features, a.map);
}

Image extract_evp(const Patch& patch, double freq_cut_ratio) {
  if (freq_cut_ratio <= 0.0 || freq_cut_ratio >= 1.0)
    throw ConfigError("freq_cut_ratio must lie in (0,1)");
  if (patch.channels.empty()) throw ShapeError("extract_evp: empty patch");
  const int h = patch.channels[0].h;
  const int w = patch.channels[0].w;
  if (h != w) throw ShapeError("extract_evp: patch must be square");

  // centred square of side s: frequencies with |centred coord| <= floor(s/2)
  const int side = static_cast<int>(std::lround(freq_cut_ratio * std::min(h, w)));
  const int cutoff = side / 2;
  auto centred = [](int u, int n) { return u <= n / 2 ? u : u - n; };

  Image acc(h, w, 0.0);
  std::vector<std::complex<double>> buf(static_cast<size_t>(h) * w);
  for (const Image& ch : patch.channels) {
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = ch.v[i];
    fft_2d(buf, h, w, false);
    for (int u = 0; u < h; ++u) {
      const int cu = std::abs(centred(u, h));
      if (cu > cutoff) continue;
      for (int v = 0; v < w; ++v) {
        if (std::abs(centred(v, w)) <= cutoff)
          buf[static_cast<size_t>(u) * w + v] = 0.0;
      }
    }
    fft_2d(buf, h, w, true);
    for (size_t i = 0; i < buf.size(); ++i) acc.v[i] += std::abs(buf[i]);
  }
  const double inv = 1.0 / static_cast<double>(patch.channels.size());
  for (double& v : acc.v) v *= inv;
  minmax_normalize(acc);
  return acc;
}

void ClassifierNet::build(int input_channels,
                          const std::vector<int>& stage_channels) {
  int in_c = input_channels;
  for (size_t i = 0; i < stages.size(); ++i) {
    stages[i] = nn::Conv(in_c, stage_channels[i], 3, 2, 1);
    in_c = stage_channels[i];
  }
  head = nn::Linear(stage_channels.back(), 1);
}

void ClassifierNet::init(Rng& rng) {
  for (auto& s : stages) s.init_he(rng);
  head.init_he(rng);
}

void ClassifierGrads::init(const ClassifierNet& net) {
  for (size_t i = 0; i < net.stages.size(); ++i) {
    dw[i].assign(net.stages[i].w.size(), 0.0);
    db[i].assign(net.stages[i].b.size(), 0.0);
  }
  head_dw.assign(net.head.w.size(), 0.0);
  head_db.assign(net.head.b.size(), 0.0);
}

void ClassifierGrads::add(const ClassifierGrads& other) {
  auto acc = [](std::vector<double>& a, const std::vector<double>& b) {
    for (size_t j = 0; j < a.size(); ++j) a[j] += b[j];
  };
  for (size_t i = 0; i < dw.size(); ++i) {
    acc(dw[i], other.dw[i]);
    acc(db[i], other.db[i]);
  }
  acc(head_dw, other.head_dw);
  acc(head_db, other.head_db);
}

void ClassifierGrads::scale(double s) {
  for (size_t i = 0; i < dw.size(); ++i) {
    for (double& v : dw[i]) v *= s;
    for (double& v : db[i]) v *= s;
  }
  for (double& v : head_dw) v *= s;
  for (double& v : head_db) v *= s;
}

double ClassifierGrads::squared_norm() const {
  double n = 0.0;
  auto acc = [&n](const std::vector<double>& t) {
    for (double v : t) n += v * v;
  };
  for (size_t i = 0; i < dw.size(); ++i) {
    acc(dw[i]);
    acc(db[i]);
  }
  acc(head_dw);
  acc(head_db);
  return n;
}

double classifier_forward(const ClassifierWeights& w, const Tensor& x,
                          bool training,
                          const std::array<bool, 4>& drop_branch,
                          ClassifierTrace* trace) {
  if (x.c != w.input_channels)
    throw ShapeError("classifier input has " + std::to_string(x.c) +
                     " channels, weights expect " +
                     std::to_string(w.input_channels));
  ClassifierTrace local;
  ClassifierTrace& t = trace ? *trace : local;
  t.input = x;
  const Tensor* cur = &t.input;
  for (int i = 0; i < 4; ++i) {
    Tensor z = w.net.stages[i].forward(*cur);
    Tensor n = w.net.norms[i].forward(z, &t.norm[i]);
    t.relu_out[i] = nn::relu(n);
    const bool attached =
        std::find(w.adl.attach_points.begin(), w.adl.attach_points.end(),
                  i + 1) != w.adl.attach_points.end();
    if (attached && training) {
      t.adl[i] = make_adl_apply(t.relu_out[i], w.adl, drop_branch[i]);
      t.stage_out[i] = apply_map(t.relu_out[i], t.adl[i].map);
    } else {
      t.adl[i] = AdlApply{};
      t.stage_out[i] = t.relu_out[i];
    }
    cur = &t.stage_out[i];
  }
  t.pooled = nn::global_avg_pool(*cur);
  t.logit = w.net.head.forward(t.pooled)[0];
  return t.logit;
}

void classifier_backward(const ClassifierWeights& w,
                         const ClassifierTrace& trace, double dlogit,
                         ClassifierGrads& grads) {
  std::vector<double> dpooled =
      w.net.head.backward(trace.pooled, {dlogit}, grads.head_dw, grads.head_db);
  Tensor dcur = nn::global_avg_pool_backward(
      dpooled, trace.stage_out[3].c, trace.stage_out[3].h, trace.stage_out[3].w);
  for (int i = 3; i >= 0; --i) {
    if (trace.adl[i].applied)
      dcur = adl_backward(trace.relu_out[i], trace.adl[i], dcur);
    dcur = nn::relu_backward(trace.relu_out[i], dcur);
    dcur = w.net.norms[i].backward(trace.norm[i], dcur, grads.dgamma[i],
                                   grads.dbeta[i]);
    const Tensor& stage_in = (i == 0) ? trace.input : trace.stage_out[i - 1];
    dcur = w.net.stages[i].backward(stage_in, dcur, grads.dw[i], grads.db[i]);
  }
}

Tensor classifier_input(const Patch& patch, const Image& evp) {
  if (patch.channels.empty() || !patch.channels[0].same_shape(evp))
    throw ShapeError("classifier_input: patch/EVP shape mismatch");
  std::vector<Image> channels = patch.channels;
  channels.push_back(evp);
  return tensor_from_channels(channels);
}

namespace {

nlohmann::json hyper_to_json(const CamTrainHyper& h) {
  return {{"lr", h.lr},
          {"weight_decay", h.weight_decay},
          {"batch_size", h.batch_size},
          {"epochs", h.epochs},
          {"seed", h.seed}};
}

CamTrainHyper hyper_from_json(const nlohmann::json& j) {
  CamTrainHyper h;
  h.lr = j.at("lr").get<double>();
  h.weight_decay = j.at("weight_decay").get<double>();
  h.batch_size = j.at("batch_size").get<int>();
  h.epochs = j.at("epochs").get<int>();
  h.seed = j.at("seed").get<uint64_t>();
  return h;
}

WeightsFile classifier_to_file(const ClassifierWeights& w) {
  WeightsFile wf;
  wf.header = {{"kind", "classifier"},
               {"input_channels", w.input_channels},
               {"stage_channels", w.stage_channels},
               {"adl",
                {{"drop_threshold_ratio", w.adl.drop_threshold_ratio},
                 {"drop_rate", w.adl.drop_rate},
                 {"attach_points", w.adl.attach_points}}},
               {"freq_cut_ratio", w.freq_cut_ratio},
               {"hyper", hyper_to_json(w.hyper)},
               {"init_seed", w.init_seed},
               {"best_val_accuracy", w.best_val_accuracy}};
  for (size_t i = 0; i < w.net.stages.size(); ++i) {
    wf.tensors.push_back(w.net.stages[i].w);
    wf.tensors.push_back(w.net.stages[i].b);
    wf.tensors.push_back(w.net.norms[i].gamma);
    wf.tensors.push_back(w.net.norms[i].beta);
  }
  wf.tensors.push_back(w.net.head.w);
  wf.tensors.push_back(w.net.head.b);
  return wf;
}

ClassifierWeights classifier_from_file(const WeightsFile& wf) {
  if (wf.header.at("kind").get<std::string>() != "classifier")
    throw IoError("weights file is not a classifier");
  ClassifierWeights w;
  w.input_channels = wf.header.at("input_channels").get<int>();
  w.stage_channels = wf.header.at("stage_channels").get<std::vector<int>>();
  const auto& adl = wf.header.at("adl");
  w.adl.drop_threshold_ratio = adl.at("drop_threshold_ratio").get<double>();
  w.adl.drop_rate = adl.at("drop_rate").get<double>();
  w.adl.attach_points = adl.at("attach_points").get<std::vector<int>>();
  w.freq_cut_ratio = wf.header.at("freq_cut_ratio").get<double>();
  w.hyper = hyper_from_json(wf.header.at("hyper"));
  w.init_seed = wf.header.at("init_seed").get<uint64_t>();
  w.best_val_accuracy = wf.header.at("best_val_accuracy").get<double>();
  w.net.build(w.input_channels, w.stage_channels);
  if (wf.tensors.size() != 18) throw IoError("classifier tensor count mismatch");
  for (int i = 0; i < 4; ++i) {
    w.net.stages[i].w = wf.tensors[4 * i];
    w.net.stages[i].b = wf.tensors[4 * i + 1];
    w.net.norms[i].gamma = wf.tensors[4 * i + 2];
    w.net.norms[i].beta = wf.tensors[4 * i + 3];
  }
  w.net.head.w = wf.tensors[16];
  w.net.head.b = wf.tensors[17];
  return w;
}

}  // namespace

void ClassifierWeights::save(const std::filesystem::path& path) const {
  save_weights_file(path, classifier_to_file(*this));
}

ClassifierWeights ClassifierWeights::load(const std::filesystem::path& path) {
  return classifier_from_file(load_weights_file(path));
}

uint64_t ClassifierWeights::checksum() const {
  return weights_checksum(classifier_to_file(*this));
}

ClassifierWeights train_classifier(const Manifest& manifest,
                                   const AdlConfig& adl,
                                   const CamTrainHyper& hyper,
                                   double freq_cut_ratio, int workers) {
  auto train_entries = manifest.split("train");
  auto valid_entries = manifest.split("valid");
  if (train_entries.empty()) throw ConfigError("train split is empty");
  if (valid_entries.empty()) throw ConfigError("valid split is empty");
  if (manifest.patch_size % 16 != 0)
    throw ConfigError("classifier needs patch size divisible by 16, got " +
                      std::to_string(manifest.patch_size));

  struct Sample {
    Tensor input;
    double target;
  };
  auto prepare = [&](const std::vector<const ManifestEntry*>& entries) {
    std::vector<Sample> out(entries.size());
    parallel_for(static_cast<int>(entries.size()), workers, [&](int i) {
      Patch p = load_patch(manifest, *entries[i]);
      Image evp = extract_evp(p, freq_cut_ratio);
      out[i].input = classifier_input(p, evp);
      out[i].target = entries[i]->label == Label::positive ? 1.0 : 0.0;
    });
    return out;
  };
  std::vector<Sample> train = prepare(train_entries);
  std::vector<Sample> valid = prepare(valid_entries);

  ClassifierWeights w;
  w.adl = adl;
  w.freq_cut_ratio = freq_cut_ratio;
  w.hyper = hyper;
  w.init_seed = hyper.seed;
  w.net.build(w.input_channels, w.stage_channels);
  Rng init_rng(mix_seed(hyper.seed, "clf-init"));
  w.net.init(init_rng);

  Rng train_rng(mix_seed(hyper.seed, "clf-train"));

  std::array<nn::AdamState, 18> adam;
  auto step_all = [&](const ClassifierGrads& g) {
    for (int i = 0; i < 4; ++i) {
      adam[4 * i].step(w.net.stages[i].w, g.dw[i], hyper.lr,
                       hyper.weight_decay, false);
      adam[4 * i + 1].step(w.net.stages[i].b, g.db[i], hyper.lr,
                           hyper.weight_decay, false);
      adam[4 * i + 2].step(w.net.norms[i].gamma, g.dgamma[i], hyper.lr,
                           hyper.weight_decay, false);
      adam[4 * i + 3].step(w.net.norms[i].beta, g.dbeta[i], hyper.lr,
                           hyper.weight_decay, false);
    }
    adam[16].step(w.net.head.w, g.head_dw, hyper.lr, hyper.weight_decay, false);
    adam[17].step(w.net.head.b, g.head_db, hyper.lr, hyper.weight_decay, false);
  };

  std::vector<int> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  double best_acc = -1.0;
  ClassifierNet best_net = w.net;

  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[train_rng.uniform_int(0, i)]);

    double epoch_loss = 0.0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(hyper.batch_size)) {
      const size_t stop =
          std::min(order.size(), start + static_cast<size_t>(hyper.batch_size));
      const int bs = static_cast<int>(stop - start);

      std::array<bool, 4> drop{};
      for (int stage : adl.attach_points)
        drop[stage - 1] = train_rng.bernoulli(adl.drop_rate);

      std::vector<ClassifierGrads> grads(bs);
      std::vector<double> losses(bs);
      parallel_for(bs, workers, [&](int bi) {
        const Sample& s = train[order[start + bi]];
        ClassifierTrace trace;
        double logit = classifier_forward(w, s.input, true, drop, &trace);
        losses[bi] = nn::bce_with_logits(logit, s.target);
        grads[bi].init(w.net);
        classifier_backward(w, trace,
                            nn::bce_with_logits_grad(logit, s.target),
                            grads[bi]);
      });
      ClassifierGrads total;
      total.init(w.net);
      for (int bi = 0; bi < bs; ++bi) {
        total.add(grads[bi]);
        epoch_loss += losses[bi];
      }
      total.scale(1.0 / bs);
      step_all(total);
    }
    epoch_loss /= static_cast<double>(train.size());
    if (!std::isfinite(epoch_loss))
      throw TrainingError("NaN loss at epoch " + std::to_string(epoch));

    std::vector<uint8_t> correct(valid.size());
    parallel_for(static_cast<int>(valid.size()), workers, [&](int i) {
      double logit = classifier_forward(w, valid[i].input, false, {}, nullptr);
      correct[i] = (logit >= 0.0) == (valid[i].target > 0.5);
    });
    double acc = 0.0;
    for (uint8_t c : correct) acc += c;
    acc /= static_cast<double>(valid.size());
    if (acc > best_acc) {
      best_acc = acc;
      best_net = w.net;
    }
  }
  w.net = best_net;
  w.best_val_accuracy = best_acc;
  return w;
}

double classify_logit(const ClassifierWeights& w, const Patch& patch,
                      const Image& evp) {
  return classifier_forward(w, classifier_input(patch, evp), false, {},
                            nullptr);
}

Image extract_cam(const ClassifierWeights& w, const Patch& patch,
                  const Image& evp) {
  const int s = patch.size();
  if (s % 16 != 0)
    throw ShapeError("extract_cam: patch size must be divisible by 16");
  ClassifierTrace trace;
  classifier_forward(w, classifier_input(patch, evp), false, {}, &trace);
  const Tensor& feat = trace.stage_out[3];
  Image evidence(feat.h, feat.w, 0.0);
  for (int c = 0; c < feat.c; ++c) {
    const double wc = w.net.head.w[c];
    for (int y = 0; y < feat.h; ++y)
      for (int x = 0; x < feat.w; ++x)
        evidence.at(y, x) += wc * feat.at(c, y, x);
  }
  for (double& v : evidence.v) v = v > 0.0 ? v : 0.0;
  Image cam = resize_bilinear(evidence, s, s);
  minmax_normalize(cam);
  return cam;
}

}  // namespace epsam
