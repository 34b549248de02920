#include "cdt/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "cdt/autodiff.hpp"
#include "cdt/error.hpp"

namespace cdt {
namespace {

NoiseSchedule schedule_of(const RunConfig& cfg) {
  return make_linear_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end);
}

Tensor mask_chw(const Tensor& mask) {
  const Shape& s = mask.shape();
  if (s.size() != 2) throw contract_error("expected an HxW mask, got " + shape_str(s));
  return Tensor::from_data({1, s[0], s[1]}, mask.values());
}

ParamMap as_parameters(const ParamMap& params) {
  ParamMap out;
  for (const auto& [name, t] : params)
    out.emplace(name, t.param_id() != 0 ? t : Tensor::parameter(t));
  return out;
}

MetricsReport micro_metrics(const std::vector<Tensor>& probs, const std::vector<Tensor>& masks,
                            double tau) {
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  for (size_t i = 0; i < probs.size(); ++i) {
    MetricsReport r = evaluate(threshold(probs[i], tau), masks[i]);
    tp += r.tp;
    fp += r.fp;
    fn += r.fn;
    tn += r.tn;
  }
  return metrics_from_counts(tp, fp, fn, tn, tau);
}

} // namespace

ParamMap detach_params(const ParamMap& params) {
  ParamMap out;
  for (const auto& [name, t] : params) out.emplace(name, t.detach());
  return out;
}

std::vector<int> pyramid_channels(const UNetConfig& ucfg, int n_timesteps) {
  ucfg.validate();
  if (n_timesteps < 1) throw contract_error("pyramid_channels: need at least one timestep");
  std::vector<int> ch;
  ch.reserve(ucfg.tap_layers.size());
  for (int tap : ucfg.tap_layers) ch.push_back(ucfg.tap_channels(tap) * n_timesteps);
  return ch;
}

DiffusionTrainResult train_diffusion(const RunConfig& cfg, const std::vector<SamplePair>& data,
                                     std::ostream* log) {
  cfg.validate();
  if (data.empty()) throw contract_error("train_diffusion: empty dataset");
  NoiseSchedule s = schedule_of(cfg);

  std::vector<Tensor> pool;
  pool.reserve(2 * data.size());
  for (const auto& p : data) {
    pool.push_back(p.imgA.detach());
    pool.push_back(p.imgB.detach());
  }

  Rng rng(cfg.train.seed);
  DiffusionTrainResult res;
  res.params = init_unet_params(cfg.unet, rng);
  AdamConfig ac;
  ac.lr = cfg.train.lr;
  Adam opt(ac);

  const int n_pool = static_cast<int>(pool.size());
  for (int step = 0; step < cfg.train.steps; ++step) {
    std::vector<Tensor> batch;
    batch.reserve(cfg.train.batch);
    for (int b = 0; b < cfg.train.batch; ++b)
      batch.push_back(pool[rng.uniform_int(0, n_pool - 1)]);

    UNet model(cfg.unet, res.params);
    Tensor loss = denoise_loss(model, batch, rng, s);
    double lv = loss.scalar_value();
    if (!std::isfinite(lv))
      throw numeric_error("diffusion loss became non-finite at step " + std::to_string(step));
    res.losses.push_back(lv);

    GradMap grads = backward(loss);
    opt.step(res.params, grads);
    if (log && (step % 25 == 0 || step + 1 == cfg.train.steps))
      *log << "step " << step << " loss " << lv << "\n";
  }
  return res;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& losses) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write loss curve " + path.string());
  out << "step,loss\n";
  char buf[64];
  for (size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, losses[i]);
    out << buf;
  }
  if (!out) throw io_error("loss curve write failed " + path.string());
}

std::pair<FeaturePyramid, FeaturePyramid> extract_pair_features(
    const UNetConfig& ucfg, const ParamMap& backbone, const NoiseSchedule& s,
    const Tensor& imgA, const Tensor& imgB, const FeatureConfig& fcfg,
    std::uint64_t sample_index) {
  UNet model(ucfg, backbone);
  // Both images share one noise stream (common random numbers): identical
  // content then yields identical features, so the pair's feature difference
  // reflects scene change rather than the extraction noise draw.
  Rng ra = Rng(fcfg.seed).fork(sample_index);
  Rng rb = ra;
  return {extract_features(model, imgA, fcfg.timesteps, ra, s),
          extract_features(model, imgB, fcfg.timesteps, rb, s)};
}

FeatureCache extract_all_features(const UNetConfig& ucfg, const ParamMap& backbone,
                                  const NoiseSchedule& s,
                                  const std::vector<SamplePair>& data,
                                  const FeatureConfig& fcfg) {
  ParamMap frozen = detach_params(backbone);
  FeatureCache cache;
  cache.a.reserve(data.size());
  cache.b.reserve(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    auto [fa, fb] = extract_pair_features(ucfg, frozen, s, data[i].imgA, data[i].imgB, fcfg,
                                          static_cast<std::uint64_t>(i));
    cache.a.push_back(std::move(fa));
    cache.b.push_back(std::move(fb));
  }
  return cache;
}

CdTrainResult train_cd(const RunConfig& cfg, bool unfreeze, const ParamMap& backbone,
                       const std::vector<SamplePair>& train_data,
                       const std::vector<SamplePair>& val_data, std::ostream* log,
                       const FeatureCache* shared_train, const FeatureCache* shared_val) {
  cfg.validate();
  if (train_data.empty()) throw contract_error("train_cd: empty train split");
  if (unfreeze && (shared_train || shared_val))
    throw contract_error("train_cd: shared feature caches require a frozen backbone");
  if ((shared_train && shared_train->a.size() != train_data.size()) ||
      (shared_val && shared_val->a.size() != val_data.size()))
    throw contract_error("train_cd: shared feature cache size mismatch");
  NoiseSchedule s = schedule_of(cfg);

  const Shape& ish = train_data[0].imgA.shape();
  const int H = ish[1], W = ish[2];

  std::vector<int> level_ch = pyramid_channels(cfg.unet, static_cast<int>(cfg.features.timesteps.size()));
  std::vector<int> fused_ch = level_ch;
  for (int& c : fused_ch) c *= 2;

  Rng rng(cfg.train.seed);
  CdTrainResult res;
  res.head_params = init_fdaf_params(cfg.fdaf, level_ch, rng);
  {
    ParamMap cd = init_cd_params(cfg.cd, fused_ch, rng);
    res.head_params.insert(cd.begin(), cd.end());
  }
  res.backbone_params = unfreeze ? as_parameters(backbone) : detach_params(backbone);

  std::vector<Tensor> train_masks, val_masks;
  for (const auto& p : train_data) train_masks.push_back(mask_chw(p.mask));
  for (const auto& p : val_data) val_masks.push_back(mask_chw(p.mask));

  // Frozen backbone: features are constants, extract once up front.
  FeatureCache train_feats, val_feats;
  if (!unfreeze) {
    if (!shared_train)
      train_feats = extract_all_features(cfg.unet, res.backbone_params, s, train_data,
                                         cfg.features);
    if (!shared_val)
      val_feats = extract_all_features(cfg.unet, res.backbone_params, s, val_data, cfg.features);
  }
  const FeatureCache& tf = shared_train ? *shared_train : train_feats;
  const FeatureCache& vf = shared_val ? *shared_val : val_feats;

  ParamMap trainable = res.head_params;
  if (unfreeze)
    trainable.insert(res.backbone_params.begin(), res.backbone_params.end());

  AdamConfig ac;
  ac.lr = cfg.train.lr;
  Adam opt(ac);

  const int n = static_cast<int>(train_data.size());
  const int steps_per_epoch = (n + cfg.train.batch - 1) / cfg.train.batch;
  double epoch_loss = 0.0;
  int epoch_steps = 0;

  auto val_f1_now = [&]() {
    if (val_data.empty()) return 0.0;
    ParamMap head_now = detach_params(trainable);
    ParamMap bb_now = unfreeze ? detach_params(trainable) : res.backbone_params;
    std::vector<Tensor> probs;
    probs.reserve(val_data.size());
    for (size_t i = 0; i < val_data.size(); ++i) {
      FeaturePyramid fa, fb;
      if (unfreeze) {
        std::tie(fa, fb) = extract_pair_features(cfg.unet, bb_now, s, val_data[i].imgA,
                                                 val_data[i].imgB, cfg.features, i);
      } else {
        fa = vf.a[i];
        fb = vf.b[i];
      }
      FusedFeatures fused = fdaf_fuse(fa, fb, head_now, cfg.fdaf);
      probs.push_back(sigmoid(classify(fused, head_now, cfg.cd, H, W)));
    }
    return micro_metrics(probs, val_masks, cfg.cd.tau).f1;
  };

  for (int step = 0; step < cfg.train.steps; ++step) {
    Tensor loss;
    for (int b = 0; b < cfg.train.batch; ++b) {
      int idx = static_cast<int>(rng.uniform_int(0, n - 1));
      FeaturePyramid fa, fb;
      if (unfreeze) {
        std::tie(fa, fb) = extract_pair_features(cfg.unet, trainable, s, train_data[idx].imgA,
                                                 train_data[idx].imgB, cfg.features,
                                                 static_cast<std::uint64_t>(idx));
      } else {
        fa = tf.a[idx];
        fb = tf.b[idx];
      }
      FusedFeatures fused = fdaf_fuse(fa, fb, trainable, cfg.fdaf);
      Tensor l = bce_loss(classify(fused, trainable, cfg.cd, H, W), train_masks[idx]);
      loss = b == 0 ? l : add(loss, l);
    }
    loss = mul_scalar(loss, 1.0 / cfg.train.batch);
    double lv = loss.scalar_value();
    if (!std::isfinite(lv))
      throw numeric_error("cd loss became non-finite at step " + std::to_string(step));
    epoch_loss += lv;
    ++epoch_steps;

    GradMap grads = backward(loss);
    opt.step(trainable, grads);

    if ((step + 1) % steps_per_epoch == 0 || step + 1 == cfg.train.steps) {
      CdEpochStat stat;
      stat.epoch = static_cast<int>(res.epochs.size()) + 1;
      stat.train_loss = epoch_loss / epoch_steps;
      stat.val_f1 = val_f1_now();
      res.epochs.push_back(stat);
      if (log)
        *log << "epoch " << stat.epoch << " train_loss " << stat.train_loss << " val_f1 "
             << stat.val_f1 << "\n";
      epoch_loss = 0.0;
      epoch_steps = 0;
    }
  }

  // Hand back the trained pieces, split by ownership.
  for (auto& [name, t] : res.head_params) t = trainable.at(name);
  if (unfreeze)
    for (auto& [name, t] : res.backbone_params) t = trainable.at(name);
  return res;
}

Tensor predict_prob(const RunConfig& cfg, const ParamMap& backbone, const ParamMap& head,
                    const Tensor& imgA, const Tensor& imgB, std::uint64_t sample_index) {
  cfg.validate();
  if (!imgA.same_shape(imgB))
    throw contract_error("image extents differ: " + shape_str(imgA.shape()) + " vs " +
                         shape_str(imgB.shape()));
  const Shape& ish = imgA.shape();
  if (ish.size() != 3 || ish[0] != 1)
    throw contract_error("expected 1xHxW images, got " + shape_str(ish));
  NoiseSchedule s = schedule_of(cfg);
  ParamMap bb = detach_params(backbone);
  ParamMap hd = detach_params(head);
  auto [fa, fb] = extract_pair_features(cfg.unet, bb, s, imgA.detach(), imgB.detach(),
                                        cfg.features, sample_index);
  FusedFeatures fused = fdaf_fuse(fa, fb, hd, cfg.fdaf);
  return sigmoid(classify(fused, hd, cfg.cd, ish[1], ish[2]));
}

EvalResult evaluate_dataset(const RunConfig& cfg, const ParamMap& backbone,
                            const ParamMap& head, const std::vector<SamplePair>& data,
                            const FeatureCache* shared) {
  cfg.validate();
  if (data.empty()) throw contract_error("evaluate_dataset: empty dataset");
  if (shared && shared->a.size() != data.size())
    throw contract_error("evaluate_dataset: shared feature cache size mismatch");
  NoiseSchedule s = schedule_of(cfg);
  ParamMap hd = detach_params(head);
  FeatureCache local;
  if (!shared) local = extract_all_features(cfg.unet, backbone, s, data, cfg.features);
  const FeatureCache& feats = shared ? *shared : local;

  const Shape& ish = data[0].imgA.shape();
  EvalResult res;
  std::vector<Tensor> masks;
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    FusedFeatures fused = fdaf_fuse(feats.a[i], feats.b[i], hd, cfg.fdaf);
    Tensor prob = sigmoid(classify(fused, hd, cfg.cd, ish[1], ish[2]));
    Tensor mask = mask_chw(data[i].mask);
    MetricsReport r = evaluate(threshold(prob, cfg.cd.tau), mask);
    r.tau = cfg.cd.tau;
    tp += r.tp;
    fp += r.fp;
    fn += r.fn;
    tn += r.tn;
    res.per_sample.push_back(r);
    res.probs.push_back(std::move(prob));
    masks.push_back(std::move(mask));
  }
  res.aggregate = metrics_from_counts(tp, fp, fn, tn, cfg.cd.tau);

  for (int i = 1; i <= 19; ++i) {
    double tau = i * 0.05;
    MetricsReport r = micro_metrics(res.probs, masks, tau);
    if (i == 1 || r.f1 > res.best_tau_f1) {
      res.best_tau = tau;
      res.best_tau_f1 = r.f1;
    }
  }
  return res;
}

} // namespace cdt
