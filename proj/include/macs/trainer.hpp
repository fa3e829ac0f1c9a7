#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "macs/augmentor.hpp"
#include "macs/common.hpp"
#include "macs/data.hpp"
#include "macs/eval.hpp"
#include "macs/losses.hpp"
#include "macs/model.hpp"
#include "macs/stratifier.hpp"
#include "macs/switcher.hpp"

namespace macs {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 90;
  double lr0 = 0.1;
  double lr_decay = 0.1;
  int lr_step_epochs = 10;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  double clip_seconds = 1.0;  // temporal scale of the dynamic networks
  AugmentConfig augment;
  ProjectorConfig projector;
  StratifierConfig stratifier;
  ContrastiveConfig contrastive;
  // Encoder knobs not derivable from data.
  int d1 = 0;
  bool layer_norm = true;
  int temporal_kernel = 25;
  double eps_spd = 1e-5;
  double eps_reig = 1e-4;
  EncoderConfig::Attention attention = EncoderConfig::Attention::Mixed;
  EncoderConfig::Sync sync = EncoderConfig::Sync::Covariance;
  /// Full MACS, or the "w/o CS" ablation: plain cross-entropy on all train
  /// labels with no stratification, augmentation, blending or contrast.
  enum class Mode { Full, PlainCE };
  Mode mode = Mode::Full;
  double alpha_expected = -1.0;  // diagnostic only, recorded in manifests

  void validate() const {
    if (epochs <= 0 || batch_size < 4 || lr0 < 0 || lr_step_epochs <= 0)
      throw std::invalid_argument("train config: epochs > 0, batch >= 4, lr0 >= 0 required");
    if (momentum < 0 || momentum >= 1 || weight_decay < 0)
      throw std::invalid_argument("train config: bad momentum/weight decay");
    if (clip_seconds <= 0) throw std::invalid_argument("train config: clip_seconds must be > 0");
    augment.validate();
    projector.validate();
    stratifier.validate();
    contrastive.validate();
  }

  EncoderConfig encoder_for(const FragmentSet& fs) const {
    EncoderConfig e;
    e.d = fs.channels;
    e.d1 = d1;
    e.clip_count = static_cast<int>(fs.samples / (fs.sample_rate * clip_seconds));
    e.temporal_kernel = temporal_kernel;
    e.layer_norm = layer_norm;
    e.eps_spd = eps_spd;
    e.eps_reig = eps_reig;
    e.attention = attention;
    e.sync = sync;
    e.validate();
    return e;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"lr0", c.lr0},
      {"lr_decay", c.lr_decay},
      {"lr_step_epochs", c.lr_step_epochs},
      {"momentum", c.momentum},
      {"weight_decay", c.weight_decay},
      {"seed", c.seed},
      {"clip_seconds", c.clip_seconds},
      {"sigma_lo", c.augment.sigma_lo},
      {"sigma_hi", c.augment.sigma_hi},
      {"sigma_scale_by_signal_std", c.augment.scale_by_signal_std},
      {"hidden", c.projector.hidden},
      {"z_dim", c.projector.z_dim},
      {"k", c.stratifier.k},
      {"warmup_epochs", c.stratifier.warmup_epochs},
      {"tau", c.contrastive.tau},
      {"memory", c.contrastive.memory},
      {"memory_positives", c.contrastive.memory_positives},
      {"d1", c.d1},
      {"layer_norm", c.layer_norm},
      {"temporal_kernel", c.temporal_kernel},
      {"eps_spd", c.eps_spd},
      {"eps_reig", c.eps_reig},
      {"attention", c.attention == EncoderConfig::Attention::Mixed ? "mixed" : "literal"},
      {"sync", c.sync == EncoderConfig::Sync::Covariance ? "covariance" : "correlation"},
      {"mode", c.mode == TrainConfig::Mode::Full ? "full" : "wo_cs"},
      {"alpha_expected", c.alpha_expected},
  };
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("lr0", c.lr0);
  get("lr_decay", c.lr_decay);
  get("lr_step_epochs", c.lr_step_epochs);
  get("momentum", c.momentum);
  get("weight_decay", c.weight_decay);
  get("seed", c.seed);
  get("clip_seconds", c.clip_seconds);
  get("sigma_lo", c.augment.sigma_lo);
  get("sigma_hi", c.augment.sigma_hi);
  get("sigma_scale_by_signal_std", c.augment.scale_by_signal_std);
  get("hidden", c.projector.hidden);
  get("z_dim", c.projector.z_dim);
  get("k", c.stratifier.k);
  get("warmup_epochs", c.stratifier.warmup_epochs);
  get("tau", c.contrastive.tau);
  get("memory", c.contrastive.memory);
  get("memory_positives", c.contrastive.memory_positives);
  get("d1", c.d1);
  get("layer_norm", c.layer_norm);
  get("temporal_kernel", c.temporal_kernel);
  get("eps_spd", c.eps_spd);
  get("eps_reig", c.eps_reig);
  if (j.contains("attention"))
    c.attention = j.at("attention").get<std::string>() == "literal"
                      ? EncoderConfig::Attention::Literal
                      : EncoderConfig::Attention::Mixed;
  if (j.contains("sync"))
    c.sync = j.at("sync").get<std::string>() == "correlation" ? EncoderConfig::Sync::Correlation
                                                              : EncoderConfig::Sync::Covariance;
  if (j.contains("mode"))
    c.mode = j.at("mode").get<std::string>() == "wo_cs" ? TrainConfig::Mode::PlainCE
                                                        : TrainConfig::Mode::Full;
  get("alpha_expected", c.alpha_expected);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// SGD with momentum, decoupled per-tensor weight-decay flags, and Stiefel
/// updates for the attention maps: their Euclidean gradient is projected onto
/// the tangent space of the orthonormal manifold before the momentum update,
/// and the parameter is QR-retracted after the step.
///   v <- momentum * v + (g + wd * theta);  theta <- theta - lr * v
struct SgdState {
  std::vector<Tensor> velocity;

  void ensure(const std::vector<ParamRef>& refs) {
    if (velocity.size() == refs.size()) return;
    velocity.clear();
    for (const ParamRef& r : refs) velocity.push_back(Tensor(r.tensor->shape));
  }
};

/// G - W sym(Wᵀ G): tangent projection at W for orthonormal-column W. Radial
/// components would be undone by the retraction anyway, but left in the
/// momentum buffer they destabilize the update.
inline Tensor stiefel_tangent(const Tensor& w, const Tensor& g) {
  const int n = w.dim(0), k = w.dim(1);
  Tensor wtg({k, k});
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) {
      double acc = 0.0;
      for (int r = 0; r < n; ++r) acc += w.at(r, a) * g.at(r, b);
      wtg.at(a, b) = acc;
    }
  Tensor out = g;
  for (int r = 0; r < n; ++r)
    for (int b = 0; b < k; ++b) {
      double acc = 0.0;
      for (int a = 0; a < k; ++a) acc += w.at(r, a) * 0.5 * (wtg.at(a, b) + wtg.at(b, a));
      out.at(r, b) -= acc;
    }
  return out;
}

inline void sgd_step(std::vector<ParamRef>& refs, const std::vector<Tensor>& grads,
                     SgdState& state, double lr, double momentum, double weight_decay) {
  state.ensure(refs);
  for (std::size_t p = 0; p < refs.size(); ++p) {
    Tensor& theta = *refs[p].tensor;
    Tensor& vel = state.velocity[p];
    const double wd = refs[p].weight_decay ? weight_decay : 0.0;
    const Tensor g = refs[p].retract ? stiefel_tangent(theta, grads[p]) : grads[p];
    for (int i = 0; i < theta.numel(); ++i) {
      const double grad = g.v[i] + wd * theta.v[i];
      vel.v[i] = momentum * vel.v[i] + grad;
      theta.v[i] -= lr * vel.v[i];
    }
    if (refs[p].retract) *refs[p].tensor = qr_orthonormalize(*refs[p].tensor);
  }
}

// ---------------------------------------------------------------------------
// Step
// ---------------------------------------------------------------------------

struct StepInputs {
  std::vector<Tensor> raw;  // batch signals, f64
  std::vector<int> train_labels;
  std::vector<char> trusted;
  std::vector<Tensor> aux;  // per-sample detached soft targets (distrusted path)
  std::uint64_t step_seed = 0;
};

struct StepStats {
  double ag = 0, sw = 0, st = 0, dl = 0, total = 0;
  int skipped_anchors = 0;
};

/// One full MACS optimization step: augment dual views, route through the
/// switcher, encode/project every path, assemble the confidence-constrained
/// losses, backprop, SGD step, retraction, memory push.
inline StepStats train_step(ModelParams& params, SgdState& opt, MemoryBank& memory,
                            const StepInputs& in, const TrainConfig& cfg,
                            const EncoderConfig& ecfg, double lr, SpdStats* spd = nullptr) {
  const int n = static_cast<int>(in.raw.size());
  if (n == 0) throw std::invalid_argument("train_step: empty batch");

  std::vector<Tensor> views_a(n), views_b(n);
  for (int i = 0; i < n; ++i) {
    auto [a, b] = dual_views(in.raw[i], cfg.augment, mix_seed(in.step_seed, 0xa09, i));
    views_a[i] = std::move(a);
    views_b[i] = std::move(b);
  }
  const std::vector<BlendDraw> draws = make_blend_draws(in.trusted, mix_seed(in.step_seed, 0x51));
  const std::vector<RoutedSample> routed =
      route(in.raw, views_a, views_b, in.train_labels, in.trusted, draws);

  ad::Tape tape;
  ModelVars mv = lift(tape, params);

  std::vector<ViewLatent> views;
  std::vector<DlSample> dl_samples;
  views.reserve(2 * n);
  for (int i = 0; i < n; ++i) {
    const RoutedSample& r = routed[i];
    for (const Tensor* sig : {&r.view_a, &r.view_b}) {
      ad::Var emb = encode(tape, mv.enc, tape.constant(*sig), ecfg, spd);
      LatentResult lat = latent(tape, mv.proj, emb);
      ViewLatent v;
      v.z = lat.z;
      v.ok = lat.ok;
      v.sample = i;
      v.label = r.y_star;
      v.trusted = in.trusted[i];
      v.lambda = r.lambda;
      v.label_plus = r.y_plus;
      views.push_back(v);
    }
    ad::Var clean_emb = encode(tape, mv.enc, tape.constant(r.clean), ecfg, spd);
    DlSample d;
    d.probs = classify_probs(tape, mv.proj, clean_emb);
    d.trusted = in.trusted[i];
    d.y_star = r.y_star;
    d.y_plus = r.y_plus;
    d.lambda = r.lambda;
    d.aux = in.aux[i];
    dl_samples.push_back(d);
  }

  LossParts parts = total_loss(tape, views, memory, dl_samples, cfg.contrastive);
  StepStats stats;
  stats.ag = tape.val(parts.ag).v[0];
  stats.sw = tape.val(parts.sw).v[0];
  stats.st = tape.val(parts.st).v[0];
  stats.dl = tape.val(parts.dl).v[0];
  stats.total = tape.val(parts.total).v[0];
  stats.skipped_anchors = parts.skipped_ag + parts.skipped_sw + parts.skipped_st;
  if (!std::isfinite(stats.total)) {
    std::string ids;
    for (int i = 0; i < n; ++i) ids += (i ? "," : "") + std::to_string(i);
    throw NumericalError("train_step: non-finite loss (ag=" + fmt_double(stats.ag) +
                         " sw=" + fmt_double(stats.sw) + " st=" + fmt_double(stats.st) +
                         " dl=" + fmt_double(stats.dl) + ") on batch [" + ids + "]");
  }

  tape.backward(parts.total);
  auto refs = named_params(params);
  std::vector<ad::Var> vars = var_list(mv);
  std::vector<Tensor> grads;
  grads.reserve(vars.size());
  for (ad::Var v : vars) grads.push_back(tape.grad(v));
  sgd_step(refs, grads, opt, lr, cfg.momentum, cfg.weight_decay);

  for (const ViewLatent& v : views)
    if (v.ok) memory.push(tape.val(v.z), v.label, v.trusted, v.lambda);
  return stats;
}

/// "w/o CS" ablation step: cross-entropy on every train label, no views, no
/// gating, no contrast, no memory.
inline StepStats plain_ce_step(ModelParams& params, SgdState& opt, const StepInputs& in,
                               const TrainConfig& cfg, const EncoderConfig& ecfg, double lr) {
  ad::Tape tape;
  ModelVars mv = lift(tape, params);
  std::vector<DlSample> dl_samples;
  for (std::size_t i = 0; i < in.raw.size(); ++i) {
    ad::Var emb = encode(tape, mv.enc, tape.constant(in.raw[i]), ecfg);
    DlSample d;
    d.probs = classify_probs(tape, mv.proj, emb);
    d.trusted = true;
    d.y_star = in.train_labels[i];
    d.y_plus = in.train_labels[i];
    d.lambda = 1.0;
    dl_samples.push_back(d);
  }
  ad::Var loss = loss_dl(tape, dl_samples);
  StepStats stats;
  stats.dl = stats.total = tape.val(loss).v[0];
  if (!std::isfinite(stats.total)) throw NumericalError("plain_ce_step: non-finite loss");
  tape.backward(loss);
  auto refs = named_params(params);
  std::vector<ad::Var> vars = var_list(mv);
  std::vector<Tensor> grads;
  for (ad::Var v : vars) grads.push_back(tape.grad(v));
  sgd_step(refs, grads, opt, lr, cfg.momentum, cfg.weight_decay);
  return stats;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  int trusted0 = 0, trusted1 = 0;
  double strat_precision = 0.0, strat_recall = 0.0;
  bool strat_fallback = false;
  double train_frag_acc = 0.0;   // on the epoch-start clean pass, vs train labels
  double eval_frag_acc = -1.0;   // -1 when no eval set
  double eval_subj_acc = -1.0;
};

struct StepLog {
  int step = 0;
  double ag = 0, sw = 0, st = 0, dl = 0, total = 0;
};

struct TrainResult {
  ModelParams params;       // final epoch
  ModelParams best_params;  // best eval fragment accuracy (== final without eval set)
  int best_epoch = -1;
  std::vector<EpochLog> epoch_logs;
  std::vector<StepLog> step_logs;
  EncoderConfig encoder_config;
};

inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  return cfg.lr0 * std::pow(cfg.lr_decay, epoch / cfg.lr_step_epochs);
}

/// Class-stratified shuffled batches: both classes appear in every batch in
/// dataset proportion, so supervised-contrast positives exist everywhere.
inline std::vector<std::vector<int>> stratified_batches(const std::vector<int>& labels,
                                                        int batch_size, std::uint64_t seed) {
  std::vector<int> by_class[2];
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) by_class[labels[i]].push_back(i);
  Rng rng(mix_seed(seed, 0xba7c4));
  for (auto& ids : by_class)
    for (int i = static_cast<int>(ids.size()) - 1; i > 0; --i)
      std::swap(ids[i], ids[rng.below(static_cast<std::uint64_t>(i) + 1)]);

  const long n = static_cast<long>(labels.size());
  const long n1 = static_cast<long>(by_class[1].size());
  std::vector<int> order;
  order.reserve(n);
  std::size_t i0 = 0, i1 = 0;
  long err = 0;
  for (long s = 0; s < n; ++s) {
    err += n1;
    if (err * 2 >= n && i1 < by_class[1].size()) {
      order.push_back(by_class[1][i1++]);
      err -= n;
    } else if (i0 < by_class[0].size()) {
      order.push_back(by_class[0][i0++]);
    } else {
      order.push_back(by_class[1][i1++]);
    }
  }
  std::vector<std::vector<int>> batches;
  for (long s = 0; s < n; s += batch_size) {
    std::vector<int> b(order.begin() + s, order.begin() + std::min<long>(s + batch_size, n));
    if (b.size() >= 2) batches.push_back(std::move(b));
  }
  return batches;
}

struct DatasetPass {
  std::vector<Tensor> latents;
  std::vector<Tensor> probs;
  std::vector<int> predictions;
};

inline DatasetPass dataset_forward(const ModelParams& params, const FragmentSet& fs,
                                   const EncoderConfig& ecfg) {
  DatasetPass out;
  out.latents.reserve(fs.size());
  for (const Fragment& f : fs.fragments) {
    FragmentForward fwd = forward_fragment(params, f.tensor(), ecfg);
    out.latents.push_back(std::move(fwd.z));
    out.predictions.push_back(fwd.probs[1] >= 0.5 ? 1 : 0);
    out.probs.push_back(std::move(fwd.probs));
  }
  return out;
}

/// Algorithm-1 training loop. Per epoch: a gradient-free forward pass over
/// the train set feeds the stratifier (neighbor pool = fresh latents plus the
/// memory bank); batches are stratified-shuffled; each step augments, routes,
/// encodes and applies the confidence-constrained objective. Deterministic
/// given (archive, config, seed).
inline TrainResult train(const FragmentSet& fs, const TrainConfig& cfg,
                         const FragmentSet* eval_set = nullptr) {
  cfg.validate();
  if (fs.fragments.empty()) throw std::invalid_argument("train: empty fragment set");
  std::vector<int> train_labels, true_labels;
  for (const Fragment& f : fs.fragments) {
    train_labels.push_back(f.train_label);
    true_labels.push_back(f.true_label);
  }
  if (std::count(train_labels.begin(), train_labels.end(), 0) == 0 ||
      std::count(train_labels.begin(), train_labels.end(), 1) == 0)
    throw std::invalid_argument("train: both classes must be present in train labels");
  if (cfg.stratifier.k >= fs.size())
    throw std::invalid_argument("train: stratifier K must be below the dataset size");

  const EncoderConfig ecfg = cfg.encoder_for(fs);
  TrainResult result;
  result.encoder_config = ecfg;
  result.params = init_params(ecfg, cfg.projector, mix_seed(cfg.seed, 0x1a17));
  SgdState opt;
  MemoryBank memory(cfg.mode == TrainConfig::Mode::Full ? cfg.contrastive.memory : 0);

  std::vector<Tensor> raw_cache;
  raw_cache.reserve(fs.size());
  for (const Fragment& f : fs.fragments) raw_cache.push_back(f.tensor());

  double best_acc = -1.0;
  int step_counter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    EpochLog elog;
    elog.epoch = epoch;
    elog.lr = lr;

    ConfidencePartition part;
    if (cfg.mode == TrainConfig::Mode::Full) {
      DatasetPass pass = dataset_forward(result.params, fs, ecfg);
      int agree = 0;
      for (int i = 0; i < fs.size(); ++i) agree += pass.predictions[i] == train_labels[i];
      elog.train_frag_acc = static_cast<double>(agree) / fs.size();

      std::vector<Tensor> mem_z;
      std::vector<int> mem_y;
      for (int m = 0; m < memory.size(); ++m) {
        mem_z.push_back(memory.entry(m).z);
        mem_y.push_back(memory.entry(m).label);
      }
      part = stratify(pass.latents, train_labels, pass.probs, cfg.stratifier, epoch, mem_z, mem_y);
      const StratifierDiagnostics diag = stratifier_diagnostics(part, train_labels, true_labels);
      elog.trusted0 = diag.trusted_count[0];
      elog.trusted1 = diag.trusted_count[1];
      elog.strat_precision = diag.precision;
      elog.strat_recall = diag.recall;
      elog.strat_fallback = part.all_distrusted_fallback;
    }

    const auto batches =
        stratified_batches(train_labels, cfg.batch_size, mix_seed(cfg.seed, 0xe90c, epoch));
    for (const std::vector<int>& batch : batches) {
      StepInputs in;
      in.step_seed = mix_seed(cfg.seed, 0x57e9, epoch, step_counter);
      for (int id : batch) {
        in.raw.push_back(raw_cache[id]);
        in.train_labels.push_back(train_labels[id]);
        if (cfg.mode == TrainConfig::Mode::Full) {
          in.trusted.push_back(part.is_trusted[id]);
          in.aux.push_back(part.aux_labels[id]);
        }
      }
      StepStats stats;
      if (cfg.mode == TrainConfig::Mode::Full) {
        stats = train_step(result.params, opt, memory, in, cfg, ecfg, lr);
      } else {
        stats = plain_ce_step(result.params, opt, in, cfg, ecfg, lr);
      }
      result.step_logs.push_back(
          StepLog{step_counter, stats.ag, stats.sw, stats.st, stats.dl, stats.total});
      ++step_counter;
    }

    if (eval_set != nullptr) {
      DatasetPass ev = dataset_forward(result.params, *eval_set, ecfg);
      std::vector<int> truths;
      std::vector<double> prob1;
      std::vector<int> subjects;
      std::map<int, int> subject_truth;
      for (int i = 0; i < eval_set->size(); ++i) {
        const Fragment& f = eval_set->fragments[i];
        truths.push_back(f.true_label);
        prob1.push_back(ev.probs[i][1]);
        subjects.push_back(f.subject_id);
        subject_truth[f.subject_id] = f.true_label;
      }
      elog.eval_frag_acc = fragment_metrics(ev.predictions, truths).accuracy;
      elog.eval_subj_acc = subject_metrics(subject_ensemble(prob1, subjects, subject_truth)).accuracy;
      if (elog.eval_frag_acc > best_acc) {
        best_acc = elog.eval_frag_acc;
        result.best_params = result.params;
        result.best_epoch = epoch;
      }
    }
    result.epoch_logs.push_back(elog);
    log_info("epoch " + std::to_string(epoch) + " lr " + fmt_double(lr) + " trusted " +
             std::to_string(elog.trusted0 + elog.trusted1) + "/" + std::to_string(fs.size()) +
             (elog.eval_frag_acc >= 0 ? " eval_acc " + fmt_double(elog.eval_frag_acc) : ""));
  }
  if (result.best_epoch < 0) {
    result.best_params = result.params;
    result.best_epoch = cfg.epochs - 1;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Subject-independent folds
// ---------------------------------------------------------------------------

/// Partitions subjects (never fragments) into n_folds folds with per-class
/// balance within one subject.
inline std::vector<std::vector<int>> subject_split(const FragmentSet& fs, int n_folds,
                                                   std::uint64_t seed) {
  if (n_folds <= 0) throw std::invalid_argument("subject_split: n_folds must be positive");
  std::map<int, int> subject_class;
  for (const Fragment& f : fs.fragments) subject_class[f.subject_id] = f.true_label;
  std::vector<int> by_class[2];
  for (const auto& [sid, cls] : subject_class) by_class[cls].push_back(sid);
  for (const auto& ids : by_class)
    if (static_cast<int>(ids.size()) < n_folds)
      throw std::invalid_argument("subject_split: a class has fewer subjects than folds");

  Rng rng(mix_seed(seed, 0xf01d));
  std::vector<std::vector<int>> folds(n_folds);
  for (auto& ids : by_class) {
    for (int i = static_cast<int>(ids.size()) - 1; i > 0; --i)
      std::swap(ids[i], ids[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    for (std::size_t i = 0; i < ids.size(); ++i) folds[i % n_folds].push_back(ids[i]);
  }
  for (auto& fold : folds) std::sort(fold.begin(), fold.end());
  return folds;
}

/// Splits a fragment set into (inside, outside) by subject membership.
inline std::pair<FragmentSet, FragmentSet> split_by_subjects(const FragmentSet& fs,
                                                             const std::vector<int>& subjects) {
  FragmentSet in = fs, out = fs;
  in.fragments.clear();
  out.fragments.clear();
  for (const Fragment& f : fs.fragments) {
    const bool inside =
        std::find(subjects.begin(), subjects.end(), f.subject_id) != subjects.end();
    (inside ? in : out).fragments.push_back(f);
  }
  return {in, out};
}

}  // namespace macs
