#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "macs/autodiff.hpp"
#include "macs/common.hpp"
#include "macs/linalg.hpp"
#include "macs/tensor.hpp"

namespace macs {

struct EncoderConfig {
  int d = 8;                 // input channels
  int d1 = 0;                // bilinear map width; 0 = ceil(d/2)
  int clip_count = 2;        // I; one dynamic network per clip
  int temporal_kernel = 25;  // samples; 100 ms at 250 Hz
  bool layer_norm = true;
  double eps_spd = 1e-5;     // eigenvalue floor entering the manifold
  double eps_reig = 1e-4;    // eigenvalue floor of the rectifier
  enum class Attention {
    Mixed,    // softmax weights modulate a symmetric mix of log V_i and log V_j
    Literal,  // weights multiply log V_i only (collapses to weight 1 under softmax)
  };
  Attention attention = Attention::Mixed;
  enum class Sync { Covariance, Correlation };
  Sync sync = Sync::Covariance;

  int resolved_d1() const { return d1 > 0 ? d1 : (d + 1) / 2; }
  int embedding_dim() const {
    const int k = resolved_d1();
    return clip_count * k * (k + 1) / 2;
  }

  void validate() const {
    if (d <= 0 || clip_count < 2)
      throw std::invalid_argument("encoder config: need d > 0 and clip_count >= 2");
    if (temporal_kernel <= 0 || temporal_kernel % 2 == 0)
      throw std::invalid_argument("encoder config: temporal kernel must be odd and positive");
    if (resolved_d1() > d)
      throw std::invalid_argument("encoder config: d1 may not exceed d");
    if (eps_spd <= 0 || eps_reig <= 0)
      throw std::invalid_argument("encoder config: eigenvalue floors must be positive");
  }
};

/// Learnable tensors of the encoder: convolution starter (spatial mixing
/// kernels, depthwise temporal kernels, per-channel normalization) and the
/// three bilinear attention maps with orthonormal columns.
struct EncoderParams {
  Tensor spatial_w;   // {d,d}
  Tensor temporal_k;  // {d,K}
  Tensor ln_gamma;    // {d}
  Tensor ln_beta;     // {d}
  Tensor w_q, w_k, w_v;  // {d,d1}
};

struct EncoderVars {
  ad::Var spatial_w, temporal_k, ln_gamma, ln_beta, w_q, w_k, w_v;
};

/// Counters for the SPD-boundary instrumentation and guard clamps. observe()
/// re-eigendecomposes the matrix, so it is meant for tests and diagnostics.
struct SpdStats {
  long checks = 0;
  long violations = 0;
  long guard_clamps = 0;
  double worst_asym = 0.0;
  double worst_floor_ratio = std::numeric_limits<double>::infinity();  // min-eig / floor

  void observe(const Tensor& m, double floor) {
    ++checks;
    double asym = 0.0;
    for (int i = 0; i < m.dim(0); ++i)
      for (int j = 0; j < m.dim(1); ++j)
        asym = std::max(asym, std::abs(m.at(i, j) - m.at(j, i)));
    const SymEigResult e = sym_eig(m);
    const double ratio = e.lambda[0] / floor;
    worst_asym = std::max(worst_asym, asym);
    worst_floor_ratio = std::min(worst_floor_ratio, ratio);
    if (asym > 1e-10 || ratio < 0.5) ++violations;
  }
};

// ---------------------------------------------------------------------------
// Manifold primitives (tape graph builders; values are available eagerly)
// ---------------------------------------------------------------------------

namespace spd {

/// U diag(f(clamped λ)) Uᵀ where the eigenvalue floor keeps the log/exp
/// in-domain. Returns the rebuilt matrix; reports whether the floor bound.
struct EigMapResult {
  ad::Var matrix;
  bool clamped = false;
  double min_eig = 0.0;
};

enum class EigMapFn { Log, ClampOnly, ExpClamp };

inline EigMapResult eig_map(ad::Tape& t, ad::Var x, EigMapFn fn, double floor) {
  auto e = ad::symeig(x);
  EigMapResult r;
  r.min_eig = t.val(e.lambda)[0];
  ad::Var g;
  switch (fn) {
    case EigMapFn::Log:
      r.clamped = r.min_eig < floor;
      g = ad::log(ad::clamp_min(e.lambda, floor));
      break;
    case EigMapFn::ClampOnly:
      r.clamped = r.min_eig < floor;
      g = ad::clamp_min(e.lambda, floor);
      break;
    case EigMapFn::ExpClamp: {
      ad::Var ex = ad::exp(e.lambda);
      r.clamped = std::exp(r.min_eig) < floor;
      g = ad::clamp_min(ex, floor);
      break;
    }
  }
  r.matrix = ad::matmul(ad::matmul(e.u, ad::diag_embed(g)), ad::transpose(e.u));
  return r;
}

/// Matrix logarithm of an SPD matrix (guarded by an eigenvalue floor).
inline ad::Var log_spd(ad::Tape& t, ad::Var x, double floor, SpdStats* stats = nullptr) {
  EigMapResult r = eig_map(t, x, EigMapFn::Log, floor);
  if (r.clamped) {
    if (stats != nullptr) ++stats->guard_clamps;
    log_warn("log_spd: eigenvalue floor bound (min eig " + fmt_double(r.min_eig) + ")");
  }
  return r.matrix;
}

}  // namespace spd

/// Convolution starter: channel-mixing convolution, depthwise temporal
/// convolution (same padding, stride 1), per-channel normalization, tanh.
inline ad::Var starter(ad::Tape& /*tape*/, const EncoderVars& p, ad::Var x,
                       const EncoderConfig& cfg) {
  ad::Var h = ad::channel_conv(x, p.spatial_w);
  h = ad::time_conv(h, p.temporal_k);
  if (cfg.layer_norm) h = ad::layer_norm_rows(h, p.ln_gamma, p.ln_beta);
  return ad::tanh(h);
}

/// Partitions features into clip_count non-overlapping contiguous clips along
/// time; a trailing remainder is dropped.
inline std::vector<ad::Var> clip(ad::Tape& t, ad::Var features, int clip_count) {
  if (clip_count <= 0) throw std::invalid_argument("clip: clip count must be positive");
  const Tensor& f = t.val(features);
  const int len = f.dim(1) / clip_count;
  if (len < 1)
    throw std::invalid_argument("clip: " + std::to_string(clip_count) +
                                " clips do not fit into " + std::to_string(f.dim(1)) +
                                " samples");
  std::vector<ad::Var> clips;
  clips.reserve(clip_count);
  for (int i = 0; i < clip_count; ++i) clips.push_back(ad::slice_cols(features, i * len, len));
  return clips;
}

/// Synchronization analyzer: row-centered sample covariance of the clip
/// (optionally normalized to correlation), symmetrized.
inline ad::Var sync(ad::Tape& t, ad::Var clip_features,
                    EncoderConfig::Sync mode = EncoderConfig::Sync::Covariance) {
  const Tensor& c = t.val(clip_features);
  const int d = c.dim(0);
  const int len = c.dim(1);
  if (len < 2) throw std::invalid_argument("sync: clip length must be at least 2");
  ad::Var ones = t.constant(Tensor::full({len}, 1.0));
  ad::Var mean = ad::scalar_mul(ad::matmul(clip_features, ones), 1.0 / len);
  ad::Var mean_mat = ad::matmul(ad::reshape(mean, {d, 1}), t.constant(Tensor::full({1, len}, 1.0)));
  ad::Var centered = ad::sub(clip_features, mean_mat);
  ad::Var cov = ad::scalar_mul(ad::matmul(centered, ad::transpose(centered)), 1.0 / (len - 1));
  cov = ad::scalar_mul(ad::add(cov, ad::transpose(cov)), 0.5);
  if (mode == EncoderConfig::Sync::Correlation) {
    ad::Var inv_sd = ad::exp(ad::scalar_mul(ad::log(ad::clamp_min(ad::diag_part(cov), 1e-12)), -0.5));
    ad::Var scale = ad::diag_embed(inv_sd);
    cov = ad::matmul(ad::matmul(scale, cov), scale);
    cov = ad::scalar_mul(ad::add(cov, ad::transpose(cov)), 0.5);
  }
  return cov;
}

/// Manifold converter: eigenvalue floor restores strict positive
/// definiteness of the (possibly rank-deficient) network matrix.
inline ad::Var to_spd(ad::Tape& t, ad::Var phi, double eps_spd, SpdStats* stats = nullptr) {
  spd::EigMapResult r = spd::eig_map(t, phi, spd::EigMapFn::ClampOnly, eps_spd);
  if (stats != nullptr) stats->observe(t.val(r.matrix), eps_spd);
  return r.matrix;
}

/// Squared log-Euclidean distance ‖log X − log Y‖_F².
inline ad::Var le_dist(ad::Tape& t, ad::Var x, ad::Var y, double eps_floor = 1e-12) {
  ad::Var lx = spd::log_spd(t, x, eps_floor);
  ad::Var ly = spd::log_spd(t, y, eps_floor);
  ad::Var diff = ad::sub(lx, ly);
  const int n = t.val(diff).numel();
  ad::Var flat = ad::reshape(diff, {n});
  return ad::dot(flat, flat);
}

/// Value-level convenience for tests and diagnostics.
inline double le_dist_value(const Tensor& x, const Tensor& y) {
  ad::Tape t;
  return t.val(le_dist(t, t.constant(x), t.constant(y))).v[0];
}

/// Bilinear map WᵀXW; SPD-preserving for full-column-rank W. A rank-deficient
/// W is survivable: downstream eigenvalue floors clamp and warn.
inline ad::Var bimap(ad::Tape& /*tape*/, ad::Var w, ad::Var x) {
  return ad::matmul(ad::matmul(ad::transpose(w), x), w);
}

/// Cross-temporal manifold attention. For each clip i the softmax over
/// j != i of the negated log-Euclidean distance between f_{W_k}(D_i) and
/// f_{W_q}(D_j) weights the aggregation of value tangents:
///   Mixed:   F_i = Σ_{j != i} a_ij · ½ (log f_{W_v}(D_i) + log f_{W_v}(D_j))
///   Literal: F_i = (Σ_{j != i} a_ij) · log f_{W_v}(D_i)
/// Literal keeps the printed form, where the normalized weights collapse to
/// exactly 1 and no cross-clip mixing happens.
inline std::vector<ad::Var> manifold_attention(ad::Tape& t, const std::vector<ad::Var>& d_mats,
                                               const EncoderVars& p, const EncoderConfig& cfg,
                                               SpdStats* stats = nullptr,
                                               std::vector<Tensor>* weights_out = nullptr) {
  const int count = static_cast<int>(d_mats.size());
  if (count < 2) throw std::invalid_argument("manifold_attention: need at least 2 clips");

  std::vector<ad::Var> log_k(count), log_q(count), log_v(count);
  for (int i = 0; i < count; ++i) {
    log_k[i] = spd::log_spd(t, bimap(t, p.w_k, d_mats[i]), cfg.eps_spd, stats);
    log_q[i] = spd::log_spd(t, bimap(t, p.w_q, d_mats[i]), cfg.eps_spd, stats);
    log_v[i] = spd::log_spd(t, bimap(t, p.w_v, d_mats[i]), cfg.eps_spd, stats);
  }
  const int n1 = cfg.resolved_d1();
  const int flat = n1 * n1;

  std::vector<ad::Var> fused(count);
  for (int i = 0; i < count; ++i) {
    std::vector<ad::Var> neg_dists;
    std::vector<int> neighbor;
    neg_dists.reserve(count - 1);
    for (int j = 0; j < count; ++j) {
      if (j == i) continue;
      ad::Var diff = ad::sub(log_k[i], log_q[j]);
      ad::Var flat_diff = ad::reshape(diff, {flat});
      neg_dists.push_back(ad::scalar_mul(ad::dot(flat_diff, flat_diff), -1.0));
      neighbor.push_back(j);
    }
    ad::Var weights = ad::softmax_last(ad::concat_vec(neg_dists));
    if (weights_out != nullptr) weights_out->push_back(t.val(weights));

    if (cfg.attention == EncoderConfig::Attention::Literal) {
      fused[i] = ad::smul(ad::sum_all(weights), log_v[i]);
      continue;
    }
    ad::Var acc;
    for (std::size_t r = 0; r < neighbor.size(); ++r) {
      ad::Var pair_mean = ad::scalar_mul(ad::add(log_v[i], log_v[neighbor[r]]), 0.5);
      ad::Var term = ad::smul(ad::element(weights, static_cast<int>(r)), pair_mean);
      acc = (r == 0) ? term : ad::add(acc, term);
    }
    fused[i] = acc;
  }
  return fused;
}

/// Nonlinear activation on the manifold: exponential-map the tangent matrix
/// back, then floor the eigenvalues (ReEig).
inline ad::Var rectify(ad::Tape& t, ad::Var f, double eps_reig, SpdStats* stats = nullptr) {
  spd::EigMapResult r = spd::eig_map(t, f, spd::EigMapFn::ExpClamp, eps_reig);
  if (stats != nullptr) stats->observe(t.val(r.matrix), eps_reig);
  return r.matrix;
}

/// Tangent-space readout: log-map each SPD matrix and concatenate the
/// isometric upper-triangular vectorizations in clip order.
inline ad::Var readout(ad::Tape& t, const std::vector<ad::Var>& s_mats, double eps_guard) {
  std::vector<ad::Var> parts;
  parts.reserve(s_mats.size());
  for (ad::Var s : s_mats) parts.push_back(ad::triu_vec(spd::log_spd(t, s, eps_guard)));
  return ad::concat_vec(parts);
}

/// Full encoder composition: starter -> clip -> sync -> to_spd ->
/// manifold_attention -> rectify -> readout.
inline ad::Var encode(ad::Tape& t, const EncoderVars& p, ad::Var x, const EncoderConfig& cfg,
                      SpdStats* stats = nullptr) {
  ad::Var features = starter(t, p, x, cfg);
  std::vector<ad::Var> clips = clip(t, features, cfg.clip_count);
  std::vector<ad::Var> spd_mats;
  spd_mats.reserve(clips.size());
  for (ad::Var c : clips) spd_mats.push_back(to_spd(t, sync(t, c, cfg.sync), cfg.eps_spd, stats));
  std::vector<ad::Var> fused = manifold_attention(t, spd_mats, p, cfg, stats);
  std::vector<ad::Var> rectified;
  rectified.reserve(fused.size());
  for (ad::Var f : fused) rectified.push_back(rectify(t, f, cfg.eps_reig, stats));
  return readout(t, rectified, 0.5 * cfg.eps_reig);
}

}  // namespace macs
