#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "macs/common.hpp"
#include "macs/tensor.hpp"

namespace macs {

/// Blend coefficient and partner choice for one trusted sample. lambda is
/// always >= 0.5 so the dominant weight stays on the sample's own content.
struct BlendDraw {
  double lambda = 1.0;
  int partner = -1;  // index into the batch; -1 for pass-through
};

inline double lambda_from_uniform(double u) { return u < 0.5 ? 1.0 - u : u; }

/// lambda ~ Beta(1,1) = U(0,1), folded to max(lambda, 1-lambda).
inline double draw_lambda(Rng& rng) { return lambda_from_uniform(rng.uniform()); }

inline double draw_lambda(std::uint64_t seed) {
  Rng rng(seed);
  return draw_lambda(rng);
}

/// Convex combination of two equal-shape signals. The label side is kept as
/// the (y_star, y_plus, lambda) triple by the caller so the losses can apply
/// the two-term form.
inline Tensor blend(const Tensor& x_star, const Tensor& x_plus, double lambda) {
  if (lambda < 0.5 || lambda > 1.0)
    throw std::invalid_argument("blend: lambda must lie in [0.5, 1]");
  if (!x_star.same_shape(x_plus))
    throw std::invalid_argument("blend: shape mismatch " + x_star.shape_str() + " vs " +
                                x_plus.shape_str());
  Tensor out = x_star;
  const double w = 1.0 - lambda;
  for (int i = 0; i < out.numel(); ++i) out.v[i] = lambda * x_star.v[i] + w * x_plus.v[i];
  return out;
}

/// One batch entry entering the switcher: the raw fragment signal and its two
/// jittered views.
struct RoutedSample {
  Tensor view_a;
  Tensor view_b;
  Tensor clean;    // classification-path input (never jittered)
  bool blended = false;
  double lambda = 1.0;
  int partner = -1;
  int y_star = 0;  // own train label
  int y_plus = 0;  // partner train label (== y_star when unblended)
};

/// Draws one (lambda, partner) per trusted sample; partners are uniform over
/// the other trusted samples of the batch (self when the trusted set is a
/// singleton). Distrusted samples get pass-through draws.
inline std::vector<BlendDraw> make_blend_draws(const std::vector<char>& trusted,
                                               std::uint64_t seed) {
  std::vector<int> trusted_ids;
  for (int i = 0; i < static_cast<int>(trusted.size()); ++i)
    if (trusted[i]) trusted_ids.push_back(i);
  std::vector<BlendDraw> draws(trusted.size());
  Rng rng(mix_seed(seed, 0xb1e7d));
  for (int i = 0; i < static_cast<int>(trusted.size()); ++i) {
    if (!trusted[i]) continue;
    draws[i].lambda = draw_lambda(rng);
    if (trusted_ids.size() == 1) {
      draws[i].partner = i;  // identity blend
    } else {
      int pick = static_cast<int>(rng.below(trusted_ids.size() - 1));
      // Skip self while keeping the draw uniform over the others.
      for (int id : trusted_ids) {
        if (id == i) continue;
        if (pick == 0) {
          draws[i].partner = id;
          break;
        }
        --pick;
      }
    }
  }
  return draws;
}

/// Confidence-gated mixup. Trusted samples have both views and the clean
/// classification input blended with the drawn partner (shared lambda);
/// distrusted samples pass through bitwise-unchanged and their clean path
/// bypasses augmentation entirely.
inline std::vector<RoutedSample> route(const std::vector<Tensor>& raw,
                                       const std::vector<Tensor>& views_a,
                                       const std::vector<Tensor>& views_b,
                                       const std::vector<int>& train_labels,
                                       const std::vector<char>& trusted,
                                       const std::vector<BlendDraw>& draws) {
  const std::size_t n = raw.size();
  if (views_a.size() != n || views_b.size() != n || train_labels.size() != n ||
      trusted.size() != n || draws.size() != n)
    throw std::invalid_argument("route: partition does not cover the batch");
  std::vector<RoutedSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    RoutedSample& r = out[i];
    r.y_star = train_labels[i];
    if (!trusted[i]) {
      r.view_a = views_a[i];
      r.view_b = views_b[i];
      r.clean = raw[i];
      r.y_plus = train_labels[i];
      continue;
    }
    const int p = draws[i].partner;
    const double lam = draws[i].lambda;
    r.blended = true;
    r.lambda = lam;
    r.partner = p;
    r.y_plus = train_labels[p];
    r.view_a = blend(views_a[i], views_a[p], lam);
    r.view_b = blend(views_b[i], views_b[p], lam);
    r.clean = blend(raw[i], raw[p], lam);
  }
  return out;
}

}  // namespace macs
