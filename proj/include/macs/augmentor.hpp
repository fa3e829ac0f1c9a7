#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>

#include "macs/common.hpp"
#include "macs/tensor.hpp"

namespace macs {

/// Jitter configuration for the dual random transform. Each view draws its
/// own sigma uniformly from [sigma_lo, sigma_hi]; with scale_by_signal_std the
/// range is relative to the fragment's signal standard deviation, keeping the
/// knob unit-free.
struct AugmentConfig {
  double sigma_lo = 0.0;
  double sigma_hi = 0.2;
  bool scale_by_signal_std = true;

  void validate() const {
    if (sigma_lo < 0.0 || sigma_hi < sigma_lo)
      throw std::invalid_argument("augment config: need 0 <= sigma_lo <= sigma_hi");
  }
};

/// Additive i.i.d. Gaussian jitter: out = x + N(0, sigma^2).
inline Tensor augment(const Tensor& x, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("augment: sigma must be >= 0");
  Tensor out = x;
  if (sigma == 0.0) return out;
  Rng rng(seed);
  for (double& v : out.v) v += sigma * rng.gaussian();
  return out;
}

/// Two independent draws of (sigma, noise) on the same fragment.
inline std::pair<Tensor, Tensor> dual_views(const Tensor& x, const AugmentConfig& cfg,
                                            std::uint64_t seed) {
  cfg.validate();
  const double scale = cfg.scale_by_signal_std ? signal_std(x) : 1.0;
  Rng sigma_rng(mix_seed(seed, 0x517a));
  const double sigma_a = sigma_rng.uniform(cfg.sigma_lo, cfg.sigma_hi) * scale;
  const double sigma_b = sigma_rng.uniform(cfg.sigma_lo, cfg.sigma_hi) * scale;
  return {augment(x, sigma_a, mix_seed(seed, 0xa001)),
          augment(x, sigma_b, mix_seed(seed, 0xa002))};
}

}  // namespace macs
