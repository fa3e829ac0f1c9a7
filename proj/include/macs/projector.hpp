#pragma once

#include <cmath>
#include <stdexcept>

#include "macs/autodiff.hpp"
#include "macs/tensor.hpp"

namespace macs {

struct ProjectorConfig {
  int hidden = 64;
  int z_dim = 32;

  void validate() const {
    if (hidden <= 0 || z_dim < 2)
      throw std::invalid_argument("projector config: hidden > 0 and z_dim >= 2 required");
  }
};

/// Two independent heads on the shared embedding: a latent head (dimension
/// reduction + L2 normalization) feeding contrast/confidence, and a
/// two-class classifier head.
struct ProjectorParams {
  Tensor wl1, bl1, wl2, bl2;  // latent: {h,m},{h},{z,h},{z}
  Tensor wc1, bc1, wc2, bc2;  // classifier: {h,m},{h},{2,h},{2}
};

struct ProjectorVars {
  ad::Var wl1, bl1, wl2, bl2;
  ad::Var wc1, bc1, wc2, bc2;
};

struct LatentResult {
  ad::Var z;
  bool ok = true;  // false when the pre-normalization vector is ~0; such a
                   // sample is excluded from contrastive terms
};

inline LatentResult latent(ad::Tape& t, const ProjectorVars& p, ad::Var embedding) {
  ad::Var h = ad::tanh(ad::add(ad::matmul(p.wl1, embedding), p.bl1));
  ad::Var raw = ad::add(ad::matmul(p.wl2, h), p.bl2);
  double norm2 = 0.0;
  for (double v : t.val(raw).v) norm2 += v * v;
  LatentResult r;
  r.ok = norm2 > 1e-24;
  r.z = ad::l2_normalize(raw);
  return r;
}

inline ad::Var classify_logits(ad::Tape& /*tape*/, const ProjectorVars& p, ad::Var embedding) {
  ad::Var h = ad::tanh(ad::add(ad::matmul(p.wc1, embedding), p.bc1));
  return ad::add(ad::matmul(p.wc2, h), p.bc2);
}

inline ad::Var classify_probs(ad::Tape& t, const ProjectorVars& p, ad::Var embedding) {
  return ad::softmax_last(classify_logits(t, p, embedding));
}

}  // namespace macs
