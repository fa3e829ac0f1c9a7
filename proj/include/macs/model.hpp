#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "macs/common.hpp"
#include "macs/encoder.hpp"
#include "macs/projector.hpp"
#include "macs/tensor.hpp"

namespace macs {

/// All learnable tensors (the full Θ).
struct ModelParams {
  EncoderParams enc;
  ProjectorParams proj;
};

struct ModelVars {
  EncoderVars enc;
  ProjectorVars proj;
};

/// How the optimizer treats a tensor.
struct ParamRef {
  std::string name;
  Tensor* tensor;
  bool weight_decay;  // affine weights only, never biases or norm params
  bool retract;       // re-orthonormalized after each step (attention W's)
};

inline std::vector<ParamRef> named_params(ModelParams& m) {
  return {
      {"enc.spatial_w", &m.enc.spatial_w, true, false},
      {"enc.temporal_k", &m.enc.temporal_k, true, false},
      {"enc.ln_gamma", &m.enc.ln_gamma, false, false},
      {"enc.ln_beta", &m.enc.ln_beta, false, false},
      {"enc.w_q", &m.enc.w_q, false, true},
      {"enc.w_k", &m.enc.w_k, false, true},
      {"enc.w_v", &m.enc.w_v, false, true},
      {"proj.wl1", &m.proj.wl1, true, false},
      {"proj.bl1", &m.proj.bl1, false, false},
      {"proj.wl2", &m.proj.wl2, true, false},
      {"proj.bl2", &m.proj.bl2, false, false},
      {"proj.wc1", &m.proj.wc1, true, false},
      {"proj.bc1", &m.proj.bc1, false, false},
      {"proj.wc2", &m.proj.wc2, true, false},
      {"proj.bc2", &m.proj.bc2, false, false},
  };
}

inline std::vector<ParamRef> named_params(const ModelParams& m) {
  return named_params(const_cast<ModelParams&>(m));
}

/// Seeded initialization. Attention maps start orthonormal; normalization is
/// identity; affine weights are uniform with 1/sqrt(fan_in) range.
inline ModelParams init_params(const EncoderConfig& ecfg, const ProjectorConfig& pcfg,
                               std::uint64_t seed) {
  ecfg.validate();
  pcfg.validate();
  const int d = ecfg.d;
  const int d1 = ecfg.resolved_d1();
  const int m = ecfg.embedding_dim();
  ModelParams p;

  auto fill_uniform = [](Tensor& t, double range, Rng& rng) {
    for (double& v : t.v) v = rng.uniform(-range, range);
  };

  Rng rng(mix_seed(seed, 0x1417));
  // Starter kernels start near the identity map (unit channel mix, centered
  // delta in time) so the dynamic networks carry the raw synchronization
  // structure from the first epoch; training reshapes them from there.
  p.enc.spatial_w = Tensor::identity(d);
  for (double& v : p.enc.spatial_w.v)
    v += rng.uniform(-0.1, 0.1) / std::sqrt(static_cast<double>(d));
  p.enc.temporal_k = Tensor({d, ecfg.temporal_kernel});
  for (int c = 0; c < d; ++c) {
    p.enc.temporal_k.at(c, ecfg.temporal_kernel / 2) = 1.0;
    for (int j = 0; j < ecfg.temporal_kernel; ++j)
      p.enc.temporal_k.at(c, j) += rng.uniform(-0.1, 0.1) /
                                   std::sqrt(static_cast<double>(ecfg.temporal_kernel));
  }
  p.enc.ln_gamma = Tensor::full({d}, 1.0);
  p.enc.ln_beta = Tensor({d});

  auto orthonormal = [&](int rows, int cols) {
    Tensor w({rows, cols});
    for (double& v : w.v) v = rng.gaussian();
    return qr_orthonormalize(w);
  };
  p.enc.w_q = orthonormal(d, d1);
  p.enc.w_k = orthonormal(d, d1);
  p.enc.w_v = orthonormal(d, d1);

  const int h = pcfg.hidden;
  const int z = pcfg.z_dim;
  p.proj.wl1 = Tensor({h, m});
  fill_uniform(p.proj.wl1, 1.0 / std::sqrt(static_cast<double>(m)), rng);
  p.proj.bl1 = Tensor({h});
  p.proj.wl2 = Tensor({z, h});
  fill_uniform(p.proj.wl2, 1.0 / std::sqrt(static_cast<double>(h)), rng);
  p.proj.bl2 = Tensor({z});
  p.proj.wc1 = Tensor({h, m});
  fill_uniform(p.proj.wc1, 1.0 / std::sqrt(static_cast<double>(m)), rng);
  p.proj.bc1 = Tensor({h});
  p.proj.wc2 = Tensor({2, h});
  fill_uniform(p.proj.wc2, 1.0 / std::sqrt(static_cast<double>(h)), rng);
  p.proj.bc2 = Tensor({2});
  return p;
}

/// Registers every parameter as a leaf on the tape.
inline ModelVars lift(ad::Tape& t, const ModelParams& p) {
  ModelVars v;
  v.enc.spatial_w = t.leaf(p.enc.spatial_w);
  v.enc.temporal_k = t.leaf(p.enc.temporal_k);
  v.enc.ln_gamma = t.leaf(p.enc.ln_gamma);
  v.enc.ln_beta = t.leaf(p.enc.ln_beta);
  v.enc.w_q = t.leaf(p.enc.w_q);
  v.enc.w_k = t.leaf(p.enc.w_k);
  v.enc.w_v = t.leaf(p.enc.w_v);
  v.proj.wl1 = t.leaf(p.proj.wl1);
  v.proj.bl1 = t.leaf(p.proj.bl1);
  v.proj.wl2 = t.leaf(p.proj.wl2);
  v.proj.bl2 = t.leaf(p.proj.bl2);
  v.proj.wc1 = t.leaf(p.proj.wc1);
  v.proj.bc1 = t.leaf(p.proj.bc1);
  v.proj.wc2 = t.leaf(p.proj.wc2);
  v.proj.bc2 = t.leaf(p.proj.bc2);
  return v;
}

/// Vars in the same order as named_params.
inline std::vector<ad::Var> var_list(const ModelVars& v) {
  return {v.enc.spatial_w, v.enc.temporal_k, v.enc.ln_gamma, v.enc.ln_beta,
          v.enc.w_q, v.enc.w_k, v.enc.w_v,
          v.proj.wl1, v.proj.bl1, v.proj.wl2, v.proj.bl2,
          v.proj.wc1, v.proj.bc1, v.proj.wc2, v.proj.bc2};
}

/// Inference forward for one fragment on a scratch tape.
struct FragmentForward {
  Tensor embedding;
  Tensor z;      // unit latent
  Tensor probs;  // classifier softmax
  bool z_ok = true;
};

inline FragmentForward forward_fragment(const ModelParams& params, const Tensor& x,
                                        const EncoderConfig& ecfg, SpdStats* stats = nullptr) {
  ad::Tape t;
  ModelVars v = lift(t, params);
  ad::Var emb = encode(t, v.enc, t.constant(x), ecfg, stats);
  LatentResult lat = latent(t, v.proj, emb);
  ad::Var probs = classify_probs(t, v.proj, emb);
  FragmentForward out;
  out.embedding = t.val(emb);
  out.z = t.val(lat.z);
  out.probs = t.val(probs);
  out.z_ok = lat.ok;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary of shape-tagged little-endian float64 tensors.
// A JSON sidecar with the training configuration is written next to it by the
// trainer. Reload is bit-exact.
// ---------------------------------------------------------------------------

constexpr char kCheckpointMagic[8] = {'M', 'A', 'C', 'S', 'C', 'K', 'P', '1'};

namespace detail {
inline void put_u64_le_stream(std::ofstream& f, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  f.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t read_u64_le_stream(std::ifstream& f, std::uint64_t& offset) {
  unsigned char b[8];
  f.read(reinterpret_cast<char*>(b), 8);
  if (!f) throw FormatError("checkpoint: truncated", offset);
  offset += 8;
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
inline std::uint64_t double_bits(double d) {
  std::uint64_t b;
  std::memcpy(&b, &d, 8);
  return b;
}
inline double bits_double(std::uint64_t b) {
  double d;
  std::memcpy(&d, &b, 8);
  return d;
}
}  // namespace detail

inline void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open " + path.string() + " for writing", 0);
  f.write(kCheckpointMagic, 8);
  auto refs = named_params(params);
  detail::put_u64_le_stream(f, refs.size());
  for (const ParamRef& r : refs) {
    detail::put_u64_le_stream(f, r.name.size());
    f.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    detail::put_u64_le_stream(f, r.tensor->shape.size());
    for (int dshape : r.tensor->shape) detail::put_u64_le_stream(f, static_cast<std::uint64_t>(dshape));
    for (double v : r.tensor->v) detail::put_u64_le_stream(f, detail::double_bits(v));
  }
}

/// Loads into an existing parameter structure; names and shapes must match.
inline void load_checkpoint(ModelParams& params, const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open " + path.string(), 0);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw FormatError("checkpoint: bad magic", 0);
  std::uint64_t offset = 8;
  auto refs = named_params(params);
  const std::uint64_t count = detail::read_u64_le_stream(f, offset);
  if (count != refs.size())
    throw FormatError("checkpoint: expected " + std::to_string(refs.size()) +
                          " tensors, found " + std::to_string(count),
                      offset);
  for (ParamRef& r : refs) {
    const std::uint64_t name_len = detail::read_u64_le_stream(f, offset);
    std::string name(name_len, '\0');
    f.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!f) throw FormatError("checkpoint: truncated name", offset);
    offset += name_len;
    if (name != r.name)
      throw FormatError("checkpoint: tensor '" + name + "' where '" + r.name + "' expected",
                        offset);
    const std::uint64_t rank = detail::read_u64_le_stream(f, offset);
    std::vector<int> shape(rank);
    for (std::uint64_t i = 0; i < rank; ++i)
      shape[i] = static_cast<int>(detail::read_u64_le_stream(f, offset));
    Tensor t(shape);
    for (double& v : t.v) v = detail::bits_double(detail::read_u64_le_stream(f, offset));
    if (!r.tensor->shape.empty() && r.tensor->shape != shape)
      throw FormatError("checkpoint: shape mismatch for '" + name + "'", offset);
    *r.tensor = std::move(t);
  }
}

}  // namespace macs
