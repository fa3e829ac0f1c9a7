#pragma once

// The diffcore verification suite: central-finite-difference checks for every
// tape op and for the full encode -> project -> total_loss composition.
// Shared by the `gradcheck` CLI subcommand and the acceptance tests.

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "macs/autodiff.hpp"
#include "macs/encoder.hpp"
#include "macs/losses.hpp"
#include "macs/model.hpp"
#include "macs/projector.hpp"

namespace macs {

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool passed = false;
  int seeds = 0;
};

struct GradSuiteResult {
  std::vector<GradCheckCase> cases;
  double seconds = 0.0;
  bool all_passed() const {
    for (const auto& c : cases)
      if (!c.passed) return false;
    return true;
  }
  double worst() const {
    double w = 0.0;
    for (const auto& c : cases) w = std::max(w, c.max_rel_err);
    return w;
  }
};

namespace gradsuite_detail {

inline Tensor rand_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.v) v = scale * rng.gaussian();
  return t;
}

inline Tensor rand_spd(int n, Rng& rng) {
  Tensor a = rand_tensor({n, n}, rng);
  Tensor s({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += a.at(i, k) * a.at(j, k);
      s.at(i, j) = acc;
    }
  for (int i = 0; i < n; ++i) s.at(i, i) += 0.4 + 0.15 * i;  // keeps eigengaps healthy
  return s;
}

using BuildFn = std::function<ad::Var(ad::Tape&, ad::Var)>;
using CaseFn = std::function<std::pair<Tensor, BuildFn>(Rng&)>;

inline void run_case(GradSuiteResult& out, const std::string& name, int seeds, const CaseFn& make,
                     double tolerance = 1e-4) {
  GradCheckCase c;
  c.name = name;
  c.tolerance = tolerance;
  for (int s = 0; s < seeds; ++s) {
    // Draw until the eigenvalue gaps are comfortably above the clamp regime;
    // near-degenerate spectra are a documented exclusion.
    for (int attempt = 0; attempt < 8; ++attempt) {
      Rng rng(mix_seed(0xced5, std::hash<std::string>{}(name), s, attempt));
      auto [x, build] = make(rng);
      auto rep = ad::grad_check(build, x, 1e-5);
      if (!rep.eig_gap_ok(1e-4)) continue;
      c.max_rel_err = std::max(c.max_rel_err, rep.max_rel_err);
      if (!rep.nan_coords.empty()) c.max_rel_err = std::numeric_limits<double>::infinity();
      ++c.seeds;
      break;
    }
  }
  c.passed = c.seeds == seeds && c.max_rel_err <= c.tolerance;
  out.cases.push_back(c);
}

}  // namespace gradsuite_detail

/// Runs the whole suite. `full` uses the acceptance configuration (10 seeds
/// per case); otherwise 2 seeds per case for a quick smoke run.
inline GradSuiteResult run_gradient_suite(bool full) {
  using namespace gradsuite_detail;
  const auto t0 = std::chrono::steady_clock::now();
  const int seeds = full ? 10 : 2;
  GradSuiteResult out;

  run_case(out, "add_sub_scalar_mul", seeds, [](Rng& rng) {
    Tensor x = rand_tensor({3, 4}, rng);
    Tensor other = rand_tensor({3, 4}, rng);
    BuildFn f = [other](ad::Tape& t, ad::Var in) {
      ad::Var o = t.constant(other);
      return ad::sum_all(ad::tanh(ad::sub(ad::add(in, o), ad::scalar_mul(in, 0.3))));
    };
    return std::pair{x, f};
  });

  run_case(out, "smul_dot_element", seeds, [](Rng& rng) {
    Tensor x = rand_tensor({6}, rng);
    BuildFn f = [](ad::Tape&, ad::Var in) {
      ad::Var s = ad::element(in, 1);
      ad::Var head = ad::slice_vec(in, 2, 4);
      return ad::dot(ad::smul(s, head), head);
    };
    return std::pair{x, f};
  });

  run_case(out, "matmul_transpose_reshape", seeds, [](Rng& rng) {
    Tensor x = rand_tensor({3, 4}, rng);
    Tensor w = rand_tensor({4, 2}, rng);
    BuildFn f = [w](ad::Tape& t, ad::Var in) {
      ad::Var m = ad::matmul(in, t.constant(w));
      return ad::sum_all(ad::tanh(ad::reshape(ad::transpose(m), {6})));
    };
    return std::pair{x, f};
  });

  run_case(out, "exp_log_tanh_clamp", seeds, [](Rng& rng) {
    Tensor x = rand_tensor({8}, rng, 0.5);
    for (double& v : x.v) v = std::abs(v) + 0.4;
    BuildFn f = [](ad::Tape&, ad::Var in) {
      return ad::sum_all(ad::tanh(ad::log(ad::clamp_min(ad::exp(in), 1.5))));
    };
    return std::pair{x, f};
  });

  run_case(out, "softmax_last", seeds, [](Rng& rng) {
    Tensor x = rand_tensor({3, 5}, rng);
    Tensor w = rand_tensor({3, 5}, rng);
    BuildFn f = [w](ad::Tape& t, ad::Var in) {
      return ad::dot(ad::reshape(ad::softmax_last(in), {15}), ad::reshape(t.constant(w), {15}));
    };
    return std::pair{x, f};
  });

  run_case(out, "time_conv", seeds, [](Rng& rng) {
    Tensor x = rand_tensor({2, 11}, rng);
    Tensor k = rand_tensor({2, 5}, rng);
    Tensor w = rand_tensor({2, 11}, rng);
    BuildFn f = [k, w](ad::Tape& t, ad::Var in) {
      return ad::dot(ad::reshape(ad::time_conv(in, t.constant(k)), {22}),
                     ad::reshape(t.constant(w), {22}));
    };
    return std::pair{x, f};
  });

  run_case(out, "time_conv_kernel", seeds, [](Rng& rng) {
    Tensor k = rand_tensor({2, 5}, rng);
    Tensor x = rand_tensor({2, 11}, rng);
    Tensor w = rand_tensor({2, 11}, rng);
    BuildFn f = [x, w](ad::Tape& t, ad::Var in) {
      return ad::dot(ad::reshape(ad::time_conv(t.constant(x), in), {22}),
                     ad::reshape(t.constant(w), {22}));
    };
    return std::pair{k, f};
  });

  run_case(out, "channel_conv", seeds, [](Rng& rng) {
    Tensor w = rand_tensor({3, 3}, rng);
    Tensor x = rand_tensor({3, 7}, rng);
    BuildFn f = [x](ad::Tape& t, ad::Var in) {
      return ad::sum_all(ad::tanh(ad::channel_conv(t.constant(x), in)));
    };
    return std::pair{w, f};
  });

  run_case(out, "layer_norm_rows", seeds, [](Rng& rng) {
    Tensor x = rand_tensor({3, 6}, rng);
    Tensor g = rand_tensor({3}, rng, 0.5);
    Tensor b = rand_tensor({3}, rng, 0.5);
    Tensor w = rand_tensor({3, 6}, rng);
    BuildFn f = [g, b, w](ad::Tape& t, ad::Var in) {
      return ad::dot(ad::reshape(ad::layer_norm_rows(in, t.constant(g), t.constant(b)), {18}),
                     ad::reshape(t.constant(w), {18}));
    };
    return std::pair{x, f};
  }, 1e-4);

  run_case(out, "reductions_concat_slices", seeds, [](Rng& rng) {
    Tensor x = rand_tensor({4, 6}, rng);
    BuildFn f = [](ad::Tape&, ad::Var in) {
      ad::Var a = ad::slice_cols(in, 0, 3);
      ad::Var b = ad::slice_cols(in, 3, 3);
      ad::Var joined = ad::concat_vec({ad::reshape(a, {12}), ad::reshape(b, {12})});
      ad::Var stacked = ad::stack_cols({ad::slice_vec(joined, 0, 6), ad::slice_vec(joined, 6, 6)});
      return ad::add(ad::mean_all(ad::tanh(stacked)), ad::sum_all(joined));
    };
    return std::pair{x, f};
  });

  run_case(out, "l2_normalize", seeds, [](Rng& rng) {
    Tensor x = rand_tensor({7}, rng);
    Tensor w = rand_tensor({7}, rng);
    BuildFn f = [w](ad::Tape& t, ad::Var in) { return ad::dot(ad::l2_normalize(in), t.constant(w)); };
    return std::pair{x, f};
  });

  run_case(out, "symeig_lambda", seeds, [](Rng& rng) {
    Tensor s = rand_spd(4, rng);
    BuildFn f = [](ad::Tape&, ad::Var in) {
      auto e = ad::symeig(in);
      return ad::sum_all(ad::log(e.lambda));
    };
    return std::pair{s, f};
  });

  run_case(out, "symeig_eigvectors", seeds, [](Rng& rng) {
    Tensor s = rand_spd(4, rng);
    Tensor w = rand_tensor({4, 4}, rng);
    BuildFn f = [w](ad::Tape& t, ad::Var in) {
      auto e = ad::symeig(in);
      ad::Var rec = ad::matmul(ad::matmul(e.u, ad::diag_embed(ad::log(e.lambda))),
                               ad::transpose(e.u));
      return ad::dot(ad::reshape(rec, {16}), ad::reshape(t.constant(w), {16}));
    };
    return std::pair{s, f};
  });

  run_case(out, "diag_triu", seeds, [](Rng& rng) {
    Tensor s = rand_spd(4, rng);
    BuildFn f = [](ad::Tape&, ad::Var in) {
      ad::Var v = ad::triu_vec(in);
      return ad::add(ad::dot(v, v), ad::sum_all(ad::diag_embed(ad::diag_part(in))));
    };
    return std::pair{s, f};
  });

  run_case(out, "spd_log_exp_rectify", seeds, [](Rng& rng) {
    Tensor s = rand_spd(3, rng);
    BuildFn f = [](ad::Tape& t, ad::Var in) {
      ad::Var logm = spd::log_spd(t, in, 1e-6);
      ad::Var back = rectify(t, logm, 1e-4);
      return ad::dot(ad::triu_vec(back), ad::triu_vec(back));
    };
    return std::pair{s, f};
  });

  run_case(out, "le_dist", seeds, [](Rng& rng) {
    Tensor s = rand_spd(3, rng);
    Tensor other = rand_spd(3, rng);
    BuildFn f = [other](ad::Tape& t, ad::Var in) {
      return le_dist(t, in, t.constant(other), 1e-8);
    };
    return std::pair{s, f};
  });

  // Full composition: every parameter of the model, through both encoder
  // variants' losses, on a 4-fragment batch at the acceptance geometry
  // (d=4, d1=2, I=2, T_s=64).
  auto composition_case = [&](const char* name, EncoderConfig::Attention att,
                              EncoderConfig::Sync sync) {
    run_case(out, name, seeds, [att, sync](Rng& rng) {
      EncoderConfig ecfg;
      ecfg.d = 4;
      ecfg.d1 = 2;
      ecfg.clip_count = 2;
      ecfg.temporal_kernel = 5;
      ecfg.attention = att;
      ecfg.sync = sync;
      ProjectorConfig pcfg{12, 6};
      ModelParams params = init_params(ecfg, pcfg, rng.next_u64());

      const int batch = 4;
      std::vector<Tensor> view_a, view_b, clean;
      std::vector<int> labels;
      for (int i = 0; i < batch; ++i) {
        view_a.push_back(rand_tensor({4, 64}, rng, 0.8));
        view_b.push_back(rand_tensor({4, 64}, rng, 0.8));
        clean.push_back(rand_tensor({4, 64}, rng, 0.8));
        labels.push_back(i % 2);
      }
      std::vector<Tensor> mem;
      for (int m = 0; m < 4; ++m) {
        Tensor z = rand_tensor({6}, rng);
        double norm = 0.0;
        for (double v : z.v) norm += v * v;
        for (double& v : z.v) v /= std::sqrt(norm);
        mem.push_back(z);
      }

      // Flatten parameters into one vector; the graph re-slices them.
      auto refs = named_params(params);
      int total = 0;
      for (auto& r : refs) total += r.tensor->numel();
      Tensor flat({total});
      int off = 0;
      for (auto& r : refs)
        for (double v : r.tensor->v) flat.v[off++] = v;

      std::vector<std::vector<int>> shapes;
      for (auto& r : refs) shapes.push_back(r.tensor->shape);

      BuildFn f = [=](ad::Tape& t, ad::Var in) {
        ModelVars mv;
        std::vector<ad::Var*> slots{
            &mv.enc.spatial_w, &mv.enc.temporal_k, &mv.enc.ln_gamma, &mv.enc.ln_beta,
            &mv.enc.w_q,       &mv.enc.w_k,        &mv.enc.w_v,      &mv.proj.wl1,
            &mv.proj.bl1,      &mv.proj.wl2,       &mv.proj.bl2,     &mv.proj.wc1,
            &mv.proj.bc1,      &mv.proj.wc2,       &mv.proj.bc2};
        int o = 0;
        for (std::size_t p = 0; p < slots.size(); ++p) {
          const int n = Tensor::numel_of(shapes[p]);
          *slots[p] = ad::reshape(ad::slice_vec(in, o, n), shapes[p]);
          o += n;
        }
        MemoryBank bank(4);
        for (const Tensor& z : mem) bank.push(z, 0, true);

        std::vector<ViewLatent> views;
        std::vector<DlSample> dls;
        for (int i = 0; i < batch; ++i) {
          const bool trusted = i < 2;
          for (const Tensor* sig : {&view_a[i], &view_b[i]}) {
            ad::Var emb = encode(t, mv.enc, t.constant(*sig), ecfg);
            LatentResult lat = latent(t, mv.proj, emb);
            ViewLatent v;
            v.z = lat.z;
            v.ok = lat.ok;
            v.sample = i;
            v.label = labels[i];
            v.trusted = trusted;
            v.lambda = trusted ? 0.7 : 1.0;
            v.label_plus = trusted ? 1 - labels[i] : labels[i];
            views.push_back(v);
          }
          ad::Var emb = encode(t, mv.enc, t.constant(clean[i]), ecfg);
          DlSample d;
          d.probs = classify_probs(t, mv.proj, emb);
          d.trusted = trusted;
          d.y_star = labels[i];
          d.y_plus = trusted ? 1 - labels[i] : labels[i];
          d.lambda = trusted ? 0.7 : 1.0;
          d.aux = Tensor({2}, {0.4, 0.6});
          dls.push_back(d);
        }
        ContrastiveConfig ccfg;
        ccfg.tau = 0.5;
        ccfg.memory = 4;
        LossParts parts = total_loss(t, views, bank, dls, ccfg);
        return parts.total;
      };
      return std::pair{flat, f};
    });
  };
  composition_case("full_model_total_loss", EncoderConfig::Attention::Mixed,
                   EncoderConfig::Sync::Covariance);
  if (full) {
    composition_case("full_model_literal_attention", EncoderConfig::Attention::Literal,
                     EncoderConfig::Sync::Covariance);
    composition_case("full_model_correlation_sync", EncoderConfig::Attention::Mixed,
                     EncoderConfig::Sync::Correlation);
  }

  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace macs
