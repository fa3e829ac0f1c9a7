// Acceptance suite: one test section per criterion, each printing a
// [PASS]/[FAIL] line with the measured value against its pinned threshold.
// Criteria 1-7 and 12 are property/oracle checks; 8-11 train the full
// pipeline on the default synthetic task (synth seed 0, 4-fold subject split
// with seed 0, fold 0 held out; noisy runs use noise seed 100+s and train
// seed s for s in {0,1,2}).

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "macs/archive.hpp"
#include "macs/data.hpp"
#include "macs/encoder.hpp"
#include "macs/eval.hpp"
#include "macs/gradcheck_suite.hpp"
#include "macs/losses.hpp"
#include "macs/model.hpp"
#include "macs/report.hpp"
#include "macs/stratifier.hpp"
#include "macs/switcher.hpp"
#include "macs/trainer.hpp"
#include "oracles.hpp"

using namespace macs;
using namespace macs::testing;

namespace {

void report(int criterion, bool pass, const std::string& what) {
  std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", criterion, what.c_str());
  std::fflush(stdout);
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Tensor random_spd_well_conditioned(int n, Rng& rng) {
  Tensor a({n, n});
  for (double& v : a.v) v = rng.gaussian();
  Tensor s({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += a.at(i, k) * a.at(j, k);
      s.at(i, j) = acc;
    }
  for (int i = 0; i < n; ++i) s.at(i, i) += 0.5;
  return s;
}

Tensor spd_inverse(const Tensor& s) {
  return sym_matrix_function(s, [](double l) { return 1.0 / l; });
}

struct SynthTask {
  FragmentSet all;
  std::vector<std::vector<int>> folds;
};

const SynthTask& default_task() {
  static const SynthTask task = [] {
    SynthTask t;
    t.all = make_fragment_set(synthesize(SynthSpec::defaults(), 0), 500);
    t.folds = subject_split(t.all, 4, 0);
    return t;
  }();
  return task;
}

struct RunOutcome {
  double frag_acc = 0.0;
  double subj_acc = 0.0;
  std::vector<double> strat_precision;  // per epoch
};

RunOutcome run_training(const FragmentSet& noisy_or_clean, std::uint64_t train_seed,
                        TrainConfig::Mode mode = TrainConfig::Mode::Full, int memory = -1) {
  const SynthTask& task = default_task();
  FragmentSet data = noisy_or_clean;
  auto [test_set, train_set] = split_by_subjects(data, task.folds[0]);
  TrainConfig cfg;
  cfg.seed = train_seed;
  cfg.mode = mode;
  if (memory >= 0) cfg.contrastive.memory = memory;
  TrainResult res = train(train_set, cfg, &test_set);
  RunOutcome out;
  out.frag_acc = res.epoch_logs.back().eval_frag_acc;
  out.subj_acc = res.epoch_logs.back().eval_subj_acc;
  for (const EpochLog& e : res.epoch_logs) out.strat_precision.push_back(e.strat_precision);
  return out;
}

char fmt_buf[256];
std::string fmt(const char* f, auto... args) {
  std::snprintf(fmt_buf, sizeof(fmt_buf), f, args...);
  return fmt_buf;
}

}  // namespace

TEST_CASE("criterion 1: gradient suite", "[gradients]") {
  GradSuiteResult res = run_gradient_suite(true);
  for (const auto& c : res.cases) {
    INFO(c.name << " max rel err " << c.max_rel_err);
    CHECK(c.passed);
  }
  const bool pass = res.all_passed() && res.seconds <= 60.0;
  report(1, pass,
         fmt("every op + full composition FD-checked, worst rel err %.2e <= 1e-4, %.1fs <= 60s",
             res.worst(), res.seconds));
  REQUIRE(pass);
}

TEST_CASE("criterion 2: SPD invariants at to_spd/rectify boundaries", "[fast]") {
  SpdStats stats;
  EncoderConfig ecfg;
  ecfg.d = 6;
  ecfg.d1 = 3;
  ecfg.clip_count = 2;
  ecfg.temporal_kernel = 5;
  ProjectorConfig pcfg{16, 8};
  for (int pass_idx = 0; pass_idx < 1000; ++pass_idx) {
    Rng rng(mix_seed(0x5bd, pass_idx));
    ModelParams params = init_params(ecfg, pcfg, rng.next_u64());
    Tensor x({6, 64});
    for (double& v : x.v) v = rng.gaussian();
    ad::Tape t;
    ModelVars mv = lift(t, params);
    encode(t, mv.enc, t.constant(x), ecfg, &stats);
  }
  const bool pass = stats.violations == 0 && stats.checks >= 4000 &&
                    stats.worst_asym <= 1e-10 && stats.worst_floor_ratio >= 0.5;
  report(2, pass,
         fmt("1000 forward passes, %ld boundary matrices, worst asymmetry %.2e, worst "
             "min-eig/floor %.2f, %ld violations",
             stats.checks, stats.worst_asym, stats.worst_floor_ratio, stats.violations));
  REQUIRE(pass);
}

TEST_CASE("criterion 3: log-Euclidean metric properties", "[fast]") {
  double worst = 0.0;
  for (int d : {2, 4, 8}) {
    // d(I, e*I) = d
    Tensor ident = Tensor::identity(d);
    Tensor ei = ident;
    for (double& v : ei.v) v *= std::exp(1.0);
    worst = std::max(worst, std::abs(le_dist_value(ident, ei) - d));
    for (int pair = 0; pair < 100; ++pair) {
      Rng rng(mix_seed(0x1ed, d, pair));
      Tensor x = random_spd_well_conditioned(d, rng);
      Tensor y = random_spd_well_conditioned(d, rng);
      const double dxy = le_dist_value(x, y);
      worst = std::max(worst, std::abs(le_dist_value(x, x)));
      worst = std::max(worst, std::abs(le_dist_value(y, x) - dxy));
      Tensor xs = x, ys = y;
      const double scale = 0.5 + 3.0 * rng.uniform();
      for (double& v : xs.v) v *= scale;
      for (double& v : ys.v) v *= scale;
      worst = std::max(worst, std::abs(le_dist_value(xs, ys) - dxy));
      worst = std::max(worst, std::abs(le_dist_value(spd_inverse(x), spd_inverse(y)) - dxy));
    }
  }
  const bool pass = worst <= 1e-8;
  report(3, pass,
         fmt("identity/symmetry/scaling/inversion/d(I,eI)=dim over d in {2,4,8}, worst "
             "deviation %.2e <= 1e-8",
             worst));
  REQUIRE(pass);
}

TEST_CASE("criterion 4: loss oracle equivalence", "[fast]") {
  double worst = 0.0;
  ContrastiveConfig ccfg;
  ccfg.tau = 0.3;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(mix_seed(0x105, trial));
    ad::Tape t;
    MemoryBank mem(8);
    const int n_samples = 2 + static_cast<int>(rng.below(7));  // <= 8
    const int n_mem = static_cast<int>(rng.below(9));          // <= 8
    BuiltBatch batch = random_contrast_batch(t, mem, rng, n_samples, n_mem);
    ContrastScope scope(t, batch.views, mem, ccfg);
    int sk = 0;
    worst = std::max(worst, std::abs(t.val(loss_ag(scope, &sk)).v[0] -
                                     oracle_twin(batch.oracle, false, ccfg.tau)));
    worst = std::max(worst, std::abs(t.val(loss_sw(scope, &sk)).v[0] -
                                     oracle_twin(batch.oracle, true, ccfg.tau)));
    worst = std::max(worst, std::abs(t.val(loss_st(scope, &sk)).v[0] -
                                     oracle_st(batch.oracle, ccfg.tau, ccfg.memory_positives)));
    // Discriminative loss against the hand CE loop.
    std::vector<DlSample> dls;
    std::vector<OracleDlSample> odls;
    for (int s = 0; s < n_samples; ++s) {
      Tensor p({2});
      p[0] = 0.05 + 0.9 * rng.uniform();
      p[1] = 1.0 - p[0];
      DlSample d;
      d.probs = t.constant(p);
      d.trusted = rng.below(2) == 0;
      d.y_star = static_cast<int>(rng.below(2));
      d.y_plus = static_cast<int>(rng.below(2));
      d.lambda = 0.5 + 0.5 * rng.uniform();
      Tensor aux({2});
      aux[0] = rng.uniform();
      aux[1] = 1.0 - aux[0];
      d.aux = aux;
      dls.push_back(d);
      odls.push_back(OracleDlSample{p.v, d.trusted, d.y_star, d.y_plus, d.lambda, aux.v});
    }
    worst = std::max(worst, std::abs(t.val(loss_dl(t, dls)).v[0] - oracle_dl(odls)));
  }
  const bool pass = worst <= 1e-10;
  report(4, pass, fmt("Ag/Sw/St/DL vs brute-force loops on 50 batches, worst |diff| %.2e <= 1e-10",
                      worst));
  REQUIRE(pass);
}

TEST_CASE("criterion 5: stratifier oracle equivalence", "[fast]") {
  int mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(mix_seed(0x57a, trial));
    const int n = 8 + static_cast<int>(rng.below(57));  // <= 64
    std::vector<Tensor> z;
    std::vector<int> y;
    std::vector<Tensor> aux(n, Tensor({2}, {0.5, 0.5}));
    for (int i = 0; i < n; ++i) {
      z.push_back(random_unit(rng, 5));
      y.push_back(static_cast<int>(rng.below(2)));
    }
    const int n_mem = static_cast<int>(rng.below(9));
    std::vector<Tensor> mem_z;
    std::vector<int> mem_y;
    for (int m = 0; m < n_mem; ++m) {
      mem_z.push_back(random_unit(rng, 5));
      mem_y.push_back(static_cast<int>(rng.below(2)));
    }
    StratifierConfig cfg;
    cfg.k = 1 + static_cast<int>(rng.below(std::min(n - 1, 15)));
    ConfidencePartition part = stratify(z, y, aux, cfg, 0, mem_z, mem_y);
    StratOracleResult oracle = stratify_oracle(z, y, cfg.k, mem_z, mem_y);
    for (int i = 0; i < n; ++i)
      if (part.is_trusted[i] != oracle.trusted[i]) ++mismatches;
  }
  const bool pass = mismatches == 0;
  report(5, pass, fmt("stratify vs exhaustive reference on 50 instances, %d id mismatches",
                      mismatches));
  REQUIRE(pass);
}

TEST_CASE("criterion 6: switcher contracts", "[fast]") {
  Rng rng(0x5c);
  double mean = 0.0;
  bool in_range = true;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const double l = draw_lambda(rng);
    in_range = in_range && l >= 0.5 && l <= 1.0;
    mean += l;
  }
  mean /= draws;
  const bool lambda_ok = in_range && mean >= 0.745 && mean <= 0.755;

  int mutated = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng brng(mix_seed(0x6a7c, trial));
    const int n = 3 + static_cast<int>(brng.below(6));
    std::vector<Tensor> raw, va, vb;
    std::vector<int> labels;
    std::vector<char> trusted;
    for (int i = 0; i < n; ++i) {
      Tensor x({2, 8});
      for (double& v : x.v) v = brng.gaussian();
      raw.push_back(x);
      Tensor a = x, b = x;
      for (double& v : a.v) v += 0.1 * brng.gaussian();
      for (double& v : b.v) v += 0.1 * brng.gaussian();
      va.push_back(a);
      vb.push_back(b);
      labels.push_back(static_cast<int>(brng.below(2)));
      trusted.push_back(brng.below(2) == 0);
    }
    auto draws_v = make_blend_draws(trusted, mix_seed(0xd1a, trial));
    auto routed = route(raw, va, vb, labels, trusted, draws_v);
    for (int i = 0; i < n; ++i) {
      if (trusted[i]) continue;
      if (!bitwise_equal(routed[i].view_a, va[i]) || !bitwise_equal(routed[i].view_b, vb[i]) ||
          !bitwise_equal(routed[i].clean, raw[i]))
        ++mutated;
    }
  }
  const bool pass = lambda_ok && mutated == 0;
  report(6, pass,
         fmt("lambda in [0.5,1] with mean %.4f in [0.745,0.755] over 1e5 draws; %d distrusted "
             "samples mutated across 100 batches",
             mean, mutated));
  REQUIRE(pass);
}

TEST_CASE("criterion 7: distrusted labels cannot touch the step update", "[fast]") {
  int failures = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(mix_seed(0xc7, trial));
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.clip_seconds = 2.0;
    cfg.temporal_kernel = 5;
    cfg.projector = ProjectorConfig{12, 6};
    cfg.contrastive.memory = 4 + static_cast<int>(rng.below(5));
    cfg.contrastive.tau = 0.2 + rng.uniform();
    EncoderConfig ecfg;
    ecfg.d = 3 + static_cast<int>(rng.below(3));
    ecfg.d1 = 2;
    ecfg.clip_count = 2;
    ecfg.temporal_kernel = 5;

    const int n = 4 + static_cast<int>(rng.below(5));
    StepInputs in;
    in.step_seed = rng.next_u64();
    int first_distrusted = -1;
    for (int i = 0; i < n; ++i) {
      Tensor x({ecfg.d, 48});
      for (double& v : x.v) v = rng.gaussian();
      in.raw.push_back(x);
      in.train_labels.push_back(static_cast<int>(rng.below(2)));
      const bool tr = i % 3 != 1;  // mixed partition with >= 1 distrusted
      in.trusted.push_back(tr);
      if (!tr && first_distrusted < 0) first_distrusted = i;
      Tensor aux({2});
      aux[0] = rng.uniform();
      aux[1] = 1.0 - aux[0];
      in.aux.push_back(aux);
    }
    ModelParams base = init_params(ecfg, cfg.projector, rng.next_u64());
    auto run = [&](const StepInputs& si) {
      ModelParams p = base;
      SgdState opt;
      MemoryBank mem(cfg.contrastive.memory);
      train_step(p, opt, mem, si, cfg, ecfg, 0.05);
      return p;
    };
    ModelParams a = run(in);
    StepInputs flipped = in;
    flipped.train_labels[first_distrusted] = 1 - flipped.train_labels[first_distrusted];
    ModelParams b = run(flipped);
    auto ra = named_params(a);
    auto rb = named_params(b);
    for (std::size_t p = 0; p < ra.size(); ++p)
      if (!bitwise_equal(*ra[p].tensor, *rb[p].tensor)) {
        ++failures;
        break;
      }
  }
  const bool pass = failures == 0;
  report(7, pass,
         fmt("flipping a distrusted train label left the update bitwise-identical in %d/20 "
             "random configurations",
             20 - failures));
  REQUIRE(pass);
}

TEST_CASE("criterion 8: clean-label separability oracle", "[separability]") {
  const auto t0 = std::chrono::steady_clock::now();
  RunOutcome out = run_training(default_task().all, 0);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = out.frag_acc >= 0.95 && seconds <= 600.0;
  report(8, pass,
         fmt("alpha=0, 30 epochs, seed 0: held-out fragment accuracy %.4f >= 0.95 in %.0fs <= "
             "600s",
             out.frag_acc, seconds));
  REQUIRE(pass);
}

TEST_CASE("criteria 9-10: noisy-label recovery and stratifier trajectory", "[noise]") {
  const RunOutcome clean = run_training(default_task().all, 0);
  std::vector<double> frag, subj;
  std::vector<std::vector<double>> precisions;
  for (int s = 0; s < 3; ++s) {
    FragmentSet noisy = inject_noise(default_task().all, 0.3, 100 + s);
    RunOutcome out = run_training(noisy, s);
    frag.push_back(out.frag_acc);
    subj.push_back(out.subj_acc);
    precisions.push_back(out.strat_precision);
  }
  const double frag_med = median3(frag);
  const double subj_med = median3(subj);
  const bool pass9 = frag_med >= clean.frag_acc - 0.10 && subj_med >= 0.85;
  report(9, pass9,
         fmt("alpha=0.3 3-seed median fragment accuracy %.4f >= %.4f (alpha=0 %.4f - 10pts); "
             "median subject accuracy %.4f >= 0.85",
             frag_med, clean.frag_acc - 0.10, clean.frag_acc, subj_med));

  // Per-epoch 3-seed median precision, final value and last-10 monotonicity
  // up to the 0.02 tolerance.
  const int epochs = static_cast<int>(precisions[0].size());
  std::vector<double> med(epochs);
  for (int e = 0; e < epochs; ++e)
    med[e] = median3({precisions[0][e], precisions[1][e], precisions[2][e]});
  bool monotone = true;
  for (int e = epochs - 10; e + 1 < epochs; ++e)
    if (med[e + 1] < med[e] - 0.02) monotone = false;
  const bool pass10 = med.back() >= 0.90 && monotone;
  report(10, pass10,
         fmt("trusted-set precision (3-seed median): final %.4f >= 0.90, last-10 trajectory "
             "non-decreasing within 0.02: %s",
             med.back(), monotone ? "yes" : "no"));
  REQUIRE(pass9);
  REQUIRE(pass10);
}

TEST_CASE("criterion 11: ablation direction checks", "[ablations]") {
  std::vector<double> full, wocs, m0;
  for (int s = 0; s < 3; ++s) {
    FragmentSet noisy = inject_noise(default_task().all, 0.3, 100 + s);
    full.push_back(run_training(noisy, s).frag_acc);
    wocs.push_back(run_training(noisy, s, TrainConfig::Mode::PlainCE).frag_acc);
    m0.push_back(run_training(noisy, s, TrainConfig::Mode::Full, 0).frag_acc);
  }
  const double full_med = median3(full);
  const double wocs_med = median3(wocs);
  const double m0_med = median3(m0);
  const bool pass = wocs_med < full_med && m0_med <= full_med + 0.02;
  report(11, pass,
         fmt("3-seed medians at alpha=0.3: w/o CS %.4f < full MACS %.4f (strict); M=0 %.4f <= "
             "%.4f (full + 0.02)",
             wocs_med, full_med, m0_med, full_med + 0.02));
  REQUIRE(pass);
}

TEST_CASE("criterion 12: bitwise-deterministic training", "[determinism]") {
  namespace fs = std::filesystem;
  FragmentSet noisy = inject_noise(default_task().all, 0.3, 7);
  auto [test_set, train_set] = split_by_subjects(noisy, default_task().folds[0]);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 5;

  auto run_and_dump = [&](const fs::path& dir) {
    TrainResult res = train(train_set, cfg, &test_set);
    fs::create_directories(dir);
    save_checkpoint(res.params, dir / "checkpoint_final.bin");
    write_loss_log(res.step_logs, dir / "loss_log.csv");
    write_stratifier_log(res.epoch_logs, dir / "stratifier_log.csv");
  };
  const fs::path base = fs::temp_directory_path() / "macs_acceptance_det";
  fs::remove_all(base);
  run_and_dump(base / "a");
  run_and_dump(base / "b");

  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  bool pass = true;
  for (const char* name : {"checkpoint_final.bin", "loss_log.csv", "stratifier_log.csv"}) {
    const std::string a = slurp(base / "a" / name);
    const std::string b = slurp(base / "b" / name);
    pass = pass && !a.empty() && a == b;
  }
  fs::remove_all(base);
  report(12, pass, "two identical train runs produce bitwise-identical checkpoints and logs");
  REQUIRE(pass);
}
