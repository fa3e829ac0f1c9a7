// macs: data synthesis, label-noise injection, training, evaluation and
// cross-validation for the MACS pipeline. Every subcommand is deterministic
// given its flags and seed, and every run directory is self-describing
// (manifest + configs + logs).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "macs/archive.hpp"
#include "macs/common.hpp"
#include "macs/data.hpp"
#include "macs/eval.hpp"
#include "macs/gradcheck_suite.hpp"
#include "macs/model.hpp"
#include "macs/report.hpp"
#include "macs/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

macs::SynthSpec load_synth_spec(const std::string& path) {
  if (path.empty()) return macs::SynthSpec::defaults();
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("synth: cannot open spec file " + path);
  json j;
  f >> j;
  macs::SynthSpec spec = macs::SynthSpec::defaults(
      j.contains("d") ? j.at("d").get<int>() : macs::SynthSpec{}.channels);
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("n_subjects_per_class", spec.n_subjects_per_class);
  get("d", spec.channels);
  get("seconds", spec.seconds);
  get("f_s", spec.sample_rate);
  get("noise_floor", spec.noise_floor);
  get("sinusoids_per_channel", spec.sinusoids_per_channel);
  if (j.contains("band0")) {
    spec.band0_lo = j["band0"][0].get<double>();
    spec.band0_hi = j["band0"][1].get<double>();
  }
  if (j.contains("band1")) {
    spec.band1_lo = j["band1"][0].get<double>();
    spec.band1_hi = j["band1"][1].get<double>();
  }
  auto read_template = [&](const char* key, macs::Tensor& out) {
    if (!j.contains(key)) return;
    const auto& rows = j.at(key);
    const int d = static_cast<int>(rows.size());
    out = macs::Tensor({d, d});
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) out.at(r, c) = rows[r][c].get<double>();
  };
  read_template("template0", spec.template0);
  read_template("template1", spec.template1);
  return spec;
}

macs::TrainConfig load_train_config(const std::string& path) {
  macs::TrainConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("train: cannot open config file " + path);
  json j;
  f >> j;
  cfg = j.get<macs::TrainConfig>();
  return cfg;
}

struct TrainFlagOverrides {
  std::optional<int> epochs, batch, k, memory, warmup;
  std::optional<double> lr, tau, clip_seconds, sigma_hi, alpha_expected;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;

  void apply(macs::TrainConfig& cfg) const {
    if (epochs) cfg.epochs = *epochs;
    if (batch) cfg.batch_size = *batch;
    if (k) cfg.stratifier.k = *k;
    if (memory) cfg.contrastive.memory = *memory;
    if (warmup) cfg.stratifier.warmup_epochs = *warmup;
    if (lr) cfg.lr0 = *lr;
    if (tau) cfg.contrastive.tau = *tau;
    if (clip_seconds) cfg.clip_seconds = *clip_seconds;
    if (sigma_hi) cfg.augment.sigma_hi = *sigma_hi;
    if (alpha_expected) cfg.alpha_expected = *alpha_expected;
    if (seed) cfg.seed = *seed;
    if (mode) cfg.mode = *mode == "wo_cs" ? macs::TrainConfig::Mode::PlainCE
                                          : macs::TrainConfig::Mode::Full;
  }
};

void add_train_flags(CLI::App* cmd, TrainFlagOverrides& o) {
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--batch", o.batch, "Batch size");
  cmd->add_option("--lr", o.lr, "Initial learning rate");
  cmd->add_option("--tau", o.tau, "Contrastive temperature");
  cmd->add_option("--memory,-M", o.memory, "Memory bank length");
  cmd->add_option("--k,-K", o.k, "Stratifier neighbor count");
  cmd->add_option("--clip-seconds", o.clip_seconds, "Temporal scale of the dynamic networks");
  cmd->add_option("--sigma-hi", o.sigma_hi, "Upper bound of the jitter range");
  cmd->add_option("--alpha-expected", o.alpha_expected,
                  "Expected label-noise fraction (recorded in the manifest only)");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--warmup", o.warmup, "Stratifier warmup epochs");
  cmd->add_option("--mode", o.mode, "full | wo_cs")->check(CLI::IsMember({"full", "wo_cs"}));
}

macs::FoldMetrics evaluate_fold(const macs::ModelParams& params, const macs::FragmentSet& eval_set,
                                const macs::EncoderConfig& ecfg, int fold, int epoch) {
  macs::DatasetPass pass = macs::dataset_forward(params, eval_set, ecfg);
  std::vector<int> truths;
  std::vector<double> prob1;
  std::vector<int> subjects;
  std::map<int, int> subject_truth;
  for (int i = 0; i < eval_set.size(); ++i) {
    const macs::Fragment& f = eval_set.fragments[i];
    truths.push_back(f.true_label);
    prob1.push_back(pass.probs[i][1]);
    subjects.push_back(f.subject_id);
    subject_truth[f.subject_id] = f.true_label;
  }
  macs::FoldMetrics m;
  m.fold = fold;
  m.epoch = epoch;
  m.fragment = macs::fragment_metrics(pass.predictions, truths);
  m.subject = macs::subject_metrics(macs::subject_ensemble(prob1, subjects, subject_truth));
  return m;
}

void write_train_artifacts(const fs::path& out_dir, const macs::TrainConfig& cfg,
                           const macs::TrainResult& res, bool have_eval) {
  fs::create_directories(out_dir);
  macs::save_checkpoint(res.params, out_dir / "checkpoint_final.bin");
  if (have_eval && res.best_epoch >= 0)
    macs::save_checkpoint(res.best_params, out_dir / "checkpoint_best.bin");
  std::ofstream cf(out_dir / "config.json");
  cf << json(cfg).dump(2) << "\n";
  macs::write_loss_log(res.step_logs, out_dir / "loss_log.csv");
  macs::write_stratifier_log(res.epoch_logs, out_dir / "stratifier_log.csv");
}

int cmd_synth(const std::string& spec_path, std::uint64_t seed, double t_s_seconds,
              const std::string& out_dir, const std::vector<std::string>& argv) {
  macs::RunManifest manifest;
  manifest.command = "synth";
  manifest.argv = argv;
  manifest.seed = seed;
  manifest.started_at = macs::iso_timestamp();

  macs::SynthSpec spec = load_synth_spec(spec_path);
  auto recs = macs::synthesize(spec, seed);
  const int t_s = static_cast<int>(t_s_seconds * spec.sample_rate);
  macs::FragmentSet fset = macs::make_fragment_set(recs, t_s);
  macs::write_archive(fset, out_dir);
  manifest.resolved_config = {{"n_subjects_per_class", spec.n_subjects_per_class},
                              {"d", spec.channels},
                              {"seconds", spec.seconds},
                              {"f_s", spec.sample_rate},
                              {"T_s", t_s},
                              {"noise_floor", spec.noise_floor},
                              {"fragments", fset.size()}};
  manifest.input_hash = macs::hash_archive_dir(out_dir);
  manifest.finished_at = macs::iso_timestamp();
  macs::write_manifest(manifest, out_dir);
  std::printf("wrote %d fragments (%d subjects) to %s\n", fset.size(),
              static_cast<int>(fset.subject_ids().size()), out_dir.c_str());
  return kExitOk;
}

int cmd_inject_noise(const std::string& in_dir, double alpha, std::uint64_t seed,
                     bool per_fragment, const std::string& out_dir,
                     const std::vector<std::string>& argv) {
  macs::RunManifest manifest;
  manifest.command = "inject-noise";
  manifest.argv = argv;
  manifest.seed = seed;
  manifest.started_at = macs::iso_timestamp();
  manifest.input_hash = macs::hash_archive_dir(in_dir);

  macs::FragmentSet fset = macs::read_archive(in_dir);
  macs::FragmentSet noisy = macs::inject_noise(
      fset, alpha, seed,
      per_fragment ? macs::NoiseGranularity::Fragment : macs::NoiseGranularity::Subject);
  macs::write_archive(noisy, out_dir);
  manifest.resolved_config = {{"alpha_requested", alpha},
                              {"alpha_achieved", noisy.noise_fraction},
                              {"granularity", per_fragment ? "fragment" : "subject"}};
  manifest.finished_at = macs::iso_timestamp();
  macs::write_manifest(manifest, out_dir);
  std::printf("requested alpha %.4f, achieved %.4f (%s-level)\n", alpha, noisy.noise_fraction,
              per_fragment ? "fragment" : "subject");
  return kExitOk;
}

int cmd_train(const std::string& data_dir, const std::string& eval_dir,
              const std::string& config_path, const TrainFlagOverrides& overrides,
              const std::string& out_dir, const std::vector<std::string>& argv) {
  macs::RunManifest manifest;
  manifest.command = "train";
  manifest.argv = argv;
  manifest.started_at = macs::iso_timestamp();
  manifest.input_hash = macs::hash_archive_dir(data_dir);

  macs::TrainConfig cfg = load_train_config(config_path);
  overrides.apply(cfg);
  manifest.seed = cfg.seed;
  manifest.resolved_config = json(cfg);

  macs::FragmentSet train_set = macs::read_archive(data_dir);
  std::optional<macs::FragmentSet> eval_set;
  if (!eval_dir.empty()) eval_set = macs::read_archive(eval_dir);

  macs::TrainResult res = macs::train(train_set, cfg, eval_set ? &*eval_set : nullptr);
  write_train_artifacts(out_dir, cfg, res, eval_set.has_value());

  std::vector<macs::FoldMetrics> rows;
  if (eval_set) {
    macs::FoldMetrics m = evaluate_fold(res.params, *eval_set, res.encoder_config, 0, cfg.epochs - 1);
    if (!res.epoch_logs.empty()) {
      m.trusted_precision = res.epoch_logs.back().strat_precision;
      m.trusted_recall = res.epoch_logs.back().strat_recall;
    }
    rows.push_back(m);
    macs::write_metrics_csv(rows, fs::path(out_dir) / "metrics.csv");
    std::ofstream jf(fs::path(out_dir) / "metrics.json");
    jf << macs::metrics_json(m).dump(2) << "\n";
    std::printf("final: fragment acc %.4f, subject acc %.4f (best epoch %d)\n",
                m.fragment.accuracy, m.subject.accuracy, res.best_epoch);
  } else {
    std::printf("trained %d epochs, %zu steps; checkpoint at %s\n", cfg.epochs,
                res.step_logs.size(), (fs::path(out_dir) / "checkpoint_final.bin").c_str());
  }
  manifest.finished_at = macs::iso_timestamp();
  macs::write_manifest(manifest, out_dir);
  return kExitOk;
}

int cmd_eval(const std::string& data_dir, const std::string& checkpoint,
             const std::string& out_dir, const std::vector<std::string>& argv) {
  macs::RunManifest manifest;
  manifest.command = "eval";
  manifest.argv = argv;
  manifest.started_at = macs::iso_timestamp();
  manifest.input_hash = macs::hash_archive_dir(data_dir);

  const fs::path ckpt_path(checkpoint);
  macs::TrainConfig cfg = load_train_config((ckpt_path.parent_path() / "config.json").string());
  macs::FragmentSet eval_set = macs::read_archive(data_dir);
  const macs::EncoderConfig ecfg = cfg.encoder_for(eval_set);
  macs::ModelParams params = macs::init_params(ecfg, cfg.projector, 0);
  macs::load_checkpoint(params, ckpt_path);

  macs::FoldMetrics m = evaluate_fold(params, eval_set, ecfg, 0, cfg.epochs - 1);
  fs::create_directories(out_dir);
  macs::write_metrics_csv({m}, fs::path(out_dir) / "metrics.csv");
  std::ofstream jf(fs::path(out_dir) / "metrics.json");
  jf << macs::metrics_json(m).dump(2) << "\n";
  manifest.resolved_config = json(cfg);
  manifest.seed = cfg.seed;
  manifest.finished_at = macs::iso_timestamp();
  macs::write_manifest(manifest, out_dir);
  std::printf("fragment acc %.4f prec %.4f rec %.4f f1 %.4f | subject acc %.4f\n",
              m.fragment.accuracy, m.fragment.precision, m.fragment.recall, m.fragment.f1,
              m.subject.accuracy);
  return kExitOk;
}

int cmd_cv(const std::string& data_dir, int folds, const std::string& config_path,
           const TrainFlagOverrides& overrides, const std::string& out_dir,
           const std::vector<std::string>& argv) {
  macs::RunManifest manifest;
  manifest.command = "cv";
  manifest.argv = argv;
  manifest.started_at = macs::iso_timestamp();
  manifest.input_hash = macs::hash_archive_dir(data_dir);

  macs::TrainConfig cfg = load_train_config(config_path);
  overrides.apply(cfg);
  manifest.seed = cfg.seed;
  manifest.resolved_config = json(cfg);

  macs::FragmentSet all = macs::read_archive(data_dir);
  const auto fold_subjects = macs::subject_split(all, folds, cfg.seed);

  std::vector<macs::FoldMetrics> rows;
  std::vector<double> frag_accs, subj_accs, frag_f1s;
  for (int fold = 0; fold < folds; ++fold) {
    auto [test_set, train_set] = macs::split_by_subjects(all, fold_subjects[fold]);
    macs::TrainResult res = macs::train(train_set, cfg, &test_set);
    const fs::path fold_dir = fs::path(out_dir) / ("fold" + std::to_string(fold));
    write_train_artifacts(fold_dir, cfg, res, true);
    macs::FoldMetrics m = evaluate_fold(res.params, test_set, res.encoder_config, fold,
                                        cfg.epochs - 1);
    if (!res.epoch_logs.empty()) {
      m.trusted_precision = res.epoch_logs.back().strat_precision;
      m.trusted_recall = res.epoch_logs.back().strat_recall;
    }
    rows.push_back(m);
    frag_accs.push_back(m.fragment.accuracy);
    subj_accs.push_back(m.subject.accuracy);
    frag_f1s.push_back(m.fragment.f1);
    std::printf("fold %d: fragment acc %.4f f1 %.4f | subject acc %.4f\n", fold,
                m.fragment.accuracy, m.fragment.f1, m.subject.accuracy);
  }
  fs::create_directories(out_dir);
  macs::write_metrics_csv(rows, fs::path(out_dir) / "metrics.csv");
  json summary{{"folds", folds},
               {"fragment_accuracy", macs::mean_std_cell(frag_accs)},
               {"fragment_f1", macs::mean_std_cell(frag_f1s)},
               {"subject_accuracy", macs::mean_std_cell(subj_accs)},
               {"per_fold", json::array()}};
  for (const auto& m : rows) summary["per_fold"].push_back(macs::metrics_json(m));
  std::ofstream jf(fs::path(out_dir) / "metrics.json");
  jf << summary.dump(2) << "\n";
  std::printf("summary: fragment acc %s | f1 %s | subject acc %s\n",
              macs::mean_std_cell(frag_accs).c_str(), macs::mean_std_cell(frag_f1s).c_str(),
              macs::mean_std_cell(subj_accs).c_str());
  manifest.finished_at = macs::iso_timestamp();
  macs::write_manifest(manifest, out_dir);
  return kExitOk;
}

int cmd_gradcheck(const std::string& size) {
  macs::GradSuiteResult res = macs::run_gradient_suite(size == "full");
  for (const auto& c : res.cases)
    std::printf("[%s] %-32s max rel err %.3e (tol %.0e, %d seeds)\n", c.passed ? "PASS" : "FAIL",
                c.name.c_str(), c.max_rel_err, c.tolerance, c.seeds);
  std::printf("%zu cases in %.1fs: %s\n", res.cases.size(), res.seconds,
              res.all_passed() ? "all passed" : "FAILURES");
  return res.all_passed() ? kExitOk : 1;
}

int cmd_export_latent(const std::string& data_dir, const std::string& checkpoint,
                      const std::string& out_path) {
  const fs::path ckpt_path(checkpoint);
  macs::TrainConfig cfg = load_train_config((ckpt_path.parent_path() / "config.json").string());
  macs::FragmentSet data = macs::read_archive(data_dir);
  const macs::EncoderConfig ecfg = cfg.encoder_for(data);
  macs::ModelParams params = macs::init_params(ecfg, cfg.projector, 0);
  macs::load_checkpoint(params, ckpt_path);

  std::ofstream f(out_path);
  f << "fragment_id,subject_id,true_label,train_label,prob1";
  for (int k = 0; k < cfg.projector.z_dim; ++k) f << ",z" << k;
  f << "\n";
  for (const macs::Fragment& frag : data.fragments) {
    macs::FragmentForward fwd = macs::forward_fragment(params, frag.tensor(), ecfg);
    f << frag.fragment_id << ',' << frag.subject_id << ',' << frag.true_label << ','
      << frag.train_label << ',' << macs::fmt_double(fwd.probs[1]);
    for (double z : fwd.z.v) f << ',' << macs::fmt_double(z);
    f << '\n';
  }
  std::printf("wrote %d latent rows to %s\n", data.size(), out_path.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MACS: confidence-stratified manifold-attention training on multichannel "
               "time-series with unreliable labels"};
  app.require_subcommand(1);
  std::vector<std::string> full_argv(argv, argv + argc);

  // synth
  std::string synth_spec, synth_out;
  std::uint64_t synth_seed = 0;
  double synth_ts_seconds = 2.0;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic fragment archive");
  synth->add_option("--spec", synth_spec, "SynthSpec JSON (defaults when omitted)");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--fragment-seconds", synth_ts_seconds, "Fragment length in seconds");
  synth->add_option("--out", synth_out, "Output archive directory")->required();

  // inject-noise
  std::string noise_in, noise_out;
  double noise_alpha = 0.3;
  std::uint64_t noise_seed = 0;
  bool noise_per_fragment = false;
  CLI::App* inject = app.add_subcommand("inject-noise", "Flip train labels of an archive");
  inject->add_option("--in", noise_in, "Input archive")->required();
  inject->add_option("--alpha", noise_alpha, "Noise fraction in [0,1]")->required();
  inject->add_option("--seed", noise_seed, "Selection seed");
  inject->add_flag("--per-fragment", noise_per_fragment,
                   "Flip individual fragments instead of whole subjects");
  inject->add_option("--out", noise_out, "Output archive directory")->required();

  // train
  std::string train_data, train_eval, train_config, train_out;
  TrainFlagOverrides train_overrides;
  CLI::App* train_cmd = app.add_subcommand("train", "Train MACS on an archive");
  train_cmd->add_option("--data", train_data, "Training archive")->required();
  train_cmd->add_option("--eval-data", train_eval, "Optional held-out archive");
  train_cmd->add_option("--config", train_config, "TrainConfig JSON");
  train_cmd->add_option("--out", train_out, "Run directory")->required();
  add_train_flags(train_cmd, train_overrides);

  // eval
  std::string eval_data, eval_ckpt, eval_out;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on an archive");
  eval_cmd->add_option("--data", eval_data, "Evaluation archive")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--out", eval_out, "Run directory")->required();

  // cv
  std::string cv_data, cv_config, cv_out;
  int cv_folds = 4;
  TrainFlagOverrides cv_overrides;
  CLI::App* cv_cmd = app.add_subcommand("cv", "Subject-independent N-fold cross-validation");
  cv_cmd->add_option("--data", cv_data, "Archive")->required();
  cv_cmd->add_option("--folds", cv_folds, "Fold count")->required();
  cv_cmd->add_option("--config", cv_config, "TrainConfig JSON");
  cv_cmd->add_option("--out", cv_out, "Run directory")->required();
  add_train_flags(cv_cmd, cv_overrides);

  // gradcheck
  std::string grad_size = "small";
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Run the gradient verification suite");
  grad_cmd->add_option("--size", grad_size, "small | full")
      ->check(CLI::IsMember({"small", "full"}));

  // export-latent
  std::string exp_data, exp_ckpt, exp_out;
  CLI::App* exp_cmd = app.add_subcommand("export-latent", "Dump latent vectors to CSV");
  exp_cmd->add_option("--data", exp_data, "Archive")->required();
  exp_cmd->add_option("--checkpoint", exp_ckpt, "Checkpoint file")->required();
  exp_cmd->add_option("--out", exp_out, "Output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*synth) return cmd_synth(synth_spec, synth_seed, synth_ts_seconds, synth_out, full_argv);
    if (*inject)
      return cmd_inject_noise(noise_in, noise_alpha, noise_seed, noise_per_fragment, noise_out,
                              full_argv);
    if (*train_cmd)
      return cmd_train(train_data, train_eval, train_config, train_overrides, train_out,
                       full_argv);
    if (*eval_cmd) return cmd_eval(eval_data, eval_ckpt, eval_out, full_argv);
    if (*cv_cmd) return cmd_cv(cv_data, cv_folds, cv_config, cv_overrides, cv_out, full_argv);
    if (*grad_cmd) return cmd_gradcheck(grad_size);
    if (*exp_cmd) return cmd_export_latent(exp_data, exp_ckpt, exp_out);
  } catch (const macs::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kExitNumerical;
  } catch (const macs::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
  return kExitValidation;
}
