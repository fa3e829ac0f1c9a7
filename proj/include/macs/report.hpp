#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "macs/common.hpp"
#include "macs/eval.hpp"
#include "macs/stratifier.hpp"
#include "macs/trainer.hpp"

namespace macs {

/// Every run directory is self-describing: command, resolved configuration,
/// seed and input hashes suffice to reproduce the run bit-exactly
/// (timestamps aside).
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json resolved_config;
  std::uint64_t seed = 0;
  std::string input_hash;  // xxh64 of the consumed archive payloads
  std::string started_at;
  std::string finished_at;
};

inline std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

inline std::string hash_archive_dir(const std::filesystem::path& dir) {
  std::uint64_t h = 0x9e3779b97f4a7c15ull;
  for (const char* name : {"manifest.json", "data.bin"}) {
    std::ifstream f(dir / name, std::ios::binary);
    if (!f) continue;
    std::string bytes((std::istreambuf_iterator<char>(f)), {});
    h = xxh64(bytes.data(), bytes.size(), h);
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Written as run_manifest.json: archive directories already own
/// manifest.json for the fragment-archive format.
inline void write_manifest(const RunManifest& m, const std::filesystem::path& run_dir) {
  std::filesystem::create_directories(run_dir);
  nlohmann::json j{
      {"command", m.command},       {"argv", m.argv},
      {"config", m.resolved_config}, {"seed", m.seed},
      {"input_hash", m.input_hash}, {"started_at", m.started_at},
      {"finished_at", m.finished_at}};
  std::ofstream f(run_dir / "run_manifest.json");
  f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// CSV artifacts. Floats are printed with round-trip precision so identical
// runs produce byte-identical logs.
// ---------------------------------------------------------------------------

inline void write_loss_log(const std::vector<StepLog>& steps, const std::filesystem::path& path) {
  std::ofstream f(path);
  f << "step,loss_ag,loss_sw,loss_st,loss_dl,total\n";
  for (const StepLog& s : steps)
    f << s.step << ',' << fmt_double(s.ag) << ',' << fmt_double(s.sw) << ',' << fmt_double(s.st)
      << ',' << fmt_double(s.dl) << ',' << fmt_double(s.total) << '\n';
}

inline void write_stratifier_log(const std::vector<EpochLog>& epochs,
                                 const std::filesystem::path& path) {
  std::ofstream f(path);
  f << "epoch,trusted_class0,trusted_class1,precision,recall,fallback\n";
  for (const EpochLog& e : epochs)
    f << e.epoch << ',' << e.trusted0 << ',' << e.trusted1 << ',' << fmt_double(e.strat_precision)
      << ',' << fmt_double(e.strat_recall) << ',' << (e.strat_fallback ? 1 : 0) << '\n';
}

struct FoldMetrics {
  int fold = -1;
  int epoch = -1;
  MetricReport fragment;
  MetricReport subject;
  double trusted_precision = 0.0;
  double trusted_recall = 0.0;
};

inline void write_metrics_csv(const std::vector<FoldMetrics>& rows,
                              const std::filesystem::path& path) {
  std::ofstream f(path);
  f << "fold,epoch,frag_accuracy,frag_precision,frag_recall,frag_f1,"
       "subj_accuracy,subj_precision,subj_recall,subj_f1,trusted_precision,trusted_recall\n";
  for (const FoldMetrics& r : rows)
    f << r.fold << ',' << r.epoch << ',' << fmt_double(r.fragment.accuracy) << ','
      << fmt_double(r.fragment.precision) << ',' << fmt_double(r.fragment.recall) << ','
      << fmt_double(r.fragment.f1) << ',' << fmt_double(r.subject.accuracy) << ','
      << fmt_double(r.subject.precision) << ',' << fmt_double(r.subject.recall) << ','
      << fmt_double(r.subject.f1) << ',' << fmt_double(r.trusted_precision) << ','
      << fmt_double(r.trusted_recall) << '\n';
}

inline nlohmann::json metrics_json(const FoldMetrics& r) {
  auto rep = [](const MetricReport& m) {
    return nlohmann::json{{"accuracy", m.accuracy}, {"precision", m.precision},
                          {"recall", m.recall},     {"f1", m.f1},
                          {"tp", m.tp},             {"tn", m.tn},
                          {"fp", m.fp},             {"fn", m.fn}};
  };
  return nlohmann::json{{"fold", r.fold},
                        {"epoch", r.epoch},
                        {"fragment", rep(r.fragment)},
                        {"subject", rep(r.subject)},
                        {"trusted_precision", r.trusted_precision},
                        {"trusted_recall", r.trusted_recall},
                        // The J threshold is fit on the evaluation scores
                        // themselves; subject metrics are optimistic.
                        {"youden_threshold_fit", "evaluation-set"}};
}

/// "87.65(4.31)"-style mean(std) cell, in percent.
inline std::string mean_std_cell(const std::vector<double>& values) {
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= values.empty() ? 1 : values.size();
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var = values.size() > 1 ? var / values.size() : 0.0;
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2f(%.2f)", 100.0 * mean, 100.0 * std::sqrt(var));
  return buf;
}

}  // namespace macs
