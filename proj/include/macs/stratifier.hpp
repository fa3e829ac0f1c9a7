#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "macs/common.hpp"
#include "macs/tensor.hpp"

namespace macs {

struct StratifierConfig {
  int k = 25;
  int warmup_epochs = 0;  // epochs that are stratified as all-distrusted

  void validate() const {
    if (k < 1) throw std::invalid_argument("stratifier config: K must be >= 1");
    if (warmup_epochs < 0) throw std::invalid_argument("stratifier config: negative warmup");
  }
};

/// Per-epoch split of the samples into trusted and distrusted, with trusted
/// pairs Ψ and the (detached) auxiliary soft labels for distrusted samples.
struct ConfidencePartition {
  std::vector<char> is_trusted;                    // size n
  std::vector<int> trusted;                        // ids, ascending
  std::vector<int> distrusted;                     // ids, ascending
  std::vector<std::pair<int, int>> trusted_pairs;  // Ψ: i < j, equal train label
  std::vector<Tensor> aux_labels;                  // size n; probability vectors
  bool all_distrusted_fallback = false;            // a class had zero candidates
};

/// Cosine similarity; zero vectors are defined to score 0 (flagged upstream).
inline double cosine(const Tensor& a, const Tensor& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int i = 0; i < a.numel(); ++i) {
    dot += a.v[i] * b.v[i];
    na += a.v[i] * a.v[i];
    nb += b.v[i] * b.v[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct KnnVote {
  double p0 = 0.0;
  double p1 = 0.0;
  int y_bar = 0;

  double agreement(int label) const { return label == 0 ? p0 : p1; }
};

/// Neighbor-determined labels. For each primary sample the K nearest
/// candidates by cosine similarity (descending, ties broken by lower
/// candidate id) vote with their train labels; self is excluded. Extra
/// candidates (the memory bank) extend the pool but are never voted on.
inline std::vector<KnnVote> knn_labels(const std::vector<Tensor>& z, const std::vector<int>& y,
                                       int k, const std::vector<Tensor>& extra_z = {},
                                       const std::vector<int>& extra_y = {}) {
  const int n = static_cast<int>(z.size());
  const int total = n + static_cast<int>(extra_z.size());
  if (y.size() != z.size() || extra_y.size() != extra_z.size())
    throw std::invalid_argument("knn_labels: label count mismatch");
  if (k >= total)
    throw std::invalid_argument("knn_labels: K=" + std::to_string(k) +
                                " needs more than K candidates, have " + std::to_string(total));

  auto label_of = [&](int id) { return id < n ? y[id] : extra_y[id - n]; };
  auto z_of = [&](int id) -> const Tensor& { return id < n ? z[id] : extra_z[id - n]; };

  std::vector<KnnVote> votes(n);
  std::vector<std::pair<double, int>> scored;
  scored.reserve(total);
  for (int i = 0; i < n; ++i) {
    scored.clear();
    for (int j = 0; j < total; ++j) {
      if (j == i) continue;
      scored.emplace_back(cosine(z[i], z_of(j)), j);
    }
    std::partial_sort(scored.begin(), scored.begin() + k, scored.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });
    int ones = 0;
    for (int r = 0; r < k; ++r) ones += label_of(scored[r].second);
    votes[i].p1 = static_cast<double>(ones) / k;
    votes[i].p0 = 1.0 - votes[i].p1;
    votes[i].y_bar = votes[i].p1 > votes[i].p0 ? 1 : 0;  // ties go to label 0
  }
  return votes;
}

/// Confidence stratification. A sample is candidate-trusted when its
/// neighbor-determined label matches its train label; class balance is then
/// enforced by keeping, per class, the n_min candidates with the highest
/// agreement (n_min = minority candidate count), ties broken by lower id.
/// During warmup, or when one class has no candidates, everything is
/// distrusted. aux_probs are the classifier's soft predictions on the
/// un-augmented inputs and are stored detached for the distrusted samples.
inline ConfidencePartition stratify(const std::vector<Tensor>& z, const std::vector<int>& y,
                                    const std::vector<Tensor>& aux_probs,
                                    const StratifierConfig& cfg, int epoch,
                                    const std::vector<Tensor>& extra_z = {},
                                    const std::vector<int>& extra_y = {}) {
  cfg.validate();
  const int n = static_cast<int>(z.size());
  if (aux_probs.size() != z.size())
    throw std::invalid_argument("stratify: need one auxiliary probability vector per sample");

  ConfidencePartition part;
  part.is_trusted.assign(n, 0);
  part.aux_labels = aux_probs;

  auto finish_all_distrusted = [&](bool fallback) {
    part.distrusted.resize(n);
    std::iota(part.distrusted.begin(), part.distrusted.end(), 0);
    part.all_distrusted_fallback = fallback;
    return part;
  };

  if (epoch < cfg.warmup_epochs) return finish_all_distrusted(false);

  const std::vector<KnnVote> votes = knn_labels(z, y, cfg.k, extra_z, extra_y);

  std::vector<int> candidates[2];
  for (int i = 0; i < n; ++i)
    if (votes[i].y_bar == y[i]) candidates[y[i]].push_back(i);

  if (candidates[0].empty() || candidates[1].empty()) {
    log_warn("stratify: a class has zero trusted candidates; epoch " + std::to_string(epoch) +
             " falls back to all-distrusted");
    return finish_all_distrusted(true);
  }

  const std::size_t n_min = std::min(candidates[0].size(), candidates[1].size());
  for (int c = 0; c < 2; ++c) {
    std::sort(candidates[c].begin(), candidates[c].end(), [&](int a, int b) {
      const double pa = votes[a].agreement(y[a]);
      const double pb = votes[b].agreement(y[b]);
      if (pa != pb) return pa > pb;
      return a < b;
    });
    for (std::size_t r = 0; r < n_min; ++r) part.is_trusted[candidates[c][r]] = 1;
  }

  for (int i = 0; i < n; ++i)
    (part.is_trusted[i] ? part.trusted : part.distrusted).push_back(i);

  for (std::size_t a = 0; a < part.trusted.size(); ++a)
    for (std::size_t b = a + 1; b < part.trusted.size(); ++b)
      if (y[part.trusted[a]] == y[part.trusted[b]])
        part.trusted_pairs.emplace_back(part.trusted[a], part.trusted[b]);

  return part;
}

/// Diagnostics for the per-epoch stratification report; never fed back into
/// training.
struct StratifierDiagnostics {
  int trusted_count[2] = {0, 0};
  double precision = 0.0;  // trusted samples whose train label is correct
  double recall = 0.0;     // correctly-labeled samples that were trusted
};

inline StratifierDiagnostics stratifier_diagnostics(const ConfidencePartition& part,
                                                    const std::vector<int>& train_labels,
                                                    const std::vector<int>& true_labels) {
  StratifierDiagnostics d;
  int clean_total = 0, clean_trusted = 0;
  for (std::size_t i = 0; i < train_labels.size(); ++i) {
    const bool clean = train_labels[i] == true_labels[i];
    clean_total += clean;
    if (part.is_trusted[i]) {
      ++d.trusted_count[train_labels[i]];
      clean_trusted += clean;
    }
  }
  const int trusted_total = d.trusted_count[0] + d.trusted_count[1];
  d.precision = trusted_total > 0 ? static_cast<double>(clean_trusted) / trusted_total : 0.0;
  d.recall = clean_total > 0 ? static_cast<double>(clean_trusted) / clean_total : 0.0;
  return d;
}

}  // namespace macs
