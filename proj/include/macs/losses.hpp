#pragma once

#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "macs/autodiff.hpp"
#include "macs/common.hpp"
#include "macs/tensor.hpp"

namespace macs {

struct ContrastiveConfig {
  double tau = 0.45;
  int memory = 300;
  bool memory_positives = true;  // label-matched trusted memory entries count
                                 // as supervised positives, not just denominators

  void validate() const {
    if (tau <= 0.0) throw std::invalid_argument("contrastive config: tau must be positive");
    if (memory < 0) throw std::invalid_argument("contrastive config: negative memory length");
  }
};

/// FIFO store of past view latents. Entries are detached copies and never
/// receive gradients; they only enlarge the candidate pool of the
/// contrastive terms and the stratifier's neighbor pool.
class MemoryBank {
public:
  struct Entry {
    Tensor z;
    int label = 0;
    bool trusted = false;
    double lambda_context = 1.0;  // blend weight of the pushed view (1 = unblended)
  };

  explicit MemoryBank(int capacity) : capacity_(capacity) {
    if (capacity < 0) throw std::invalid_argument("memory bank: negative capacity");
  }

  void push(const Tensor& z, int label, bool trusted, double lambda_context = 1.0) {
    if (capacity_ == 0) return;
    entries_.push_back(Entry{z, label, trusted, lambda_context});
    while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
  }

  int size() const { return static_cast<int>(entries_.size()); }
  int capacity() const { return capacity_; }
  const Entry& entry(int i) const { return entries_[i]; }
  void clear() { entries_.clear(); }

private:
  std::deque<Entry> entries_;
  int capacity_;
};

/// One view latent entering the step's contrastive scope.
struct ViewLatent {
  ad::Var z;            // unit latent on the step tape
  int sample = 0;       // origin sample within the batch
  int label = 0;        // origin train label
  bool trusted = false;
  bool ok = true;       // false = degenerate latent, excluded from contrast
  double lambda = 1.0;  // blend weight of the origin sample
  int label_plus = 0;   // partner label (== label when unblended)
};

struct LossParts {
  ad::Var ag, sw, st, dl, total;
  int skipped_ag = 0;  // anchors without positives, contributing nothing
  int skipped_sw = 0;
  int skipped_st = 0;
};

namespace detail_loss {

/// Shared per-anchor machinery: scaled similarity row against the candidate
/// matrix and the self-excluded log denominator.
struct AnchorRow {
  ad::Var scaled;     // {R} similarities / tau
  ad::Var log_denom;  // log sum over r != anchor of exp(scaled_r)
};

inline AnchorRow anchor_row(ad::Tape& t, ad::Var z_anchor, ad::Var candidates, int self_col,
                            double tau) {
  const int zdim = t.val(z_anchor).numel();
  const int r = t.val(candidates).dim(1);
  ad::Var row = ad::reshape(ad::matmul(ad::reshape(z_anchor, {1, zdim}), candidates), {r});
  AnchorRow out;
  out.scaled = ad::scalar_mul(row, 1.0 / tau);
  ad::Var exps = ad::exp(out.scaled);
  ad::Var denom = ad::sub(ad::sum_all(exps), ad::element(exps, self_col));
  out.log_denom = ad::log(denom);
  return out;
}

/// -(1/|P|) Σ_{p in P} (scaled_p − log_denom) as a mask dot product.
inline ad::Var supcon_from_row(ad::Tape& t, const AnchorRow& row, const std::vector<int>& positives) {
  Tensor mask(t.val(row.scaled).shape);
  const double w = -1.0 / static_cast<double>(positives.size());
  for (int p : positives) mask.v[p] = w;
  return ad::add(ad::dot(row.scaled, t.constant(mask)), row.log_denom);
}

}  // namespace detail_loss

/// Supervised-contrastive term for anchor i over a set of unit
/// latents with labels: positives are the other same-label entries, the
/// denominator runs over everything but the anchor. Returns 0 (flagged via
/// had_positives) when the anchor has no positives.
inline ad::Var supcon_term(ad::Tape& t, int i, const std::vector<ad::Var>& z,
                           const std::vector<int>& y, double tau,
                           bool* had_positives = nullptr) {
  if (z.size() != y.size() || z.empty())
    throw std::invalid_argument("supcon_term: latents and labels must align");
  std::vector<int> positives;
  for (int j = 0; j < static_cast<int>(z.size()); ++j)
    if (j != i && y[j] == y[i]) positives.push_back(j);
  if (had_positives != nullptr) *had_positives = !positives.empty();
  if (positives.empty()) {
    log_debug("supcon_term: anchor " + std::to_string(i) + " has no positives, contributes 0");
    return t.constant(Tensor::scalar(0.0));
  }
  ad::Var cand = ad::stack_cols(z);
  auto row = detail_loss::anchor_row(t, z[i], cand, i, tau);
  return detail_loss::supcon_from_row(t, row, positives);
}

/// Step-scope contrastive graph over batch views plus memory. Builds the
/// candidate matrix once and derives L^Ag, L^Sw and L^St with the
/// confidence-gated positive rules:
///   Ag: anchors = distrusted views, positive = the twin view.
///   Sw: anchors = trusted (blended) views, positive = the twin view.
///   St: anchors = trusted views; positives = views of other trusted samples
///       (and trusted memory entries) matching y*, resp. y+, combined with
///       weights lambda and 1-lambda.
/// Distrusted views and untrusted memory entries appear only in denominators,
/// so no distrusted train label can influence the step's gradients.
class ContrastScope {
public:
  ContrastScope(ad::Tape& t, const std::vector<ViewLatent>& views, const MemoryBank& memory,
                const ContrastiveConfig& cfg)
      : tape_(t), views_(views), cfg_(cfg) {
    cfg.validate();
    for (int v = 0; v < static_cast<int>(views.size()); ++v)
      if (views[v].ok) {
        column_of_view_.push_back(v);
        cols_.push_back(views[v].z);
      }
    n_view_cols_ = static_cast<int>(cols_.size());
    for (int m = 0; m < memory.size(); ++m) {
      const MemoryBank::Entry& e = memory.entry(m);
      cols_.push_back(t.constant(e.z));
      mem_label_.push_back(e.label);
      mem_trusted_.push_back(e.trusted);
    }
    if (!cols_.empty()) candidates_ = ad::stack_cols(cols_);
  }

  ad::Var zero() const { return tape_.constant(Tensor::scalar(0.0)); }

  int view_columns() const { return n_view_cols_; }

  /// Twin-positive loss over the anchors selected by `want_trusted`.
  ad::Var twin_loss(bool want_trusted, int* skipped) {
    std::vector<ad::Var> terms;
    for (int c = 0; c < n_view_cols_; ++c) {
      const ViewLatent& v = views_[column_of_view_[c]];
      if (v.trusted != want_trusted) continue;
      std::vector<int> positives;
      for (int o = 0; o < n_view_cols_; ++o)
        if (o != c && views_[column_of_view_[o]].sample == v.sample) positives.push_back(o);
      if (positives.empty()) {
        ++*skipped;
        continue;
      }
      auto row = detail_loss::anchor_row(tape_, v.z, candidates_, c, cfg_.tau);
      terms.push_back(detail_loss::supcon_from_row(tape_, row, positives));
    }
    return mean_of(terms);
  }

  /// Interpolation-supervised loss over trusted anchors.
  ad::Var st_loss(int* skipped) {
    std::vector<ad::Var> terms;
    for (int c = 0; c < n_view_cols_; ++c) {
      const ViewLatent& v = views_[column_of_view_[c]];
      if (!v.trusted) continue;
      const std::vector<int> pos_star = label_positives(c, v.label);
      auto row_needed = [&](const std::vector<int>& p) { return !p.empty(); };

      if (v.lambda >= 1.0 || v.label_plus == v.label) {
        if (!row_needed(pos_star)) {
          ++*skipped;
          continue;
        }
        auto row = detail_loss::anchor_row(tape_, v.z, candidates_, c, cfg_.tau);
        terms.push_back(detail_loss::supcon_from_row(tape_, row, pos_star));
        continue;
      }
      const std::vector<int> pos_plus = label_positives(c, v.label_plus);
      if (!row_needed(pos_star) && !row_needed(pos_plus)) {
        ++*skipped;
        continue;
      }
      auto row = detail_loss::anchor_row(tape_, v.z, candidates_, c, cfg_.tau);
      std::vector<ad::Var> mix;
      if (row_needed(pos_star))
        mix.push_back(ad::scalar_mul(detail_loss::supcon_from_row(tape_, row, pos_star), v.lambda));
      if (row_needed(pos_plus))
        mix.push_back(ad::scalar_mul(detail_loss::supcon_from_row(tape_, row, pos_plus),
                                     1.0 - v.lambda));
      terms.push_back(mix.size() == 1 ? mix[0] : ad::add(mix[0], mix[1]));
    }
    return mean_of(terms);
  }

private:
  std::vector<int> label_positives(int anchor_col, int label) const {
    std::vector<int> out;
    for (int o = 0; o < n_view_cols_; ++o) {
      if (o == anchor_col) continue;
      const ViewLatent& cand = views_[column_of_view_[o]];
      if (cand.trusted && cand.label == label) out.push_back(o);
    }
    if (cfg_.memory_positives)
      for (std::size_t m = 0; m < mem_label_.size(); ++m)
        if (mem_trusted_[m] && mem_label_[m] == label)
          out.push_back(n_view_cols_ + static_cast<int>(m));
    return out;
  }

  ad::Var mean_of(const std::vector<ad::Var>& terms) {
    if (terms.empty()) return zero();
    ad::Var acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return ad::scalar_mul(acc, 1.0 / static_cast<double>(terms.size()));
  }

  ad::Tape& tape_;
  const std::vector<ViewLatent>& views_;
  ContrastiveConfig cfg_;
  std::vector<int> column_of_view_;
  std::vector<ad::Var> cols_;
  ad::Var candidates_;
  int n_view_cols_ = 0;
  std::vector<int> mem_label_;
  std::vector<char> mem_trusted_;
};

inline ad::Var loss_ag(ContrastScope& scope, int* skipped) { return scope.twin_loss(false, skipped); }
inline ad::Var loss_sw(ContrastScope& scope, int* skipped) { return scope.twin_loss(true, skipped); }
inline ad::Var loss_st(ContrastScope& scope, int* skipped) { return scope.st_loss(skipped); }

/// One classification-path sample of the discriminative loss.
struct DlSample {
  ad::Var probs;        // classifier softmax on the un-augmented input
  bool trusted = false;
  int y_star = 0;
  int y_plus = 0;
  double lambda = 1.0;
  Tensor aux;           // detached soft target, used when distrusted
};

/// Conditional discriminative loss: trusted samples score against the
/// lambda-weighted one-hot pair, distrusted ones against their detached
/// auxiliary soft label. Probabilities are clamped at 1e-12 before the log.
inline ad::Var loss_dl(ad::Tape& t, const std::vector<DlSample>& samples) {
  if (samples.empty()) return t.constant(Tensor::scalar(0.0));
  ad::Var acc;
  bool first = true;
  for (const DlSample& s : samples) {
    Tensor target({2});
    if (s.trusted) {
      target[s.y_star] += s.lambda;
      target[s.y_plus] += 1.0 - s.lambda;
    } else {
      target = s.aux;
    }
    ad::Var ce = ad::scalar_mul(ad::dot(ad::log(ad::clamp_min(s.probs, 1e-12)), t.constant(target)),
                                -1.0);
    acc = first ? ce : ad::add(acc, ce);
    first = false;
  }
  return ad::scalar_mul(acc, 1.0 / static_cast<double>(samples.size()));
}

/// L = L^CL + L^DL with L^CL = L^Ag + L^Sw + L^St.
inline LossParts total_loss(ad::Tape& t, const std::vector<ViewLatent>& views,
                            const MemoryBank& memory, const std::vector<DlSample>& dl_samples,
                            const ContrastiveConfig& cfg) {
  ContrastScope scope(t, views, memory, cfg);
  LossParts parts;
  parts.ag = loss_ag(scope, &parts.skipped_ag);
  parts.sw = loss_sw(scope, &parts.skipped_sw);
  parts.st = loss_st(scope, &parts.skipped_st);
  parts.dl = loss_dl(t, dl_samples);
  parts.total = ad::add(ad::add(parts.ag, parts.sw), ad::add(parts.st, parts.dl));
  return parts;
}

}  // namespace macs
