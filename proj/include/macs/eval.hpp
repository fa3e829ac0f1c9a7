#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "macs/common.hpp"

namespace macs {

/// Binary classification metrics with class 1 as the positive class.
/// F1 is defined as 0 when precision + recall is 0.
struct MetricReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long tp = 0, tn = 0, fp = 0, fn = 0;
  bool degenerate_f1 = false;  // no positive predictions and no positive truths
};

inline MetricReport fragment_metrics(const std::vector<int>& predictions,
                                     const std::vector<int>& truths) {
  if (predictions.empty() || predictions.size() != truths.size())
    throw std::invalid_argument("fragment_metrics: need equal-length non-empty inputs");
  MetricReport r;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool p = predictions[i] == 1;
    const bool t = truths[i] == 1;
    r.tp += p && t;
    r.tn += !p && !t;
    r.fp += p && !t;
    r.fn += !p && t;
  }
  const double n = static_cast<double>(predictions.size());
  r.accuracy = (r.tp + r.tn) / n;
  r.precision = (r.tp + r.fp) > 0 ? static_cast<double>(r.tp) / (r.tp + r.fp) : 0.0;
  r.recall = (r.tp + r.fn) > 0 ? static_cast<double>(r.tp) / (r.tp + r.fn) : 0.0;
  r.f1 = (r.precision + r.recall) > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                      : 0.0;
  r.degenerate_f1 = (r.tp + r.fp) == 0 && (r.tp + r.fn) == 0;
  return r;
}

struct SubjectScore {
  int subject_id = 0;
  int true_label = 0;
  double score = 0.0;  // mean fragment probability of class 1
  int prediction = 0;
};

struct SubjectEnsemble {
  std::vector<SubjectScore> subjects;  // ascending subject id
  double threshold = 0.5;
  bool single_class_fallback = false;  // threshold fell back to 0.5
};

/// Youden's J over the observed subject scores: subject score = mean class-1
/// fragment probability; the decision threshold maximizes
/// sensitivity + specificity - 1 over candidate thresholds (the observed
/// scores), with prediction = score >= threshold. Because predictions are
/// step functions of the threshold, searching the observed scores is
/// equivalent to searching all reals. Ties in J resolve to the smallest
/// threshold. The threshold is fit on the evaluation scores themselves,
/// which is optimistic; reports flag it as such.
inline SubjectEnsemble subject_ensemble(const std::vector<double>& frag_prob1,
                                        const std::vector<int>& frag_subject,
                                        const std::map<int, int>& subject_true_label) {
  if (frag_prob1.empty() || frag_prob1.size() != frag_subject.size())
    throw std::invalid_argument("subject_ensemble: need aligned non-empty fragment lists");

  std::map<int, std::pair<double, long>> sums;
  for (std::size_t i = 0; i < frag_prob1.size(); ++i) {
    auto& [sum, count] = sums[frag_subject[i]];
    sum += frag_prob1[i];
    ++count;
  }
  SubjectEnsemble out;
  long positives = 0, negatives = 0;
  for (const auto& [sid, agg] : sums) {
    auto it = subject_true_label.find(sid);
    if (it == subject_true_label.end())
      throw std::invalid_argument("subject_ensemble: no true label for subject " +
                                  std::to_string(sid));
    SubjectScore s;
    s.subject_id = sid;
    s.true_label = it->second;
    s.score = agg.first / static_cast<double>(agg.second);
    (s.true_label == 1 ? positives : negatives)++;
    out.subjects.push_back(s);
  }

  if (positives == 0 || negatives == 0) {
    out.threshold = 0.5;
    out.single_class_fallback = true;
    log_warn("subject_ensemble: single-class evaluation set, J threshold fell back to 0.5");
  } else {
    std::vector<double> candidates;
    for (const SubjectScore& s : out.subjects) candidates.push_back(s.score);
    std::sort(candidates.begin(), candidates.end());
    double best_j = -2.0;
    double best_threshold = candidates.front();
    for (double th : candidates) {
      long tp = 0, tn = 0;
      for (const SubjectScore& s : out.subjects) {
        const bool pred = s.score >= th;
        tp += pred && s.true_label == 1;
        tn += !pred && s.true_label == 0;
      }
      const double j = static_cast<double>(tp) / positives + static_cast<double>(tn) / negatives -
                       1.0;
      if (j > best_j) {
        best_j = j;
        best_threshold = th;
      }
    }
    out.threshold = best_threshold;
  }

  for (SubjectScore& s : out.subjects) s.prediction = s.score >= out.threshold ? 1 : 0;
  return out;
}

inline MetricReport subject_metrics(const SubjectEnsemble& ens) {
  std::vector<int> pred, truth;
  for (const SubjectScore& s : ens.subjects) {
    pred.push_back(s.prediction);
    truth.push_back(s.true_label);
  }
  return fragment_metrics(pred, truth);
}

}  // namespace macs
