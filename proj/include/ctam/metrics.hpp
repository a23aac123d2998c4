#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "ctam/errors.hpp"

namespace ctam {

struct MetricsReport {
  double auc = 0.0;
  double macro_f1 = 0.0;
  long long tp = 0, fp = 0, tn = 0, fn = 0;
  int n_patients = 0;

  // Flat key=value block, one entry per line.
  std::string to_text() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "auc=%.6f\nmacro_f1=%.6f\ntp=%lld\nfp=%lld\ntn=%lld\nfn=%lld\nn_patients=%d\n",
                  auc, macro_f1, tp, fp, tn, fn, n_patients);
    return buf;
  }

  static std::string csv_header() { return "auc,macro_f1,tp,fp,tn,fn,n_patients"; }

  std::string to_csv_row() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%lld,%lld,%lld,%lld,%d", auc, macro_f1, tp, fp,
                  tn, fn, n_patients);
    return buf;
  }
};

// Mann-Whitney formulation: fraction of (positive, negative) pairs ranked
// correctly by score, ties counting one half. Requires both classes.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  detail::require(scores.size() == labels.size(),
                  "roc_auc: scores and labels differ in length");
  detail::require(!scores.empty(), "roc_auc: empty input");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    detail::require(labels[i] == 0 || labels[i] == 1,
                    "roc_auc: label must be 0 or 1, got " + std::to_string(labels[i]));
    (labels[i] == 1 ? pos : neg).push_back(scores[i]);
  }
  detail::require(!pos.empty() && !neg.empty(),
                  "roc_auc: both classes must be present");
  double u = 0.0;
  for (double p : pos)
    for (double n : neg) {
      if (p > n)
        u += 1.0;
      else if (p == n)
        u += 0.5;
    }
  return u / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

// Unweighted mean of the per-class F1 scores over {positive, negative}.
// A class F1 with a zero denominator is defined as 0.
inline double macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels) {
  detail::require(predictions.size() == labels.size(),
                  "macro_f1: predictions and labels differ in length");
  detail::require(!predictions.empty(), "macro_f1: empty input");
  long long tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    detail::require(predictions[i] == 0 || predictions[i] == 1,
                    "macro_f1: prediction must be 0 or 1");
    detail::require(labels[i] == 0 || labels[i] == 1, "macro_f1: label must be 0 or 1");
    if (predictions[i] == 1) {
      labels[i] == 1 ? ++tp : ++fp;
    } else {
      labels[i] == 1 ? ++fn : ++tn;
    }
  }
  const double denom_pos = static_cast<double>(2 * tp + fp + fn);
  const double denom_neg = static_cast<double>(2 * tn + fn + fp);
  const double f1_pos = denom_pos > 0.0 ? 2.0 * static_cast<double>(tp) / denom_pos : 0.0;
  const double f1_neg = denom_neg > 0.0 ? 2.0 * static_cast<double>(tn) / denom_neg : 0.0;
  return 0.5 * (f1_pos + f1_neg);
}

inline MetricsReport compute_report(const std::vector<double>& scores,
                                    const std::vector<int>& predictions,
                                    const std::vector<int>& labels) {
  MetricsReport report;
  report.auc = roc_auc(scores, labels);
  report.macro_f1 = macro_f1(predictions, labels);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i] == 1) {
      labels[i] == 1 ? ++report.tp : ++report.fp;
    } else {
      labels[i] == 1 ? ++report.fn : ++report.tn;
    }
  }
  report.n_patients = static_cast<int>(labels.size());
  return report;
}

}  // namespace ctam
