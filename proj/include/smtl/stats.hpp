#pragma once

#include <utility>
#include <vector>

namespace smtl::stats {

double normal_cdf(double x);

struct WilcoxonResult {
  double u = 0.0;   // Mann-Whitney U of the first sample
  double p = 1.0;   // two-sided
  bool exact = false;
};

// Two-sided rank-sum test. Small samples use the exact permutation
// distribution (tie-aware); large samples use the normal approximation
// with tie correction and continuity correction. Returns p = 1 when every
// pooled value is identical.
WilcoxonResult wilcoxon_ranksum(const std::vector<double>& a,
                                const std::vector<double>& b);

// Exposed for the cross-branch consistency checks.
double wilcoxon_exact_p(const std::vector<double>& a,
                        const std::vector<double>& b);
double wilcoxon_normal_p(const std::vector<double>& a,
                         const std::vector<double>& b);

struct RocResult {
  std::vector<std::pair<double, double>> points;  // (FPR, TPR), monotone
  double auc = 0.0;
  int n_pos = 0, n_neg = 0;
};

// Mann-Whitney AUC with half credit for ties; the curve comes from a
// threshold sweep over the distinct scores. Requires both classes.
RocResult roc_auc(const std::vector<double>& scores,
                  const std::vector<int>& labels);

struct DelongResult {
  double auc_a = 0.0, auc_b = 0.0;
  double var_diff = 0.0;
  double z = 0.0;
  double p = 1.0;
  bool degenerate = false;  // zero variance with unequal AUCs
};

// Paired comparison of two classifiers scored on the same cases, via
// placement-value covariance components.
DelongResult delong_test(const std::vector<double>& scores_a,
                         const std::vector<double>& scores_b,
                         const std::vector<int>& labels);

struct MaeResult {
  double mean_pp = 0.0;  // percentage points
  double sd_pp = 0.0;    // population standard deviation
};

MaeResult mae(const std::vector<double>& predictions,
              const std::vector<double>& targets);

}  // namespace smtl::stats
