#include "smtl/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "smtl/errors.hpp"

namespace smtl::stats {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

namespace {

// Midranks of the pooled sample, and the rank sum of the first n1 values.
struct Ranked {
  double rank_sum_1 = 0.0;
  double tie_term = 0.0;  // sum of t^3 - t over tie groups
};

Ranked midranks(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t n1 = a.size(), n = n1 + b.size();
  std::vector<std::pair<double, int>> pooled;  // (value, is_first_sample)
  pooled.reserve(n);
  for (double v : a) pooled.emplace_back(v, 1);
  for (double v : b) pooled.emplace_back(v, 0);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });

  Ranked r;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && pooled[j].first == pooled[i].first) ++j;
    const double t = static_cast<double>(j - i);
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k)
      if (pooled[k].second) r.rank_sum_1 += mid;
    if (t > 1.0) r.tie_term += t * t * t - t;
    i = j;
  }
  return r;
}

double u_of_first(const std::vector<double>& a, const std::vector<double>& b) {
  const double n1 = static_cast<double>(a.size());
  const Ranked r = midranks(a, b);
  return r.rank_sum_1 - n1 * (n1 + 1.0) / 2.0;
}

// Exact permutation distribution of the scaled statistic 2U over all ways
// of labelling the pooled multiset, computed by dynamic programming over
// the tie groups. Exact up to the 2^53 integer limit of double counts.
struct ExactDist {
  std::vector<double> counts;  // index = 2U value
  double total = 0.0;
};

ExactDist exact_distribution(const std::vector<double>& a,
                             const std::vector<double>& b) {
  const int n1 = static_cast<int>(a.size());
  const int n2 = static_cast<int>(b.size());
  std::map<double, int> groups;  // value -> pooled count
  for (double v : a) ++groups[v];
  for (double v : b) ++groups[v];

  const int umax = 2 * n1 * n2;
  std::vector<std::vector<double>> f(
      static_cast<size_t>(n1) + 1,
      std::vector<double>(static_cast<size_t>(umax) + 1, 0.0));
  f[0][0] = 1.0;

  // Binomial table up to the largest group.
  int cmax = 0;
  for (const auto& [v, c] : groups) cmax = std::max(cmax, c);
  std::vector<std::vector<double>> binom(
      static_cast<size_t>(cmax) + 1,
      std::vector<double>(static_cast<size_t>(cmax) + 1, 0.0));
  for (int i = 0; i <= cmax; ++i) {
    binom[i][0] = 1.0;
    for (int j = 1; j <= i; ++j)
      binom[i][j] = binom[i - 1][j - 1] + (j <= i - 1 ? binom[i - 1][j] : 0.0);
  }

  int processed = 0;  // pooled items in earlier groups
  for (const auto& [value, c] : groups) {
    std::vector<std::vector<double>> next(
        static_cast<size_t>(n1) + 1,
        std::vector<double>(static_cast<size_t>(umax) + 1, 0.0));
    for (int s1 = 0; s1 <= n1; ++s1)
      for (int u = 0; u <= umax; ++u) {
        const double ways = f[s1][u];
        if (ways == 0.0) continue;
        const int below2 = processed - s1;  // sample-2 items below this group
        for (int j = 0; j <= std::min(c, n1 - s1); ++j) {
          // Each sample-1 item here beats all lower sample-2 items and
          // ties the remaining c - j sample-2 items of this group.
          const int du = j * 2 * below2 + j * (c - j);
          if (u + du > umax) continue;
          next[s1 + j][u + du] += ways * binom[c][j];
        }
      }
    f.swap(next);
    processed += c;
  }

  ExactDist d;
  d.counts = std::move(f[static_cast<size_t>(n1)]);
  for (double v : d.counts) d.total += v;
  return d;
}

void check_nonempty(const std::vector<double>& a,
                    const std::vector<double>& b) {
  if (a.empty() || b.empty())
    throw DataError("wilcoxon_ranksum: both samples must be nonempty");
}

}  // namespace

double wilcoxon_exact_p(const std::vector<double>& a,
                        const std::vector<double>& b) {
  check_nonempty(a, b);
  const ExactDist d = exact_distribution(a, b);
  const long long obs = std::llround(2.0 * u_of_first(a, b));
  double le = 0.0, ge = 0.0;
  for (size_t u = 0; u < d.counts.size(); ++u) {
    if (static_cast<long long>(u) <= obs) le += d.counts[u];
    if (static_cast<long long>(u) >= obs) ge += d.counts[u];
  }
  const double p = 2.0 * std::min(le, ge) / d.total;
  return std::min(1.0, p);
}

double wilcoxon_normal_p(const std::vector<double>& a,
                         const std::vector<double>& b) {
  check_nonempty(a, b);
  const double n1 = static_cast<double>(a.size());
  const double n2 = static_cast<double>(b.size());
  const double n = n1 + n2;
  const Ranked r = midranks(a, b);
  const double u = r.rank_sum_1 - n1 * (n1 + 1.0) / 2.0;
  const double mu = n1 * n2 / 2.0;
  const double var =
      n1 * n2 / 12.0 * ((n + 1.0) - r.tie_term / (n * (n - 1.0)));
  if (var <= 0.0) return 1.0;  // every pooled value tied
  const double dev = std::max(0.0, std::fabs(u - mu) - 0.5);  // continuity
  const double z = dev / std::sqrt(var);
  return std::clamp(2.0 * (1.0 - normal_cdf(z)), 0.0, 1.0);
}

WilcoxonResult wilcoxon_ranksum(const std::vector<double>& a,
                                const std::vector<double>& b) {
  check_nonempty(a, b);
  WilcoxonResult res;
  res.u = u_of_first(a, b);
  const size_t n1 = a.size(), n2 = b.size();
  // The exact branch is limited to sizes where the DP table stays small;
  // beyond that the normal approximation is already accurate.
  const bool small = std::min(n1, n2) <= 8 && n1 * n2 <= 10000 &&
                     n1 + n2 <= 400;
  if (small) {
    res.exact = true;
    res.p = wilcoxon_exact_p(a, b);
  } else {
    res.p = wilcoxon_normal_p(a, b);
  }
  return res;
}

RocResult roc_auc(const std::vector<double>& scores,
                  const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("roc_auc: scores and labels differ in length");
  RocResult res;
  for (int y : labels) {
    if (y != 0 && y != 1)
      throw DataError("roc_auc: labels must be 0 or 1");
    y ? ++res.n_pos : ++res.n_neg;
  }
  if (res.n_pos == 0 || res.n_neg == 0)
    throw DataError("roc_auc: both classes must be present");

  std::vector<double> pos, neg;
  for (size_t i = 0; i < scores.size(); ++i)
    (labels[i] ? pos : neg).push_back(scores[i]);
  // AUC as the midrank form of the pairwise statistic.
  const double u = u_of_first(pos, neg);
  res.auc = u / (static_cast<double>(res.n_pos) * res.n_neg);

  // Threshold sweep from high to low over the distinct scores.
  std::vector<std::pair<double, int>> order;
  order.reserve(scores.size());
  for (size_t i = 0; i < scores.size(); ++i)
    order.emplace_back(scores[i], labels[i]);
  std::sort(order.begin(), order.end(), [](const auto& x, const auto& y) {
    return x.first > y.first;
  });
  res.points.emplace_back(0.0, 0.0);
  int tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && order[j].first == order[i].first) {
      order[j].second ? ++tp : ++fp;
      ++j;
    }
    res.points.emplace_back(static_cast<double>(fp) / res.n_neg,
                            static_cast<double>(tp) / res.n_pos);
    i = j;
  }
  return res;
}

DelongResult delong_test(const std::vector<double>& scores_a,
                         const std::vector<double>& scores_b,
                         const std::vector<int>& labels) {
  if (scores_a.size() != scores_b.size() || scores_a.size() != labels.size())
    throw std::invalid_argument("delong_test: inputs differ in length");

  std::vector<size_t> pos, neg;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw DataError("delong_test: labels must be 0 or 1");
    (labels[i] ? pos : neg).push_back(i);
  }
  if (pos.empty() || neg.empty())
    throw DataError("delong_test: both classes must be present");
  const double m = static_cast<double>(pos.size());
  const double n = static_cast<double>(neg.size());

  // Placement values per classifier.
  auto placements = [&](const std::vector<double>& s, std::vector<double>& v10,
                        std::vector<double>& v01) {
    v10.assign(pos.size(), 0.0);
    v01.assign(neg.size(), 0.0);
    for (size_t i = 0; i < pos.size(); ++i)
      for (size_t j = 0; j < neg.size(); ++j) {
        const double si = s[pos[i]], sj = s[neg[j]];
        const double score = si > sj ? 1.0 : (si == sj ? 0.5 : 0.0);
        v10[i] += score;
        v01[j] += score;
      }
    for (double& v : v10) v /= n;
    for (double& v : v01) v /= m;
  };

  std::vector<double> a10, a01, b10, b01;
  placements(scores_a, a10, a01);
  placements(scores_b, b10, b01);

  DelongResult res;
  for (double v : a10) res.auc_a += v;
  res.auc_a /= m;
  for (double v : b10) res.auc_b += v;
  res.auc_b /= m;

  auto cov = [](const std::vector<double>& x, const std::vector<double>& y,
                double mx, double my) {
    if (x.size() < 2) return 0.0;
    double acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i) acc += (x[i] - mx) * (y[i] - my);
    return acc / static_cast<double>(x.size() - 1);
  };

  const double s10_aa = cov(a10, a10, res.auc_a, res.auc_a);
  const double s10_bb = cov(b10, b10, res.auc_b, res.auc_b);
  const double s10_ab = cov(a10, b10, res.auc_a, res.auc_b);
  const double s01_aa = cov(a01, a01, res.auc_a, res.auc_a);
  const double s01_bb = cov(b01, b01, res.auc_b, res.auc_b);
  const double s01_ab = cov(a01, b01, res.auc_a, res.auc_b);

  res.var_diff = (s10_aa + s10_bb - 2.0 * s10_ab) / m +
                 (s01_aa + s01_bb - 2.0 * s01_ab) / n;

  const double diff = res.auc_a - res.auc_b;
  if (res.var_diff <= 0.0) {
    if (diff == 0.0) {
      res.p = 1.0;
    } else {
      res.p = 0.0;
      res.degenerate = true;
      res.z = diff > 0 ? INFINITY : -INFINITY;
    }
    return res;
  }
  res.z = diff / std::sqrt(res.var_diff);
  res.p = std::clamp(2.0 * (1.0 - normal_cdf(std::fabs(res.z))), 0.0, 1.0);
  return res;
}

MaeResult mae(const std::vector<double>& predictions,
              const std::vector<double>& targets) {
  if (predictions.size() != targets.size())
    throw std::invalid_argument("mae: predictions and targets differ in length");
  if (predictions.empty())
    throw std::invalid_argument("mae: need at least one pair");
  const double n = static_cast<double>(predictions.size());
  double mean = 0.0;
  for (size_t i = 0; i < predictions.size(); ++i)
    mean += std::fabs(predictions[i] - targets[i]);
  mean /= n;
  double var = 0.0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const double d = std::fabs(predictions[i] - targets[i]) - mean;
    var += d * d;
  }
  var /= n;
  return MaeResult{mean * 100.0, std::sqrt(var) * 100.0};
}

}  // namespace smtl::stats
