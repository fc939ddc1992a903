#include "stedr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace stedr::metrics {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

namespace {

void check_pair(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("effect vectors: length mismatch");
  if (a.empty()) throw std::invalid_argument("effect vectors: empty");
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// population (1/n) variance
double pop_variance(const std::vector<double>& v) {
  double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

}  // namespace

double pehe(const std::vector<double>& tau_hat, const std::vector<double>& tau_true) {
  check_pair(tau_hat, tau_true);
  double s = 0.0;
  for (std::size_t i = 0; i < tau_hat.size(); ++i) {
    double d = tau_hat[i] - tau_true[i];
    s += d * d;
  }
  return s / static_cast<double>(tau_hat.size());
}

double eps_ate(const std::vector<double>& tau_hat, const std::vector<double>& tau_true) {
  check_pair(tau_hat, tau_true);
  return std::abs(mean_of(tau_hat) - mean_of(tau_true));
}

VarianceStats variance_stats(const std::vector<double>& tau_hat,
                             const std::vector<int>& subgroup, int k) {
  if (tau_hat.size() != subgroup.size())
    throw std::invalid_argument("variance_stats: length mismatch");
  if (k <= 0) throw std::invalid_argument("variance_stats: k must be positive");
  std::vector<std::vector<double>> groups(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < tau_hat.size(); ++i) {
    if (subgroup[i] < 0 || subgroup[i] >= k)
      throw std::invalid_argument("variance_stats: label out of range");
    groups[static_cast<std::size_t>(subgroup[i])].push_back(tau_hat[i]);
  }
  std::vector<double> means;
  double within = 0.0;
  for (const auto& g : groups) {
    if (g.empty()) continue;
    means.push_back(mean_of(g));
    within += pop_variance(g);
  }
  if (means.empty()) throw std::invalid_argument("variance_stats: all subgroups empty");
  VarianceStats out;
  out.v_within = within / static_cast<double>(means.size());
  out.v_across = pop_variance(means);
  return out;
}

namespace {

struct Moments {
  double mean;
  double var;  // population convention, weighted when weights given
};

Moments column_moments(const Eigen::MatrixXd& x, Eigen::Index col, const std::vector<double>* w) {
  const Eigen::Index n = x.rows();
  double sw = 0.0, sx = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double wi = w ? (*w)[static_cast<std::size_t>(i)] : 1.0;
    sw += wi;
    sx += wi * x(i, col);
  }
  double m = sx / sw;
  double sv = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double wi = w ? (*w)[static_cast<std::size_t>(i)] : 1.0;
    sv += wi * (x(i, col) - m) * (x(i, col) - m);
  }
  return {m, sv / sw};
}

}  // namespace

BalanceReport smd_balance(const Eigen::MatrixXd& case_x, const Eigen::MatrixXd& control_x,
                          const std::vector<double>* case_w,
                          const std::vector<double>* control_w) {
  if (case_x.cols() != control_x.cols())
    throw std::invalid_argument("smd_balance: covariate count mismatch");
  if (case_x.rows() < 2 || control_x.rows() < 2)
    throw std::invalid_argument("smd_balance: need at least 2 rows per arm");
  if (case_w && static_cast<Eigen::Index>(case_w->size()) != case_x.rows())
    throw std::invalid_argument("smd_balance: case weight length mismatch");
  if (control_w && static_cast<Eigen::Index>(control_w->size()) != control_x.rows())
    throw std::invalid_argument("smd_balance: control weight length mismatch");

  BalanceReport rep;
  rep.smd_per_covariate.resize(static_cast<std::size_t>(case_x.cols()));
  int unbalanced = 0;
  for (Eigen::Index c = 0; c < case_x.cols(); ++c) {
    Moments mt = column_moments(case_x, c, case_w);
    Moments mc = column_moments(control_x, c, control_w);
    double pooled = (mt.var + mc.var) / 2.0;
    double smd;
    if (pooled <= 0.0) {
      smd = (mt.mean == mc.mean) ? 0.0 : std::numeric_limits<double>::infinity();
    } else {
      smd = (mt.mean - mc.mean) / std::sqrt(pooled);
    }
    rep.smd_per_covariate[static_cast<std::size_t>(c)] = smd;
    if (!(std::abs(smd) <= kSmdBalancedThreshold)) ++unbalanced;
  }
  rep.unbalanced_fraction = static_cast<double>(unbalanced) / static_cast<double>(case_x.cols());
  rep.balanced = rep.unbalanced_fraction <= kUnbalancedFractionThreshold;
  return rep;
}

double weighted_auc(const std::vector<int>& labels, const std::vector<double>& scores,
                    const std::vector<double>* weights) {
  const std::size_t n = labels.size();
  if (scores.size() != n || (weights && weights->size() != n))
    throw std::invalid_argument("weighted_auc: length mismatch");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double tot_pos = 0.0, tot_neg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double w = weights ? (*weights)[i] : 1.0;
    (labels[i] ? tot_pos : tot_neg) += w;
  }
  if (tot_pos == 0.0 || tot_neg == 0.0)
    throw std::invalid_argument("weighted_auc: both classes required");

  double num = 0.0, neg_below = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    double tied_pos = 0.0, tied_neg = 0.0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      double w = weights ? (*weights)[order[j]] : 1.0;
      (labels[order[j]] ? tied_pos : tied_neg) += w;
      ++j;
    }
    num += tied_pos * (neg_below + 0.5 * tied_neg);
    neg_below += tied_neg;
    i = j;
  }
  return num / (tot_pos * tot_neg);
}

std::vector<double> bh_adjust(const std::vector<double>& p_values) {
  const std::size_t m = p_values.size();
  for (double p : p_values)
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("bh_adjust: p outside [0,1]");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  std::vector<double> adjusted(m);
  double running_min = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    double scaled = p_values[order[r]] * static_cast<double>(m) / static_cast<double>(r + 1);
    running_min = std::min(running_min, scaled);
    adjusted[order[r]] = std::min(1.0, running_min);
  }
  return adjusted;
}

AggregateStat aggregate_column(const std::vector<double>& values) {
  if (values.size() < 2) throw std::invalid_argument("trial_aggregate: need at least 2 trials");
  AggregateStat s;
  s.n = static_cast<int>(values.size());
  s.mean = mean_of(values);
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  double se = sd / std::sqrt(static_cast<double>(values.size()));
  s.ci_low = s.mean - kCi95Z * se;
  s.ci_high = s.mean + kCi95Z * se;
  if (se == 0.0) {
    s.p_one_sided = s.mean < 0.0 ? 0.0 : (s.mean > 0.0 ? 1.0 : 0.5);
  } else {
    s.p_one_sided = normal_cdf(s.mean / se);
  }
  s.p_two_sided = 2.0 * std::min(s.p_one_sided, 1.0 - s.p_one_sided);
  return s;
}

std::vector<AggregateStat> trial_aggregate(const Eigen::MatrixXd& per_trial) {
  if (per_trial.rows() < 2) throw std::invalid_argument("trial_aggregate: need at least 2 trials");
  std::vector<AggregateStat> out;
  out.reserve(static_cast<std::size_t>(per_trial.cols()));
  for (Eigen::Index c = 0; c < per_trial.cols(); ++c) {
    std::vector<double> vals;
    for (Eigen::Index r = 0; r < per_trial.rows(); ++r)
      if (std::isfinite(per_trial(r, c))) vals.push_back(per_trial(r, c));
    out.push_back(aggregate_column(vals));
  }
  return out;
}

}  // namespace stedr::metrics
