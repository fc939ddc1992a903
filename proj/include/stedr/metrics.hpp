#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

namespace stedr::metrics {

// Shared statistical conventions. Subgroup variance statistics use the
// population (1/n) variance; trial CIs use the sample (n-1) standard
// deviation. Both are fixed here, not configurable.
inline constexpr double kSmdBalancedThreshold = 0.1;
inline constexpr double kUnbalancedFractionThreshold = 0.02;
inline constexpr double kCi95Z = 1.96;

double normal_cdf(double x);

/// Mean squared error between estimated and true individual effects.
double pehe(const std::vector<double>& tau_hat, const std::vector<double>& tau_true);

/// Absolute error of the population-average effect.
double eps_ate(const std::vector<double>& tau_hat, const std::vector<double>& tau_true);

struct VarianceStats {
  double v_within = 0.0;
  double v_across = 0.0;
};

// Empty subgroups are excluded from both statistics; throws if every
// subgroup is empty or a label is out of [0, k).
VarianceStats variance_stats(const std::vector<double>& tau_hat,
                             const std::vector<int>& subgroup, int k);

struct BalanceReport {
  std::vector<double> smd_per_covariate;
  double unbalanced_fraction = 0.0;
  double weighted_auc = std::numeric_limits<double>::quiet_NaN();
  bool balanced = false;
};

// SMD per covariate between the two arms; IPTW-weighted moments when weights
// are given (sized n_case then n_control respectively). Zero pooled variance
// yields SMD 0 when the means agree and +inf otherwise.
BalanceReport smd_balance(const Eigen::MatrixXd& case_x, const Eigen::MatrixXd& control_x,
                          const std::vector<double>* case_w = nullptr,
                          const std::vector<double>* control_w = nullptr);

// Probability that a random positive outranks a random negative, pair weights
// multiplying, ties counting one half. Throws unless both classes present.
double weighted_auc(const std::vector<int>& labels, const std::vector<double>& scores,
                    const std::vector<double>* weights = nullptr);

/// Benjamini-Hochberg adjustment, returned in input order.
std::vector<double> bh_adjust(const std::vector<double>& p_values);

struct AggregateStat {
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_one_sided = 1.0;  // tail P(effect >= 0); small means enhanced
  double p_two_sided = 1.0;
  int n = 0;
};

// Column-wise aggregation across emulated trials: mean, normal 95% CI on the
// mean, and the normal-approximation tail p-value. NaN cells are skipped;
// a column needs at least two finite values.
std::vector<AggregateStat> trial_aggregate(const Eigen::MatrixXd& per_trial);
AggregateStat aggregate_column(const std::vector<double>& values);

}  // namespace stedr::metrics
