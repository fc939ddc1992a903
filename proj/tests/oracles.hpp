#pragma once

// Independent definitional implementations of the evaluation quantities.
// These are deliberately written as direct loops over the definitions and
// must stay independent of src/metrics.cpp.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace stedr::oracle {

inline double pehe(const std::vector<double>& th, const std::vector<double>& tt) {
  double s = 0.0;
  for (std::size_t i = 0; i < th.size(); ++i) s += (th[i] - tt[i]) * (th[i] - tt[i]);
  return s / static_cast<double>(th.size());
}

inline double eps_ate(const std::vector<double>& th, const std::vector<double>& tt) {
  double a = 0.0, b = 0.0;
  for (double v : th) a += v;
  for (double v : tt) b += v;
  return std::abs(a / static_cast<double>(th.size()) - b / static_cast<double>(tt.size()));
}

inline std::pair<double, double> variance_stats(const std::vector<double>& tau,
                                                const std::vector<int>& label, int k) {
  std::vector<double> means;
  double within_sum = 0.0;
  int nonempty = 0;
  for (int g = 0; g < k; ++g) {
    std::vector<double> vals;
    for (std::size_t i = 0; i < tau.size(); ++i)
      if (label[i] == g) vals.push_back(tau[i]);
    if (vals.empty()) continue;
    double m = 0.0;
    for (double v : vals) m += v;
    m /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - m) * (v - m);
    var /= static_cast<double>(vals.size());
    means.push_back(m);
    within_sum += var;
    ++nonempty;
  }
  double mm = 0.0;
  for (double m : means) mm += m;
  mm /= static_cast<double>(means.size());
  double across = 0.0;
  for (double m : means) across += (m - mm) * (m - mm);
  across /= static_cast<double>(means.size());
  return {within_sum / nonempty, across};
}

// weighted mean / population variance by direct loops
inline std::vector<double> smd(const Eigen::MatrixXd& xt, const Eigen::MatrixXd& xc,
                               const std::vector<double>* wt = nullptr,
                               const std::vector<double>* wc = nullptr) {
  auto moments = [](const Eigen::MatrixXd& x, Eigen::Index col, const std::vector<double>* w) {
    double sw = 0.0, sx = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double wi = w ? (*w)[static_cast<std::size_t>(i)] : 1.0;
      sw += wi;
      sx += wi * x(i, col);
    }
    double m = sx / sw, sv = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double wi = w ? (*w)[static_cast<std::size_t>(i)] : 1.0;
      sv += wi * (x(i, col) - m) * (x(i, col) - m);
    }
    return std::make_pair(m, sv / sw);
  };
  std::vector<double> out;
  for (Eigen::Index c = 0; c < xt.cols(); ++c) {
    auto [m1, v1] = moments(xt, c, wt);
    auto [m0, v0] = moments(xc, c, wc);
    double pooled = (v1 + v0) / 2.0;
    if (pooled <= 0.0)
      out.push_back(m1 == m0 ? 0.0 : std::numeric_limits<double>::infinity());
    else
      out.push_back((m1 - m0) / std::sqrt(pooled));
  }
  return out;
}

// all-pairs weighted rank AUC
inline double weighted_auc(const std::vector<int>& y, const std::vector<double>& s,
                           const std::vector<double>* w = nullptr) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j]) continue;
      double wij = (w ? (*w)[i] : 1.0) * (w ? (*w)[j] : 1.0);
      den += wij;
      if (s[i] > s[j])
        num += wij;
      else if (s[i] == s[j])
        num += 0.5 * wij;
    }
  }
  return num / den;
}

// textbook BH: sort, scale by m/rank, enforce monotonicity from the top
inline std::vector<double> bh(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> idx(m);
  for (std::size_t i = 0; i < m; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> sorted_adj(m);
  for (std::size_t r = 0; r < m; ++r)
    sorted_adj[r] = p[idx[r]] * static_cast<double>(m) / static_cast<double>(r + 1);
  for (std::size_t r = m; r-- > 1;) sorted_adj[r - 1] = std::min(sorted_adj[r - 1], sorted_adj[r]);
  std::vector<double> out(m);
  for (std::size_t r = 0; r < m; ++r) out[idx[r]] = std::min(1.0, sorted_adj[r]);
  return out;
}

}  // namespace stedr::oracle
