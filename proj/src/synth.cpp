#include "stedr/synth.hpp"

#include <cmath>
#include <stdexcept>

namespace stedr::synth {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// surface coefficients: {0, 0.1, 0.2, 0.3, 0.4} with probs (0.6,.1,.1,.1,.1)
double draw_beta(Rng& rng) {
  double u = rng.uniform();
  if (u < 0.6) return 0.0;
  if (u < 0.7) return 0.1;
  if (u < 0.8) return 0.2;
  if (u < 0.9) return 0.3;
  return 0.4;
}

constexpr double kDelayMidpoint = 9.0;  // logistic pivot on the delay covariate

}  // namespace

std::string to_string(GeneratorId id) {
  switch (id) {
    case GeneratorId::a: return "a";
    case GeneratorId::b: return "b";
    case GeneratorId::response_surface_b: return "response_surface_b";
  }
  return "?";
}

const std::vector<SyntheticACovariate>& synthetic_a_covariates() {
  static const std::vector<SyntheticACovariate> defs = {
      {"time_to_treatment", 4.0, 14.0, true},
      {"age", 66.0, 4.0, false},
      {"wbc_count", 66.0, 4.0, false},
      {"lymphocyte_count", 0.8, 0.1, false},
      {"platelet_count", 183.0, 20.4, false},
      {"serum_creatinine", 68.0, 6.6, false},
      {"ast", 31.0, 5.1, false},
      {"alt", 26.0, 5.1, false},
      {"ldh", 339.0, 51.0, false},
      {"creatine_kinase", 76.0, 21.0, false},
  };
  return defs;
}

std::pair<double, double> synthetic_a_means(const std::vector<double>& covariates,
                                            const std::vector<double>& beta) {
  const auto& defs = synthetic_a_covariates();
  if (covariates.size() != defs.size())
    throw std::invalid_argument("synthetic_a_means: expected 10 covariates");
  if (beta.size() != defs.size() - 1)
    throw std::invalid_argument("synthetic_a_means: expected 9 coefficients");
  double linear = 0.0;
  for (std::size_t j = 1; j < defs.size(); ++j) {
    double z = (covariates[j] - defs[j].mean) / defs[j].stddev;
    linear += z * beta[j - 1];
  }
  double sig = logistic(covariates[0] - kDelayMidpoint);
  double mu0 = linear + sig + 5.0;
  double mu1 = linear + 5.0 * sig;
  return {mu0, mu1};
}

SyntheticDataset generate_synthetic_a(int n, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("generate_synthetic_a: n must be >= 2");
  Rng rng(mix_seed(seed, 0xA));
  const auto& defs = synthetic_a_covariates();

  SyntheticDataset ds;
  ds.generator_id = GeneratorId::a;
  ds.seed = seed;
  for (const auto& d : defs) ds.covariate_names.push_back(d.name);
  for (std::size_t j = 1; j < defs.size(); ++j) ds.coefficients.push_back(draw_beta(rng));

  std::vector<double> noise(static_cast<std::size_t>(n));
  ds.samples.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& s = ds.samples[static_cast<std::size_t>(i)];
    s.covariates.resize(defs.size());
    for (std::size_t j = 0; j < defs.size(); ++j) {
      s.covariates[j] = defs[j].uniform ? rng.uniform(defs[j].mean, defs[j].stddev)
                                        : rng.normal(defs[j].mean, defs[j].stddev);
    }
    noise[static_cast<std::size_t>(i)] = rng.normal();
    auto [mu0, mu1] = synthetic_a_means(s.covariates, ds.coefficients);
    s.mu0 = mu0;
    s.mu1 = mu1;
    s.true_effect = mu1 - mu0;
  }

  // exactly floor(n/2) treated
  std::vector<int> arm(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n / 2; ++i) arm[static_cast<std::size_t>(i)] = 1;
  rng.shuffle(arm);
  for (int i = 0; i < n; ++i) {
    auto& s = ds.samples[static_cast<std::size_t>(i)];
    s.treatment = arm[static_cast<std::size_t>(i)];
    double mu = s.treatment ? s.mu1 : s.mu0;
    s.observed_outcome = mu + 0.1 * noise[static_cast<std::size_t>(i)];
  }
  return ds;
}

namespace {

// exponential control surface / linear treated surface on standardized
// covariates; offset fixed afterwards so the mean effect hits the target
struct Surface {
  std::vector<double> beta;
  double offset = 0.0;
};

void apply_surface(const Eigen::MatrixXd& z, const Surface& sf, std::vector<double>& mu0,
                   std::vector<double>& mu1) {
  const Eigen::Index n = z.rows();
  Eigen::VectorXd beta(z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) beta(j) = sf.beta[static_cast<std::size_t>(j)];
  Eigen::VectorXd lin = z * beta;
  Eigen::VectorXd expo = ((z.array() + 0.5).matrix() * beta).array().exp();
  mu0.resize(static_cast<std::size_t>(n));
  mu1.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    mu0[static_cast<std::size_t>(i)] = expo(i);
    mu1[static_cast<std::size_t>(i)] = lin(i) + sf.offset;
  }
}

Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd z = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double m = x.col(j).mean();
    double var = (x.col(j).array() - m).square().sum() / static_cast<double>(x.rows());
    double sd = std::sqrt(var);
    if (sd > 0.0)
      z.col(j) = (x.col(j).array() - m) / sd;
    else
      z.col(j).setZero();
  }
  return z;
}

}  // namespace

SyntheticDataset simulate_response_surface_b(const Eigen::MatrixXd& covariates,
                                             const std::vector<int>& treatment,
                                             std::uint64_t seed, double target_mean_effect,
                                             double outcome_noise_std) {
  const Eigen::Index n = covariates.rows();
  if (n == 0) throw std::invalid_argument("response surface: empty covariate table");
  if (!covariates.allFinite())
    throw std::invalid_argument("response surface: non-finite covariates");
  if (static_cast<Eigen::Index>(treatment.size()) != n)
    throw std::invalid_argument("response surface: treatment length mismatch");

  Rng rng(mix_seed(seed, 0xB5));
  Surface sf;
  for (Eigen::Index j = 0; j < covariates.cols(); ++j) sf.beta.push_back(draw_beta(rng));

  Eigen::MatrixXd z = standardize_columns(covariates);
  std::vector<double> mu0, mu1;
  sf.offset = 0.0;
  apply_surface(z, sf, mu0, mu1);
  double mean_gap = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    mean_gap += mu1[static_cast<std::size_t>(i)] - mu0[static_cast<std::size_t>(i)];
  mean_gap /= static_cast<double>(n);
  sf.offset = target_mean_effect - mean_gap;
  apply_surface(z, sf, mu0, mu1);

  SyntheticDataset ds;
  ds.generator_id = GeneratorId::response_surface_b;
  ds.seed = seed;
  ds.coefficients = sf.beta;
  ds.coefficients.push_back(sf.offset);
  for (Eigen::Index j = 0; j < covariates.cols(); ++j)
    ds.covariate_names.push_back("x" + std::to_string(j));
  ds.samples.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& s = ds.samples[static_cast<std::size_t>(i)];
    s.covariates.assign(covariates.row(i).begin(), covariates.row(i).end());
    s.treatment = treatment[static_cast<std::size_t>(i)] ? 1 : 0;
    s.mu0 = mu0[static_cast<std::size_t>(i)];
    s.mu1 = mu1[static_cast<std::size_t>(i)];
    s.true_effect = s.mu1 - s.mu0;
    double mu = s.treatment ? s.mu1 : s.mu0;
    s.observed_outcome = mu + outcome_noise_std * rng.normal();
  }
  return ds;
}

SequentialDataset generate_synthetic_b(int n, std::uint64_t seed, const SynthBConfig& cfg) {
  if (n < 2) throw std::invalid_argument("generate_synthetic_b: n must be >= 2");
  if (cfg.t_min < 6 || cfg.t_max < cfg.t_min)
    throw std::invalid_argument("generate_synthetic_b: bad timestep range");

  Rng rng(mix_seed(seed, 0xB));
  SequentialDataset ds;
  ds.seed = seed;
  ds.config = cfg;

  const int lags = 5;
  std::vector<double> lag_means(lags);
  for (int l = 0; l < lags; ++l)
    lag_means[static_cast<std::size_t>(l)] =
        cfg.coeff_mean_lo +
        (cfg.coeff_mean_hi - cfg.coeff_mean_lo) * static_cast<double>(l) / (lags - 1);

  ds.samples.resize(static_cast<std::size_t>(n));
  Eigen::MatrixXd finals(n, cfg.covariate_dim);
  for (int i = 0; i < n; ++i) {
    auto& s = ds.samples[static_cast<std::size_t>(i)];
    s.timesteps = static_cast<int>(rng.uniform_int(cfg.t_min, cfg.t_max));
    std::vector<double> coeff(lags);
    for (int l = 0; l < lags; ++l)
      coeff[static_cast<std::size_t>(l)] = rng.normal(lag_means[static_cast<std::size_t>(l)], cfg.coeff_std);

    s.covariate_history.resize(s.timesteps, cfg.covariate_dim);
    for (Eigen::Index j = 0; j < cfg.covariate_dim; ++j)
      s.covariate_history(0, j) = rng.normal(0.0, cfg.initial_std);
    for (int t = 1; t < s.timesteps; ++t) {
      for (Eigen::Index j = 0; j < cfg.covariate_dim; ++j) {
        double v = 0.0;
        for (int l = 1; l <= lags && t - l >= 0; ++l)
          v += coeff[static_cast<std::size_t>(l - 1)] * s.covariate_history(t - l, j);
        s.covariate_history(t, j) = v + rng.normal(0.0, cfg.noise_std);
      }
    }
    s.treatment = rng.bernoulli(cfg.treat_prob) ? 1 : 0;
    finals.row(i) = s.covariate_history.row(s.timesteps - 1);
  }

  // potential outcomes from the final covariate vector via the same surface
  // convention as the semi-synthetic benchmark
  Rng srng(mix_seed(seed, 0xB0));
  Surface sf;
  for (Eigen::Index j = 0; j < cfg.covariate_dim; ++j) sf.beta.push_back(draw_beta(srng));
  Eigen::MatrixXd z = standardize_columns(finals);
  std::vector<double> mu0, mu1;
  apply_surface(z, sf, mu0, mu1);
  double mean_gap = 0.0;
  for (int i = 0; i < n; ++i)
    mean_gap += mu1[static_cast<std::size_t>(i)] - mu0[static_cast<std::size_t>(i)];
  mean_gap /= static_cast<double>(n);
  sf.offset = 4.0 - mean_gap;
  apply_surface(z, sf, mu0, mu1);
  ds.coefficients = sf.beta;
  ds.coefficients.push_back(sf.offset);

  for (int i = 0; i < n; ++i) {
    auto& s = ds.samples[static_cast<std::size_t>(i)];
    s.mu0 = mu0[static_cast<std::size_t>(i)];
    s.mu1 = mu1[static_cast<std::size_t>(i)];
    s.true_effect = s.mu1 - s.mu0;
    double mu = s.treatment ? s.mu1 : s.mu0;
    s.observed_outcome = mu + cfg.outcome_noise_std * srng.normal();
  }
  return ds;
}

CovariateTable generate_ihdp_like(std::uint64_t seed) {
  const int n = 747, d = 25, n_treated = 139, n_continuous = 6;
  Rng rng(mix_seed(seed, 0x1DB));
  CovariateTable tbl;
  tbl.x.resize(n, d);
  std::vector<double> bin_p(d);
  for (int j = n_continuous; j < d; ++j) bin_p[static_cast<std::size_t>(j)] = rng.uniform(0.1, 0.6);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n_continuous; ++j) tbl.x(i, j) = rng.normal();
    for (int j = n_continuous; j < d; ++j)
      tbl.x(i, j) = rng.bernoulli(bin_p[static_cast<std::size_t>(j)]) ? 1.0 : 0.0;
  }
  // mild confounding: treat the rows with the highest noisy propensity score
  std::vector<std::pair<double, int>> scored(n);
  for (int i = 0; i < n; ++i) {
    double logit = -1.0 + 0.8 * tbl.x(i, 0) + 0.5 * tbl.x(i, 1) + 0.6 * tbl.x(i, 6);
    scored[static_cast<std::size_t>(i)] = {logit + rng.normal() * 1.5, i};
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  tbl.treatment.assign(n, 0);
  for (int r = 0; r < n_treated; ++r)
    tbl.treatment[static_cast<std::size_t>(scored[static_cast<std::size_t>(r)].second)] = 1;
  for (int j = 0; j < d; ++j) tbl.names.push_back("x" + std::to_string(j));
  return tbl;
}

}  // namespace stedr::synth
