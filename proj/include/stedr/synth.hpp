#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "stedr/common.hpp"

namespace stedr::synth {

enum class GeneratorId { a, b, response_surface_b };

std::string to_string(GeneratorId id);

struct SyntheticSample {
  std::vector<double> covariates;
  int treatment = 0;
  double observed_outcome = 0.0;
  double mu0 = 0.0;  // noiseless control-outcome mean
  double mu1 = 0.0;  // noiseless treated-outcome mean
  double true_effect = 0.0;  // always mu1 - mu0
};

struct SyntheticDataset {
  std::vector<SyntheticSample> samples;
  std::vector<std::string> covariate_names;
  GeneratorId generator_id = GeneratorId::a;
  std::uint64_t seed = 0;
  // drawn surface constants (beta, plus the treated-surface offset when used)
  std::vector<double> coefficients;
};

struct SequentialSample {
  Eigen::MatrixXd covariate_history;  // T x d
  int timesteps = 0;
  int treatment = 0;
  double observed_outcome = 0.0;
  double mu0 = 0.0, mu1 = 0.0, true_effect = 0.0;
};

struct SynthBConfig {
  int covariate_dim = 25;
  int t_min = 10, t_max = 20;
  double initial_std = 10.0;
  // lag-coefficient means are linearly spaced over [coeff_mean_lo, coeff_mean_hi]
  double coeff_mean_lo = -0.5, coeff_mean_hi = 0.5;
  double coeff_std = 0.05;
  double noise_std = 1.0;
  double treat_prob = 0.5;
  double outcome_noise_std = 1.0;
};

struct SequentialDataset {
  std::vector<SequentialSample> samples;
  std::uint64_t seed = 0;
  SynthBConfig config;
  std::vector<double> coefficients;  // surface beta then offset
};

// Covariate layout of generator A: the treatment-delay covariate first (the
// one the logistic effect curve reads), then the nine lab measurements.
struct SyntheticACovariate {
  const char* name;
  double mean;    // uniform low for the delay covariate
  double stddev;  // uniform high for the delay covariate
  bool uniform;
};
const std::vector<SyntheticACovariate>& synthetic_a_covariates();

// Potential-outcome means of generator A for one covariate row (raw units).
// beta has one entry per non-delay covariate, applied to theoretical z-scores.
std::pair<double, double> synthetic_a_means(const std::vector<double>& covariates,
                                            const std::vector<double>& beta);

SyntheticDataset generate_synthetic_a(int n, std::uint64_t seed);

SequentialDataset generate_synthetic_b(int n, std::uint64_t seed, const SynthBConfig& cfg = {});

// Attaches nonlinear simulated potential outcomes to a real covariate table:
// exponential control surface, linear treated surface with the offset chosen
// so the mean effect over the rows is exactly `target_mean_effect`.
SyntheticDataset simulate_response_surface_b(const Eigen::MatrixXd& covariates,
                                             const std::vector<int>& treatment,
                                             std::uint64_t seed,
                                             double target_mean_effect = 4.0,
                                             double outcome_noise_std = 1.0);

// Offline stand-in with the published cohort shape: 747 rows, 25 covariates
// (6 continuous + 19 binary), exactly 139 treated with mild confounding.
struct CovariateTable {
  Eigen::MatrixXd x;
  std::vector<int> treatment;
  std::vector<std::string> names;
};
CovariateTable generate_ihdp_like(std::uint64_t seed);

}  // namespace stedr::synth
