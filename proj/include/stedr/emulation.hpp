#pragma once

#include <string>
#include <vector>

#include "stedr/claims.hpp"
#include "stedr/metrics.hpp"
#include "stedr/model.hpp"

namespace stedr::emulation {

struct TrialResult {
  claims::TrialSpec spec;
  int comparator_drug = -1;
  int n_cases = 0, n_controls = 0;
  double overall_ate = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> subgroup_ate;  // K entries; NaN when empty on the test split
  std::vector<int> subgroup_n;
  metrics::BalanceReport balance;
  std::string checkpoint_digest;
  bool failed = false;
  std::string note;

  std::string to_json() const;
  std::string digest() const;
};

// Trains the model on one emulated trial (baseline covariates only, 2-year
// outcome label) and reports test-split effects plus post-weighting balance.
TrialResult emulate_trial(const claims::ClaimsDb& db, const claims::DrugCatalog& catalog,
                          const claims::TrialSpec& spec,
                          const claims::EligibilityCriteria& criteria,
                          const TrainConfig& base_config, StedrModel* out_model = nullptr);

enum class Verdict {
  population_candidate,
  subgroup_candidate,
  not_significant,
  unbalanced,
  ineligible,
};
std::string to_string(Verdict v);

struct HypothesisStat {
  bool valid = false;
  double mean = 0.0, ci_low = 0.0, ci_high = 0.0;
  double p = std::numeric_limits<double>::quiet_NaN();
  double p_adj = std::numeric_limits<double>::quiet_NaN();
  int n_trials = 0;
};

struct DrugReport {
  int drug = -1;
  Verdict verdict = Verdict::not_significant;
  HypothesisStat overall;
  std::vector<HypothesisStat> per_subgroup;
  int n_trials_run = 0;
  int n_balanced_trials = 0;
  // stratified by control source, informational
  HypothesisStat overall_random;
  HypothesisStat overall_same_class;
  std::string note;
};

struct ScreenConfig {
  std::vector<int> drugs;
  int n_trials = 100;  // half random controls, half same-class controls
  std::uint64_t seed = 0;
  int threads = 0;  // 0 resolves STEDR_THREADS, then hardware parallelism
  claims::EligibilityCriteria criteria;
  TrainConfig train;
  double significance = 0.05;
};

struct ScreenReport {
  std::vector<DrugReport> drugs;
  std::vector<TrialResult> trials;  // ordered by (drug, trial_index)
  int hypothesis_family_size = 0;   // BH family: drugs x (overall + K) minus invalid

  std::string to_json() const;
  std::string to_csv() const;  // one row per drug x (overall|subgroup)
  std::string digest() const;
};

int resolve_threads(int requested);

// High-throughput screen: n_trials emulations per drug with seeds derived
// from (seed, drug, trial index), Benjamini-Hochberg over the pooled
// hypothesis family, verdicts per drug. Order-independent under parallelism.
ScreenReport run_screen(const claims::ClaimsDb& db, const claims::DrugCatalog& catalog,
                        const ScreenConfig& cfg);

// Row-normalizes per-subgroup mean attention scores across the present
// subgroups (absent columns excluded and left at zero).
Eigen::MatrixXd relative_scores(const Eigen::MatrixXd& mean_scores,
                                const std::vector<bool>& present);

struct AttentionSummary {
  Eigen::MatrixXd relative;   // covariates x K; rows sum to 1 over present columns
  std::vector<bool> present;  // subgroups with at least one member
  std::vector<int> counts;
};

// Covariate attention averaged within each model-assigned subgroup, then
// normalized across subgroups per covariate.
AttentionSummary attention_summary(const StedrModel& model,
                                   const std::vector<TrainSample>& cohort, int k);

}  // namespace stedr::emulation
