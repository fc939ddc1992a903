#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stedr/common.hpp"
#include "stedr/dataset.hpp"

namespace stedr::claims {

// Reserved code ids in the vocabulary: the cohort condition marker and the
// outcome marker. Remaining codes carry the subgroup-specific profiles.
inline constexpr int kConditionCode = 0;
inline constexpr int kOutcomeCode = 1;
inline constexpr int kFirstProfileCode = 2;

struct Visit {
  int day = 0;
  std::vector<int> codes;  // sorted, unique
};

struct Prescription {
  int day = 0;
  int drug = 0;
};

// Hidden generative record. Only tests and the oracle sidecar see this; it is
// never written into the model-visible claims file.
struct PatientOracle {
  int latent_subgroup = 0;
  double p_treated = 0.0;   // outcome probability under the primary drug
  double p_control = 0.0;   // outcome probability with no drug
  int y_treated = 0;        // shared-noise potential draws
  int y_control = 0;
};

struct ClaimsPatient {
  std::int64_t id = 0;
  int age_at_first_code = 0;
  int sex = 0;
  std::vector<Visit> visits;  // strictly increasing days
  std::vector<Prescription> prescriptions;
  int primary_drug = -1;  // drug of the first prescription
  int index_day = -1;     // day of the first prescription
  PatientOracle oracle;
};

struct DrugCatalog {
  std::vector<int> drug_class;  // drug id -> class id
  int n_classes = 0;
  std::vector<int> same_class(int drug) const;
};

struct ClaimsConfig {
  int n_patients = 20000;
  int n_codes = 286;
  int n_drugs = 40;
  int n_classes = 8;
  int k_true = 3;
  // risk-difference effect of drug 0 per latent subgroup (zeros when empty)
  std::vector<double> subgroup_effects;
  // additional planted drugs: (drug id, per-subgroup risk differences)
  std::vector<std::pair<int, std::vector<double>>> extra_drug_effects;
  std::uint64_t seed = 0;

  double base_logit = -1.1;
  double subgroup_logit_span = 0.8;  // spread of the per-subgroup intercepts
  double age_logit_scale = 0.5;
  double profile_code_share = 0.55;  // chance a drawn code comes from the own block
  int follow_up_days = 730;
  double prior_outcome_rate = 0.04;  // patients with outcome history (excluded later)

  std::string to_json() const;
  static ClaimsConfig from_json(const std::string& text);
};

struct ClaimsDb {
  std::vector<ClaimsPatient> patients;
  ClaimsConfig config;
};

// Planted per-subgroup risk differences for one drug (zero when not planted).
std::vector<double> planted_effects(const ClaimsConfig& cfg, int drug);

std::pair<ClaimsDb, DrugCatalog> generate_claims(const ClaimsConfig& cfg);

std::string db_digest(const ClaimsDb& db);

void write_claims(const ClaimsDb& db, const std::string& db_path,
                  const std::string& oracle_sidecar_path);
void write_catalog(const DrugCatalog& catalog, const std::string& path);
ClaimsDb read_claims(const std::string& db_path,
                     const std::string& oracle_sidecar_path = "");
DrugCatalog read_catalog(const std::string& path);

// --- cohort construction ---

class IneligibleDrugError : public std::runtime_error {
 public:
  explicit IneligibleDrugError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EligibilityCriteria {
  int min_age = 50;            // strictly over at condition onset
  int min_history_days = 365;  // records required before the index date
  int min_case_size = 100;     // desk-scale floor (full scale uses 500)
  int control_cap_factor = 3;
};

enum class ControlMode { random, same_class };

struct TrialSpec {
  int drug = 0;
  int trial_index = 0;
  ControlMode control_mode = ControlMode::random;
  std::uint64_t seed = 0;
};

struct TrialCohort {
  std::vector<std::size_t> cases;     // indices into db.patients
  std::vector<std::size_t> controls;
  int comparator_drug = -1;
};

// True when the patient satisfies every inclusion criterion at their own
// index date (condition before index, no outcome history, enough records,
// age over the threshold at onset).
bool eligible_at_index(const ClaimsPatient& p, const EligibilityCriteria& criteria);

// Case cohort for a drug (patients whose primary drug is the trial drug).
std::vector<std::size_t> eligible_cases(const ClaimsDb& db, int drug,
                                        const EligibilityCriteria& criteria);

// Materializes one emulated trial: cases on the trial drug, controls drawn
// from one comparator drug (random or same-class), never exposed to the
// trial drug, capped at control_cap_factor times the case count.
TrialCohort build_trial(const ClaimsDb& db, const DrugCatalog& catalog, const TrialSpec& spec,
                        const EligibilityCriteria& criteria);

// Baseline-period covariates (visits strictly before the index date) and the
// follow-up outcome label for one cohort member.
TrainSample trial_sample(const ClaimsPatient& p, int n_codes, int treatment,
                         int follow_up_days);

// Per-patient baseline code counts, the balance diagnostics features.
Eigen::RowVectorXd baseline_code_counts(const ClaimsPatient& p, int n_codes);

}  // namespace stedr::claims
