#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "stedr/emulation.hpp"

using namespace stedr;
namespace cl = stedr::claims;
namespace em = stedr::emulation;

namespace {

cl::ClaimsConfig small_config() {
  cl::ClaimsConfig cfg;
  cfg.n_patients = 3000;
  cfg.n_codes = 60;
  cfg.n_drugs = 8;
  cfg.n_classes = 4;
  cfg.k_true = 3;
  cfg.seed = 12;
  return cfg;
}

TrainConfig fast_train() {
  TrainConfig tc;
  tc.k = 3;
  tc.hidden = 8;
  tc.embed_dim = 4;
  tc.latent_dim = 4;
  tc.t_max = 10;
  tc.batch_size = 64;
  tc.max_epochs = 3;
  tc.patience = 3;
  tc.pred_layers = 1;
  tc.transformer_layers = 1;
  return tc;
}

}  // namespace

TEST_CASE("oracle recovers the planted per-subgroup effects") {
  auto cfg = small_config();
  cfg.n_patients = 50000;
  cfg.subgroup_effects = {-0.1, 0.0, 0.05};
  auto [db, catalog] = cl::generate_claims(cfg);

  // probability-level oracle is exact; draw-level averages carry noise
  std::vector<double> prob_sum(3, 0.0), draw_sum(3, 0.0);
  std::vector<int> count(3, 0);
  for (const auto& p : db.patients) {
    if (p.primary_drug != 0) continue;
    int k = p.oracle.latent_subgroup;
    prob_sum[static_cast<std::size_t>(k)] += p.oracle.p_treated - p.oracle.p_control;
    draw_sum[static_cast<std::size_t>(k)] +=
        static_cast<double>(p.oracle.y_treated - p.oracle.y_control);
    count[static_cast<std::size_t>(k)] += 1;
  }
  for (int k = 0; k < 3; ++k) {
    REQUIRE(count[static_cast<std::size_t>(k)] > 500);
    double prob_ate = prob_sum[static_cast<std::size_t>(k)] / count[static_cast<std::size_t>(k)];
    double draw_ate = draw_sum[static_cast<std::size_t>(k)] / count[static_cast<std::size_t>(k)];
    CHECK(std::abs(prob_ate - cfg.subgroup_effects[static_cast<std::size_t>(k)]) < 1e-12);
    CHECK(std::abs(draw_ate - cfg.subgroup_effects[static_cast<std::size_t>(k)]) < 0.01);
  }
}

TEST_CASE("null corpus has a null oracle ATE and deterministic digest") {
  auto cfg = small_config();
  auto [db, catalog] = cl::generate_claims(cfg);
  double ate = 0.0;
  for (const auto& p : db.patients)
    ate += static_cast<double>(p.oracle.y_treated - p.oracle.y_control);
  ate /= static_cast<double>(db.patients.size());
  CHECK(std::abs(ate) < 0.01);

  auto [db2, catalog2] = cl::generate_claims(cfg);
  CHECK(cl::db_digest(db) == cl::db_digest(db2));
  cfg.seed += 1;
  auto [db3, catalog3] = cl::generate_claims(cfg);
  CHECK(cl::db_digest(db) != cl::db_digest(db3));
}

TEST_CASE("planted effect outside the probability range is rejected") {
  auto cfg = small_config();
  cfg.n_patients = 500;
  cfg.subgroup_effects = {-0.9, 0.0, 0.0};  // pushes some probability below 0
  CHECK_THROWS_AS(cl::generate_claims(cfg), std::invalid_argument);
}

TEST_CASE("eligibility criteria exclude the spec'd patients") {
  cl::EligibilityCriteria criteria;
  cl::ClaimsPatient p;
  p.age_at_first_code = 60;
  p.index_day = 600;
  p.primary_drug = 2;
  p.visits.push_back({0, {cl::kConditionCode, 5}});
  p.visits.push_back({200, {7}});
  CHECK(cl::eligible_at_index(p, criteria));

  // aged 49 at condition onset: excluded
  auto young = p;
  young.age_at_first_code = 49;
  CHECK_FALSE(cl::eligible_at_index(young, criteria));
  // exactly the threshold is still excluded ("over the age of 50")
  auto fifty = p;
  fifty.age_at_first_code = 50;
  CHECK_FALSE(cl::eligible_at_index(fifty, criteria));

  // outcome history before the index date: excluded
  auto prior = p;
  prior.visits[1].codes.push_back(cl::kOutcomeCode);
  CHECK_FALSE(cl::eligible_at_index(prior, criteria));

  // less than a year of records: excluded
  auto brief = p;
  brief.index_day = 300;
  CHECK_FALSE(cl::eligible_at_index(brief, criteria));

  // condition onset after the index date: excluded
  auto late = p;
  late.visits[0].codes = {5};
  late.visits[1].codes = {cl::kConditionCode, 7};
  late.index_day = 100;
  CHECK_FALSE(cl::eligible_at_index(late, criteria));
}

TEST_CASE("trial cohorts satisfy the inclusion rules, cap, and disjointness") {
  auto cfg = small_config();
  auto [db, catalog] = cl::generate_claims(cfg);
  cl::EligibilityCriteria criteria;
  criteria.min_case_size = 50;
  cl::TrialSpec spec;
  spec.drug = 0;
  spec.trial_index = 0;
  spec.control_mode = cl::ControlMode::random;
  spec.seed = 77;
  auto cohort = cl::build_trial(db, catalog, spec, criteria);

  CHECK(cohort.controls.size() <= 3 * cohort.cases.size());
  CHECK(cohort.comparator_drug != spec.drug);
  for (std::size_t i : cohort.cases) {
    CHECK(db.patients[i].primary_drug == spec.drug);
    CHECK(cl::eligible_at_index(db.patients[i], criteria));
  }
  for (std::size_t i : cohort.controls) {
    CHECK(db.patients[i].primary_drug == cohort.comparator_drug);
    for (const auto& rx : db.patients[i].prescriptions) CHECK(rx.drug != spec.drug);
    CHECK(cl::eligible_at_index(db.patients[i], criteria));
  }
  // disjoint by construction (different primary drugs)
  for (std::size_t i : cohort.cases)
    for (std::size_t j : cohort.controls) CHECK(i != j);

  // same-class mode draws the comparator from the trial drug's class
  spec.control_mode = cl::ControlMode::same_class;
  auto same = cl::build_trial(db, catalog, spec, criteria);
  CHECK(catalog.drug_class[static_cast<std::size_t>(same.comparator_drug)] ==
        catalog.drug_class[static_cast<std::size_t>(spec.drug)]);

  criteria.min_case_size = 100000;
  CHECK_THROWS_AS(cl::build_trial(db, catalog, spec, criteria), cl::IneligibleDrugError);
}

TEST_CASE("trial covariates come from the baseline period only") {
  auto cfg = small_config();
  cfg.n_patients = 200;
  auto [db, catalog] = cl::generate_claims(cfg);
  // choose any patient with post-index visits
  for (auto& p : db.patients) {
    bool has_post = false;
    for (const auto& v : p.visits) has_post = has_post || v.day > p.index_day;
    bool has_pre = false;
    for (const auto& v : p.visits) has_pre = has_pre || v.day < p.index_day;
    if (!has_post || !has_pre) continue;

    auto before = cl::trial_sample(p, cfg.n_codes, 1, cfg.follow_up_days);
    auto mutated = p;
    // post-index mutation: add a visit and strip codes from existing post ones
    mutated.visits.push_back({p.index_day + 10, {cl::kFirstProfileCode}});
    auto after = cl::trial_sample(mutated, cfg.n_codes, 1, cfg.follow_up_days);
    CHECK(before.seq.codes == after.seq.codes);
    CHECK(before.seq.times == after.seq.times);

    auto stripped = p;
    stripped.visits.erase(
        std::remove_if(stripped.visits.begin(), stripped.visits.end(),
                       [&](const cl::Visit& v) { return v.day > p.index_day; }),
        stripped.visits.end());
    auto baseline_only = cl::trial_sample(stripped, cfg.n_codes, 1, cfg.follow_up_days);
    CHECK(before.seq.codes == baseline_only.seq.codes);
    break;
  }
}

TEST_CASE("outcome label matches the follow-up window") {
  auto cfg = small_config();
  cfg.n_patients = 2000;
  auto [db, catalog] = cl::generate_claims(cfg);
  int labeled = 0;
  for (const auto& p : db.patients) {
    if (!cl::eligible_at_index(p, cl::EligibilityCriteria{})) continue;
    auto s = cl::trial_sample(p, cfg.n_codes, 1, cfg.follow_up_days);
    CHECK(s.y == static_cast<double>(p.oracle.y_treated));
    labeled += s.y > 0.5 ? 1 : 0;
  }
  CHECK(labeled > 0);
}

TEST_CASE("emulated trial is deterministic and carries balance diagnostics") {
  auto cfg = small_config();
  cfg.n_patients = 1500;
  auto [db, catalog] = cl::generate_claims(cfg);
  cl::EligibilityCriteria criteria;
  criteria.min_case_size = 30;
  cl::TrialSpec spec;
  spec.drug = 1;
  spec.trial_index = 0;
  spec.control_mode = cl::ControlMode::random;
  spec.seed = 5;

  auto tc = fast_train();
  auto r1 = em::emulate_trial(db, catalog, spec, criteria, tc);
  auto r2 = em::emulate_trial(db, catalog, spec, criteria, tc);
  CHECK(r1.digest() == r2.digest());
  CHECK_FALSE(r1.failed);
  CHECK(r1.n_cases >= 30);
  CHECK(r1.n_controls > 0);
  CHECK(std::isfinite(r1.overall_ate));
  CHECK(r1.balance.smd_per_covariate.size() == static_cast<std::size_t>(cfg.n_codes));
  CHECK(std::isfinite(r1.balance.weighted_auc));
  CHECK(r1.checkpoint_digest.size() == 16);
}

TEST_CASE("screen runs are order and parallelism independent") {
  auto cfg = small_config();
  cfg.n_patients = 1200;
  auto [db, catalog] = cl::generate_claims(cfg);

  em::ScreenConfig sc;
  sc.drugs = {0, 1};
  sc.n_trials = 4;
  sc.seed = 9;
  sc.criteria.min_case_size = 20;
  sc.train = fast_train();
  sc.threads = 1;
  auto serial_report = em::run_screen(db, catalog, sc);
  sc.threads = 2;
  auto parallel_report = em::run_screen(db, catalog, sc);
  CHECK(serial_report.digest() == parallel_report.digest());
  CHECK(serial_report.trials.size() == 8);
  // canonical ordering by (drug, trial)
  for (std::size_t i = 1; i < serial_report.trials.size(); ++i) {
    const auto& a = serial_report.trials[i - 1].spec;
    const auto& b = serial_report.trials[i].spec;
    CHECK((a.drug < b.drug || (a.drug == b.drug && a.trial_index < b.trial_index)));
  }
  // half random, half same-class
  int randoms = 0;
  for (const auto& tr : serial_report.trials)
    randoms += tr.spec.control_mode == cl::ControlMode::random ? 1 : 0;
  CHECK(randoms == 4);

  // hypothesis family: drugs x (overall + K) minus invalid entries
  int valid = 0;
  for (const auto& dr : serial_report.drugs) {
    valid += dr.overall.valid ? 1 : 0;
    for (const auto& s : dr.per_subgroup) valid += s.valid ? 1 : 0;
  }
  CHECK(serial_report.hypothesis_family_size == valid);
  CHECK(valid <= 2 * (1 + sc.train.k));

  // an unknown drug id surfaces as ineligible rather than an exception
  sc.drugs = {0, 99999};
  sc.threads = 1;
  auto with_unknown = em::run_screen(db, catalog, sc);
  bool found = false;
  for (const auto& dr : with_unknown.drugs)
    if (dr.drug == 99999) {
      found = true;
      CHECK(dr.verdict == em::Verdict::ineligible);
    }
  CHECK(found);
}

TEST_CASE("ineligible drugs get a verdict, not an exception") {
  auto cfg = small_config();
  cfg.n_patients = 400;
  auto [db, catalog] = cl::generate_claims(cfg);
  em::ScreenConfig sc;
  sc.drugs = {2};
  sc.n_trials = 2;
  sc.criteria.min_case_size = 100000;
  sc.train = fast_train();
  sc.threads = 1;
  auto report = em::run_screen(db, catalog, sc);
  REQUIRE(report.drugs.size() == 1);
  CHECK(report.drugs[0].verdict == em::Verdict::ineligible);
  CHECK(report.trials.empty());
}

TEST_CASE("relative attention scores normalize per covariate") {
  Eigen::MatrixXd mean_scores(2, 3);
  mean_scores << 0.2, 0.1, 0.1, 0.3, 0.3, 0.3;
  std::vector<bool> present = {true, true, true};
  auto rel = em::relative_scores(mean_scores, present);
  CHECK(rel(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rel(0, 1) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(rel(0, 2) == doctest::Approx(0.25).epsilon(1e-12));
  for (Eigen::Index r = 0; r < 2; ++r)
    CHECK(rel.row(r).sum() == doctest::Approx(1.0).epsilon(1e-9));
  // identical averages: every cell 1/K
  CHECK(rel(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // absent subgroup column excluded from normalization
  present = {true, false, true};
  rel = em::relative_scores(mean_scores, present);
  CHECK(rel(0, 1) == 0.0);
  CHECK(rel(0, 0) == doctest::Approx(0.2 / 0.3).epsilon(1e-9));

  // end to end over a trained model: rows sum to one
  auto cfg = small_config();
  cfg.n_patients = 800;
  auto [db, catalog] = cl::generate_claims(cfg);
  cl::EligibilityCriteria criteria;
  criteria.min_case_size = 20;
  cl::TrialSpec spec;
  spec.drug = 0;
  spec.seed = 3;
  StedrModel model = [&] {
    StedrModel* tmp = nullptr;
    (void)tmp;
    StedrModel out(fast_train(), cfg.n_codes);
    auto r = em::emulate_trial(db, catalog, spec, criteria, fast_train(), &out);
    return out;
  }();
  auto cohort = cl::build_trial(db, catalog, spec, criteria);
  std::vector<TrainSample> samples;
  for (std::size_t i : cohort.cases)
    samples.push_back(cl::trial_sample(db.patients[i], cfg.n_codes, 1, cfg.follow_up_days));
  auto summary = em::attention_summary(model, samples, fast_train().k);
  for (Eigen::Index c = 0; c < summary.relative.rows(); ++c) {
    double row = summary.relative.row(c).sum();
    if (row > 0.0) CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("claims db round trips through files with the oracle sidecar") {
  auto cfg = small_config();
  cfg.n_patients = 120;
  auto [db, catalog] = cl::generate_claims(cfg);
  std::string dbp = "claims_rt.jsonl", side = "claims_rt.oracle.jsonl", cat = "claims_rt.cat.json";
  cl::write_claims(db, dbp, side);
  cl::write_catalog(catalog, cat);

  auto back = cl::read_claims(dbp, side);
  CHECK(back.patients.size() == db.patients.size());
  CHECK(cl::db_digest(back) == cl::db_digest(db));
  auto cat_back = cl::read_catalog(cat);
  CHECK(cat_back.drug_class == catalog.drug_class);

  // the model-visible file never mentions the oracle
  std::ifstream in(dbp);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("oracle") == std::string::npos);
  CHECK(text.find("p_treated") == std::string::npos);
  std::remove(dbp.c_str());
  std::remove(side.c_str());
  std::remove(cat.c_str());
}
