#include "stedr/emulation.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

namespace stedr::emulation {

using nlohmann::json;

namespace {

json stat_to_json(const HypothesisStat& s) {
  json j;
  j["valid"] = s.valid;
  j["mean"] = s.mean;
  j["ci_low"] = s.ci_low;
  j["ci_high"] = s.ci_high;
  j["p"] = s.p;
  j["p_adj"] = s.p_adj;
  j["n_trials"] = s.n_trials;
  return j;
}

std::string params_digest(const ParamStore& params) {
  Fnv1a64 h;
  for (const auto& name : params.names()) {
    h.update(name);
    const Eigen::MatrixXd& m = params.at(name);
    h.update_u64(static_cast<std::uint64_t>(m.rows()));
    h.update_u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) h.update_double(m(r, c));
  }
  return h.hex();
}

}  // namespace

std::string TrialResult::to_json() const {
  json j;
  j["drug"] = spec.drug;
  j["trial_index"] = spec.trial_index;
  j["control_mode"] = spec.control_mode == claims::ControlMode::random ? "random" : "same_class";
  j["seed"] = spec.seed;
  j["comparator_drug"] = comparator_drug;
  j["n_cases"] = n_cases;
  j["n_controls"] = n_controls;
  j["overall_ate"] = overall_ate;
  j["subgroup_ate"] = subgroup_ate;
  j["subgroup_n"] = subgroup_n;
  j["balanced"] = balance.balanced;
  j["unbalanced_fraction"] = balance.unbalanced_fraction;
  j["weighted_auc"] = balance.weighted_auc;
  j["checkpoint_digest"] = checkpoint_digest;
  j["failed"] = failed;
  j["note"] = note;
  return j.dump();
}

std::string TrialResult::digest() const { return digest_bytes(to_json()); }

TrialResult emulate_trial(const claims::ClaimsDb& db, const claims::DrugCatalog& catalog,
                          const claims::TrialSpec& spec,
                          const claims::EligibilityCriteria& criteria,
                          const TrainConfig& base_config, StedrModel* out_model) {
  TrialResult result;
  result.spec = spec;

  auto cohort = claims::build_trial(db, catalog, spec, criteria);
  result.comparator_drug = cohort.comparator_drug;
  result.n_cases = static_cast<int>(cohort.cases.size());
  result.n_controls = static_cast<int>(cohort.controls.size());
  if (cohort.controls.empty()) {
    result.failed = true;
    result.note = "no controls";
    return result;
  }

  SampleSet data;
  data.sequential = true;
  for (int c = 0; c < db.config.n_codes; ++c)
    data.covariate_names.push_back("code" + std::to_string(c));
  std::vector<std::size_t> patient_of_sample;
  for (std::size_t i : cohort.cases) {
    data.samples.push_back(
        claims::trial_sample(db.patients[i], db.config.n_codes, 1, db.config.follow_up_days));
    patient_of_sample.push_back(i);
  }
  for (std::size_t i : cohort.controls) {
    data.samples.push_back(
        claims::trial_sample(db.patients[i], db.config.n_codes, 0, db.config.follow_up_days));
    patient_of_sample.push_back(i);
  }

  TrainConfig tc = base_config;
  tc.outcome_kind = OutcomeKind::binary;
  tc.standardize_inputs = false;
  tc.standardize_outcome = false;
  tc.seed = spec.seed;

  StedrModel model = train(data, tc);
  result.checkpoint_digest = params_digest(model.params());

  // test-split effect estimates per model-assigned subgroup
  auto split = split_dataset(data.size(), tc.split, tc.seed);
  std::vector<double> taus;
  std::vector<int> assigned;
  for (std::size_t i : split.test) {
    auto est = model.forward_one(data.samples[i]);
    taus.push_back(est.tau_hat);
    assigned.push_back(est.subgroup);
  }
  result.subgroup_ate.assign(static_cast<std::size_t>(tc.k),
                             std::numeric_limits<double>::quiet_NaN());
  result.subgroup_n.assign(static_cast<std::size_t>(tc.k), 0);
  double overall = 0.0;
  std::vector<double> sums(static_cast<std::size_t>(tc.k), 0.0);
  for (std::size_t i = 0; i < taus.size(); ++i) {
    overall += taus[i];
    sums[static_cast<std::size_t>(assigned[i])] += taus[i];
    result.subgroup_n[static_cast<std::size_t>(assigned[i])] += 1;
  }
  result.overall_ate = taus.empty() ? std::numeric_limits<double>::quiet_NaN()
                                    : overall / static_cast<double>(taus.size());
  for (int k = 0; k < tc.k; ++k)
    if (result.subgroup_n[static_cast<std::size_t>(k)] > 0)
      result.subgroup_ate[static_cast<std::size_t>(k)] =
          sums[static_cast<std::size_t>(k)] /
          static_cast<double>(result.subgroup_n[static_cast<std::size_t>(k)]);

  // post-IPTW balance on baseline code-count features over the whole cohort
  Eigen::MatrixXd case_x(result.n_cases, db.config.n_codes);
  Eigen::MatrixXd ctrl_x(result.n_controls, db.config.n_codes);
  std::vector<double> case_w, ctrl_w;
  std::vector<int> arm;
  std::vector<double> scores;
  std::vector<double> weights_all;
  for (std::size_t s = 0; s < data.samples.size(); ++s) {
    auto est = model.forward_one(data.samples[s]);
    double w = model.config().iptw_mode == IptwMode::literal_sum
                   ? model.pr_t / est.t_hat + (1.0 - model.pr_t) / (1.0 - est.t_hat)
                   : (data.samples[s].treatment ? model.pr_t / est.t_hat
                                                : (1.0 - model.pr_t) / (1.0 - est.t_hat));
    const auto& patient = db.patients[patient_of_sample[s]];
    if (data.samples[s].treatment) {
      case_x.row(static_cast<Eigen::Index>(case_w.size())) =
          claims::baseline_code_counts(patient, db.config.n_codes);
      case_w.push_back(w);
    } else {
      ctrl_x.row(static_cast<Eigen::Index>(ctrl_w.size())) =
          claims::baseline_code_counts(patient, db.config.n_codes);
      ctrl_w.push_back(w);
    }
    arm.push_back(data.samples[s].treatment);
    scores.push_back(est.t_hat);
    weights_all.push_back(w);
  }
  result.balance = metrics::smd_balance(case_x, ctrl_x, &case_w, &ctrl_w);
  result.balance.weighted_auc = metrics::weighted_auc(arm, scores, &weights_all);

  if (out_model) *out_model = std::move(model);
  return result;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::population_candidate: return "population_candidate";
    case Verdict::subgroup_candidate: return "subgroup_candidate";
    case Verdict::not_significant: return "not_significant";
    case Verdict::unbalanced: return "unbalanced";
    case Verdict::ineligible: return "ineligible";
  }
  return "?";
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("STEDR_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

ScreenReport run_screen(const claims::ClaimsDb& db, const claims::DrugCatalog& catalog,
                        const ScreenConfig& cfg) {
  if (cfg.n_trials < 2) throw std::invalid_argument("run_screen: need at least 2 trials per drug");
  ScreenReport report;
  const int k = cfg.train.k;

  // per-drug eligibility is trial-independent: the case cohort is fixed
  std::vector<int> eligible_drugs;
  for (int drug : cfg.drugs) {
    auto cases = claims::eligible_cases(db, drug, cfg.criteria);
    if (static_cast<int>(cases.size()) < cfg.criteria.min_case_size) {
      DrugReport dr;
      dr.drug = drug;
      dr.verdict = Verdict::ineligible;
      dr.note = "case cohort " + std::to_string(cases.size()) + " below minimum " +
                std::to_string(cfg.criteria.min_case_size);
      dr.per_subgroup.resize(static_cast<std::size_t>(k));
      report.drugs.push_back(std::move(dr));
    } else {
      eligible_drugs.push_back(drug);
    }
  }

  // one job per (drug, trial); results land in pre-assigned slots so the
  // outcome is independent of scheduling
  struct Job {
    int drug;
    int trial_index;
  };
  std::vector<Job> jobs;
  for (int drug : eligible_drugs)
    for (int t = 0; t < cfg.n_trials; ++t) jobs.push_back({drug, t});
  std::vector<TrialResult> results(jobs.size());

  auto run_job = [&](std::size_t j) {
    claims::TrialSpec spec;
    spec.drug = jobs[j].drug;
    spec.trial_index = jobs[j].trial_index;
    spec.control_mode = jobs[j].trial_index < cfg.n_trials / 2 ? claims::ControlMode::random
                                                               : claims::ControlMode::same_class;
    spec.seed = mix_seed(cfg.seed, (static_cast<std::uint64_t>(jobs[j].drug) << 24) |
                                       static_cast<std::uint64_t>(jobs[j].trial_index));
    try {
      results[j] = emulate_trial(db, catalog, spec, cfg.criteria, cfg.train);
    } catch (const std::exception& e) {
      results[j].spec = spec;
      results[j].failed = true;
      results[j].note = e.what();
    }
  };

  int threads = resolve_threads(cfg.threads);
  if (threads <= 1 || jobs.size() <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1)) run_job(j);
      });
    for (auto& t : pool) t.join();
  }
  report.trials = results;

  // aggregate per drug over balanced trials; hypotheses: overall + K subgroups
  struct Slot {
    DrugReport* report;
    int column;  // 0 = overall, 1..K = subgroup
  };
  std::vector<double> family_p;
  std::vector<Slot> family_slots;

  for (int drug : eligible_drugs) {
    DrugReport dr;
    dr.drug = drug;
    dr.per_subgroup.resize(static_cast<std::size_t>(k));
    std::vector<const TrialResult*> mine;
    for (std::size_t j = 0; j < jobs.size(); ++j)
      if (jobs[j].drug == drug) mine.push_back(&results[j]);
    dr.n_trials_run = static_cast<int>(mine.size());

    std::vector<const TrialResult*> balanced;
    for (const auto* tr : mine) {
      if (tr->failed) continue;
      if (tr->balance.balanced) balanced.push_back(tr);
    }
    dr.n_balanced_trials = static_cast<int>(balanced.size());

    auto collect = [&](int column, auto pred) {
      std::vector<double> vals;
      for (const auto* tr : balanced) {
        if (!pred(*tr)) continue;
        double v = column == 0 ? tr->overall_ate
                               : tr->subgroup_ate[static_cast<std::size_t>(column - 1)];
        if (std::isfinite(v)) vals.push_back(v);
      }
      HypothesisStat s;
      if (vals.size() >= 2) {
        auto agg = metrics::aggregate_column(vals);
        s.valid = true;
        s.mean = agg.mean;
        s.ci_low = agg.ci_low;
        s.ci_high = agg.ci_high;
        s.p = agg.p_one_sided;
        s.n_trials = agg.n;
      }
      return s;
    };
    auto any = [](const TrialResult&) { return true; };
    dr.overall = collect(0, any);
    for (int c = 1; c <= k; ++c) dr.per_subgroup[static_cast<std::size_t>(c - 1)] = collect(c, any);
    dr.overall_random = collect(0, [](const TrialResult& tr) {
      return tr.spec.control_mode == claims::ControlMode::random;
    });
    dr.overall_same_class = collect(0, [](const TrialResult& tr) {
      return tr.spec.control_mode == claims::ControlMode::same_class;
    });

    report.drugs.push_back(std::move(dr));
  }

  // pooled Benjamini-Hochberg family across drugs x (overall + subgroups)
  for (auto& dr : report.drugs) {
    if (dr.verdict == Verdict::ineligible) continue;
    if (dr.overall.valid) {
      family_p.push_back(dr.overall.p);
      family_slots.push_back({&dr, 0});
    }
    for (int c = 1; c <= k; ++c) {
      auto& s = dr.per_subgroup[static_cast<std::size_t>(c - 1)];
      if (s.valid) {
        family_p.push_back(s.p);
        family_slots.push_back({&dr, c});
      }
    }
  }
  report.hypothesis_family_size = static_cast<int>(family_p.size());
  if (!family_p.empty()) {
    auto adjusted = metrics::bh_adjust(family_p);
    for (std::size_t i = 0; i < family_slots.size(); ++i) {
      auto& slot = family_slots[i];
      if (slot.column == 0)
        slot.report->overall.p_adj = adjusted[i];
      else
        slot.report->per_subgroup[static_cast<std::size_t>(slot.column - 1)].p_adj = adjusted[i];
    }
  }

  for (auto& dr : report.drugs) {
    if (dr.verdict == Verdict::ineligible) continue;
    if (dr.n_balanced_trials < 2) {
      dr.verdict = Verdict::unbalanced;
      continue;
    }
    bool population = dr.overall.valid && dr.overall.p_adj < cfg.significance &&
                      dr.overall.mean < 0.0;
    bool subgroup = false;
    for (const auto& s : dr.per_subgroup)
      subgroup = subgroup || (s.valid && s.p_adj < cfg.significance && s.mean < 0.0);
    if (population)
      dr.verdict = Verdict::population_candidate;
    else if (subgroup)
      dr.verdict = Verdict::subgroup_candidate;
    else
      dr.verdict = Verdict::not_significant;
  }

  // canonical ordering: drug id, then trial index
  std::sort(report.trials.begin(), report.trials.end(), [](const auto& a, const auto& b) {
    if (a.spec.drug != b.spec.drug) return a.spec.drug < b.spec.drug;
    return a.spec.trial_index < b.spec.trial_index;
  });
  std::sort(report.drugs.begin(), report.drugs.end(),
            [](const auto& a, const auto& b) { return a.drug < b.drug; });
  return report;
}

std::string ScreenReport::to_json() const {
  json j;
  j["hypothesis_family_size"] = hypothesis_family_size;
  json drugs_json = json::array();
  for (const auto& dr : drugs) {
    json d;
    d["drug"] = dr.drug;
    d["verdict"] = to_string(dr.verdict);
    d["overall"] = stat_to_json(dr.overall);
    json subs = json::array();
    for (const auto& s : dr.per_subgroup) subs.push_back(stat_to_json(s));
    d["per_subgroup"] = subs;
    d["n_trials_run"] = dr.n_trials_run;
    d["n_balanced_trials"] = dr.n_balanced_trials;
    d["overall_random"] = stat_to_json(dr.overall_random);
    d["overall_same_class"] = stat_to_json(dr.overall_same_class);
    d["note"] = dr.note;
    drugs_json.push_back(std::move(d));
  }
  j["drugs"] = drugs_json;
  json trials_json = json::array();
  for (const auto& tr : trials) trials_json.push_back(json::parse(tr.to_json()));
  j["trials"] = trials_json;
  return j.dump();
}

std::string ScreenReport::to_csv() const {
  std::ostringstream out;
  out.precision(12);
  out << "drug,scope,mean,ci_low,ci_high,p,p_adj,n_trials,verdict\n";
  for (const auto& dr : drugs) {
    auto row = [&](const std::string& scope, const HypothesisStat& s) {
      out << dr.drug << "," << scope << ",";
      if (s.valid)
        out << s.mean << "," << s.ci_low << "," << s.ci_high << "," << s.p << "," << s.p_adj;
      else
        out << ",,,,";
      out << "," << s.n_trials << "," << to_string(dr.verdict) << "\n";
    };
    row("overall", dr.overall);
    for (std::size_t k = 0; k < dr.per_subgroup.size(); ++k)
      row("subgroup" + std::to_string(k), dr.per_subgroup[k]);
  }
  return out.str();
}

std::string ScreenReport::digest() const { return digest_bytes(to_json()); }

Eigen::MatrixXd relative_scores(const Eigen::MatrixXd& mean_scores,
                                const std::vector<bool>& present) {
  Eigen::MatrixXd rel = Eigen::MatrixXd::Zero(mean_scores.rows(), mean_scores.cols());
  for (Eigen::Index c = 0; c < mean_scores.rows(); ++c) {
    double row_sum = 0.0;
    for (Eigen::Index g = 0; g < mean_scores.cols(); ++g)
      if (present[static_cast<std::size_t>(g)]) row_sum += mean_scores(c, g);
    if (row_sum > 0.0)
      for (Eigen::Index g = 0; g < mean_scores.cols(); ++g)
        if (present[static_cast<std::size_t>(g)]) rel(c, g) = mean_scores(c, g) / row_sum;
  }
  return rel;
}

AttentionSummary attention_summary(const StedrModel& model,
                                   const std::vector<TrainSample>& cohort, int k) {
  if (cohort.empty()) throw std::invalid_argument("attention_summary: empty cohort");
  const Eigen::Index m = cohort[0].seq.width();
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(m, k);
  AttentionSummary out;
  out.counts.assign(static_cast<std::size_t>(k), 0);
  for (const auto& sample : cohort) {
    auto est = model.forward_one(sample);
    auto scores = model.attention_scores(sample);
    sums.col(est.subgroup) += scores.a_d;
    out.counts[static_cast<std::size_t>(est.subgroup)] += 1;
  }
  out.present.resize(static_cast<std::size_t>(k));
  for (int g = 0; g < k; ++g) {
    out.present[static_cast<std::size_t>(g)] = out.counts[static_cast<std::size_t>(g)] > 0;
    if (out.counts[static_cast<std::size_t>(g)] > 0)
      sums.col(g) /= static_cast<double>(out.counts[static_cast<std::size_t>(g)]);
  }
  out.relative = relative_scores(sums, out.present);
  return out;
}

}  // namespace stedr::emulation
