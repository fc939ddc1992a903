#include "stedr/claims.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

namespace stedr::claims {

using nlohmann::json;

std::vector<int> DrugCatalog::same_class(int drug) const {
  std::vector<int> out;
  for (std::size_t d = 0; d < drug_class.size(); ++d)
    if (static_cast<int>(d) != drug && drug_class[d] == drug_class[static_cast<std::size_t>(drug)])
      out.push_back(static_cast<int>(d));
  return out;
}

std::string ClaimsConfig::to_json() const {
  json j;
  j["n_patients"] = n_patients;
  j["n_codes"] = n_codes;
  j["n_drugs"] = n_drugs;
  j["n_classes"] = n_classes;
  j["k_true"] = k_true;
  j["subgroup_effects"] = subgroup_effects;
  json extra = json::array();
  for (const auto& [drug, eff] : extra_drug_effects)
    extra.push_back(json{{"drug", drug}, {"effects", eff}});
  j["extra_drug_effects"] = extra;
  j["seed"] = seed;
  j["base_logit"] = base_logit;
  j["subgroup_logit_span"] = subgroup_logit_span;
  j["age_logit_scale"] = age_logit_scale;
  j["profile_code_share"] = profile_code_share;
  j["follow_up_days"] = follow_up_days;
  j["prior_outcome_rate"] = prior_outcome_rate;
  return j.dump();
}

ClaimsConfig ClaimsConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ClaimsConfig c;
  c.n_patients = j.value("n_patients", c.n_patients);
  c.n_codes = j.value("n_codes", c.n_codes);
  c.n_drugs = j.value("n_drugs", c.n_drugs);
  c.n_classes = j.value("n_classes", c.n_classes);
  c.k_true = j.value("k_true", c.k_true);
  if (j.contains("subgroup_effects"))
    c.subgroup_effects = j["subgroup_effects"].get<std::vector<double>>();
  if (j.contains("extra_drug_effects"))
    for (const auto& e : j["extra_drug_effects"])
      c.extra_drug_effects.emplace_back(e["drug"].get<int>(),
                                        e["effects"].get<std::vector<double>>());
  c.seed = j.value("seed", c.seed);
  c.base_logit = j.value("base_logit", c.base_logit);
  c.subgroup_logit_span = j.value("subgroup_logit_span", c.subgroup_logit_span);
  c.age_logit_scale = j.value("age_logit_scale", c.age_logit_scale);
  c.profile_code_share = j.value("profile_code_share", c.profile_code_share);
  c.follow_up_days = j.value("follow_up_days", c.follow_up_days);
  c.prior_outcome_rate = j.value("prior_outcome_rate", c.prior_outcome_rate);
  return c;
}

std::vector<double> planted_effects(const ClaimsConfig& cfg, int drug) {
  std::vector<double> zero(static_cast<std::size_t>(cfg.k_true), 0.0);
  if (drug == 0 && !cfg.subgroup_effects.empty()) return cfg.subgroup_effects;
  for (const auto& [d, eff] : cfg.extra_drug_effects)
    if (d == drug) return eff;
  return zero;
}

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void validate_config(const ClaimsConfig& cfg) {
  if (cfg.k_true < 1) throw std::invalid_argument("claims config: k_true must be >= 1");
  if (cfg.n_codes < kFirstProfileCode + cfg.k_true)
    throw std::invalid_argument("claims config: code vocabulary too small");
  if (cfg.n_drugs < 2) throw std::invalid_argument("claims config: need at least 2 drugs");
  if (!cfg.subgroup_effects.empty() &&
      static_cast<int>(cfg.subgroup_effects.size()) != cfg.k_true)
    throw std::invalid_argument("claims config: subgroup_effects length must equal k_true");
  for (const auto& [drug, eff] : cfg.extra_drug_effects) {
    if (drug < 0 || drug >= cfg.n_drugs)
      throw std::invalid_argument("claims config: planted drug out of range");
    if (static_cast<int>(eff.size()) != cfg.k_true)
      throw std::invalid_argument("claims config: planted effects length must equal k_true");
  }
  for (const auto& e : cfg.subgroup_effects)
    if (!std::isfinite(e)) throw std::invalid_argument("claims config: non-finite effect");
}

}  // namespace

std::pair<ClaimsDb, DrugCatalog> generate_claims(const ClaimsConfig& cfg) {
  validate_config(cfg);

  DrugCatalog catalog;
  catalog.n_classes = cfg.n_classes;
  catalog.drug_class.resize(static_cast<std::size_t>(cfg.n_drugs));
  for (int d = 0; d < cfg.n_drugs; ++d)
    catalog.drug_class[static_cast<std::size_t>(d)] = d % cfg.n_classes;

  ClaimsDb db;
  db.config = cfg;
  db.patients.resize(static_cast<std::size_t>(cfg.n_patients));

  const int profile_codes = cfg.n_codes - kFirstProfileCode;
  const int block = std::max(1, profile_codes / std::max(cfg.k_true, 1));

  for (int i = 0; i < cfg.n_patients; ++i) {
    Rng rng(mix_seed(cfg.seed, 0xC1A1350000ULL + static_cast<std::uint64_t>(i)));
    auto& p = db.patients[static_cast<std::size_t>(i)];
    p.id = i;
    p.sex = rng.bernoulli(0.5) ? 1 : 0;
    p.age_at_first_code = static_cast<int>(rng.uniform_int(40, 85));
    int k = static_cast<int>(rng.uniform_int(0, cfg.k_true - 1));
    p.oracle.latent_subgroup = k;

    int first_day = static_cast<int>(rng.uniform_int(0, 200));
    int onset_day = first_day + static_cast<int>(rng.uniform_int(0, 300));
    p.index_day = onset_day + static_cast<int>(rng.uniform_int(90, 700));

    // primary drug, mildly confounded through a subgroup class preference
    int drug;
    if (rng.bernoulli(0.25)) {
      int pref_class = k % cfg.n_classes;
      std::vector<int> options;
      for (int d = 0; d < cfg.n_drugs; ++d)
        if (catalog.drug_class[static_cast<std::size_t>(d)] == pref_class) options.push_back(d);
      drug = options[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(options.size()) - 1))];
    } else {
      drug = static_cast<int>(rng.uniform_int(0, cfg.n_drugs - 1));
    }
    p.primary_drug = drug;
    p.prescriptions.push_back({p.index_day, drug});
    int refills = static_cast<int>(rng.uniform_int(0, 2));
    for (int r = 0; r < refills; ++r)
      p.prescriptions.push_back({p.index_day + static_cast<int>(rng.uniform_int(30, 300)), drug});

    // outcome probabilities: logistic in the subgroup intercept and age, drug
    // effect planted as a risk difference
    double sub_logit =
        cfg.k_true == 1
            ? 0.0
            : -cfg.subgroup_logit_span / 2.0 +
                  cfg.subgroup_logit_span * static_cast<double>(k) / (cfg.k_true - 1);
    double logit = cfg.base_logit + sub_logit +
                   cfg.age_logit_scale * (static_cast<double>(p.age_at_first_code) - 62.0) / 20.0;
    double p0 = logistic(logit);
    double effect = planted_effects(cfg, drug)[static_cast<std::size_t>(k)];
    double p1 = p0 + effect;
    if (p1 < 0.0 || p1 > 1.0)
      throw std::invalid_argument(
          "claims config: planted effect pushes an outcome probability outside [0,1]");
    double u = rng.uniform();
    p.oracle.p_control = p0;
    p.oracle.p_treated = p1;
    p.oracle.y_control = u < p0 ? 1 : 0;
    p.oracle.y_treated = u < p1 ? 1 : 0;

    // visit process: condition onset visit plus periodic visits with
    // subgroup-profiled codes
    std::set<int> visit_days = {first_day, onset_day};
    for (int day = first_day;;) {
      day += static_cast<int>(rng.uniform_int(20, 120));
      if (day > p.index_day + 800) break;
      visit_days.insert(day);
    }
    int outcome_day = -1;
    if (p.oracle.y_treated) {
      outcome_day = p.index_day + static_cast<int>(rng.uniform_int(30, cfg.follow_up_days - 10));
      visit_days.insert(outcome_day);
    }
    bool prior_outcome = rng.bernoulli(cfg.prior_outcome_rate);

    for (int day : visit_days) {
      Visit v;
      v.day = day;
      std::set<int> codes;
      int draw = static_cast<int>(rng.uniform_int(1, 5));
      for (int c = 0; c < draw; ++c) {
        int code;
        if (rng.bernoulli(cfg.profile_code_share)) {
          int lo = kFirstProfileCode + k * block;
          int hi = std::min(cfg.n_codes - 1, lo + block - 1);
          code = static_cast<int>(rng.uniform_int(lo, hi));
        } else {
          code = static_cast<int>(rng.uniform_int(kFirstProfileCode, cfg.n_codes - 1));
        }
        codes.insert(code);
      }
      if (day == onset_day) codes.insert(kConditionCode);
      if (day == outcome_day) codes.insert(kOutcomeCode);
      if (prior_outcome && day == first_day) codes.insert(kOutcomeCode);
      v.codes.assign(codes.begin(), codes.end());
      p.visits.push_back(std::move(v));
    }
  }
  return {std::move(db), catalog};
}

std::string db_digest(const ClaimsDb& db) {
  Fnv1a64 h;
  h.update(db.config.to_json());
  for (const auto& p : db.patients) {
    h.update_u64(static_cast<std::uint64_t>(p.id));
    h.update_u64(static_cast<std::uint64_t>(p.age_at_first_code));
    h.update_u64(static_cast<std::uint64_t>(p.sex));
    h.update_u64(static_cast<std::uint64_t>(p.primary_drug));
    h.update_u64(static_cast<std::uint64_t>(p.index_day));
    for (const auto& v : p.visits) {
      h.update_u64(static_cast<std::uint64_t>(v.day));
      for (int c : v.codes) h.update_u64(static_cast<std::uint64_t>(c));
    }
    for (const auto& rx : p.prescriptions) {
      h.update_u64(static_cast<std::uint64_t>(rx.day));
      h.update_u64(static_cast<std::uint64_t>(rx.drug));
    }
    h.update_double(p.oracle.p_treated);
    h.update_double(p.oracle.p_control);
  }
  return h.hex();
}

void write_claims(const ClaimsDb& db, const std::string& db_path,
                  const std::string& oracle_sidecar_path) {
  std::ofstream out(db_path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write " + db_path);
  json header;
  header["type"] = "claims_db";
  header["config"] = json::parse(db.config.to_json());
  out << header.dump() << "\n";
  for (const auto& p : db.patients) {
    json j;
    j["id"] = p.id;
    j["age"] = p.age_at_first_code;
    j["sex"] = p.sex;
    json visits = json::array();
    for (const auto& v : p.visits) visits.push_back(json{{"d", v.day}, {"c", v.codes}});
    j["visits"] = visits;
    json rx = json::array();
    for (const auto& r : p.prescriptions) rx.push_back(json{{"d", r.day}, {"drug", r.drug}});
    j["rx"] = rx;
    out << j.dump() << "\n";
  }
  if (!oracle_sidecar_path.empty()) {
    std::ofstream side(oracle_sidecar_path, std::ios::binary);
    if (!side) throw std::invalid_argument("cannot write " + oracle_sidecar_path);
    for (const auto& p : db.patients) {
      json j;
      j["id"] = p.id;
      j["k"] = p.oracle.latent_subgroup;
      j["p1"] = p.oracle.p_treated;
      j["p0"] = p.oracle.p_control;
      j["y1"] = p.oracle.y_treated;
      j["y0"] = p.oracle.y_control;
      side << j.dump() << "\n";
    }
  }
}

void write_catalog(const DrugCatalog& catalog, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write " + path);
  json j;
  j["n_classes"] = catalog.n_classes;
  j["drug_class"] = catalog.drug_class;
  out << j.dump() << "\n";
}

DrugCatalog read_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read " + path);
  json j;
  in >> j;
  DrugCatalog c;
  c.n_classes = j["n_classes"].get<int>();
  c.drug_class = j["drug_class"].get<std::vector<int>>();
  return c;
}

ClaimsDb read_claims(const std::string& db_path, const std::string& oracle_sidecar_path) {
  std::ifstream in(db_path);
  if (!in) throw std::invalid_argument("cannot read " + db_path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty claims file: " + db_path);
  json header = json::parse(line);
  if (header.value("type", "") != "claims_db")
    throw std::invalid_argument("not a claims db: " + db_path);
  ClaimsDb db;
  db.config = ClaimsConfig::from_json(header["config"].dump());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    ClaimsPatient p;
    p.id = j["id"].get<std::int64_t>();
    p.age_at_first_code = j["age"].get<int>();
    p.sex = j["sex"].get<int>();
    for (const auto& v : j["visits"])
      p.visits.push_back({v["d"].get<int>(), v["c"].get<std::vector<int>>()});
    for (const auto& r : j["rx"]) p.prescriptions.push_back({r["d"].get<int>(), r["drug"].get<int>()});
    if (!p.prescriptions.empty()) {
      p.primary_drug = p.prescriptions[0].drug;
      p.index_day = p.prescriptions[0].day;
      for (const auto& r : p.prescriptions)
        if (r.day < p.index_day) {
          p.index_day = r.day;
          p.primary_drug = r.drug;
        }
    }
    db.patients.push_back(std::move(p));
  }
  if (!oracle_sidecar_path.empty()) {
    std::ifstream side(oracle_sidecar_path);
    if (!side) throw std::invalid_argument("cannot read " + oracle_sidecar_path);
    std::size_t i = 0;
    while (std::getline(side, line)) {
      if (line.empty()) continue;
      if (i >= db.patients.size()) throw std::invalid_argument("oracle sidecar longer than db");
      json j = json::parse(line);
      auto& o = db.patients[i].oracle;
      o.latent_subgroup = j["k"].get<int>();
      o.p_treated = j["p1"].get<double>();
      o.p_control = j["p0"].get<double>();
      o.y_treated = j["y1"].get<int>();
      o.y_control = j["y0"].get<int>();
      ++i;
    }
  }
  return db;
}

namespace {

int onset_day_of(const ClaimsPatient& p) {
  for (const auto& v : p.visits)
    for (int c : v.codes)
      if (c == kConditionCode) return v.day;
  return -1;
}

}  // namespace

bool eligible_at_index(const ClaimsPatient& p, const EligibilityCriteria& criteria) {
  if (p.index_day < 0 || p.visits.empty()) return false;
  int onset = onset_day_of(p);
  if (onset < 0 || onset >= p.index_day) return false;  // condition before index
  for (const auto& v : p.visits)
    if (v.day <= p.index_day)
      for (int c : v.codes)
        if (c == kOutcomeCode) return false;  // outcome history
  int first_day = p.visits.front().day;
  if (p.index_day - first_day < criteria.min_history_days) return false;
  int age_at_onset = p.age_at_first_code + (onset - first_day) / 365;
  return age_at_onset > criteria.min_age;
}

std::vector<std::size_t> eligible_cases(const ClaimsDb& db, int drug,
                                        const EligibilityCriteria& criteria) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < db.patients.size(); ++i) {
    const auto& p = db.patients[i];
    if (p.primary_drug == drug && eligible_at_index(p, criteria)) out.push_back(i);
  }
  return out;
}

TrialCohort build_trial(const ClaimsDb& db, const DrugCatalog& catalog, const TrialSpec& spec,
                        const EligibilityCriteria& criteria) {
  if (spec.drug < 0 || spec.drug >= static_cast<int>(catalog.drug_class.size()))
    throw std::invalid_argument("build_trial: unknown drug");

  TrialCohort cohort;
  cohort.cases = eligible_cases(db, spec.drug, criteria);
  if (static_cast<int>(cohort.cases.size()) < criteria.min_case_size)
    throw IneligibleDrugError("drug " + std::to_string(spec.drug) + ": case cohort " +
                              std::to_string(cohort.cases.size()) + " below minimum " +
                              std::to_string(criteria.min_case_size));

  Rng rng(mix_seed(spec.seed, 0x7714A1));
  std::vector<int> comparator_pool;
  if (spec.control_mode == ControlMode::same_class) {
    comparator_pool = catalog.same_class(spec.drug);
  } else {
    for (int d = 0; d < static_cast<int>(catalog.drug_class.size()); ++d)
      if (d != spec.drug) comparator_pool.push_back(d);
  }
  if (comparator_pool.empty())
    throw IneligibleDrugError("drug " + std::to_string(spec.drug) + ": no comparator available");

  // deterministic comparator order, then pick the first with any controls
  rng.shuffle(comparator_pool);
  for (int comparator : comparator_pool) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < db.patients.size(); ++i) {
      const auto& p = db.patients[i];
      if (p.primary_drug != comparator) continue;
      bool exposed = false;
      for (const auto& rx : p.prescriptions) exposed = exposed || rx.drug == spec.drug;
      if (exposed) continue;  // never prescribed the trial drug
      if (eligible_at_index(p, criteria)) candidates.push_back(i);
    }
    if (candidates.empty()) continue;
    std::size_t cap = static_cast<std::size_t>(criteria.control_cap_factor) * cohort.cases.size();
    if (candidates.size() > cap) {
      auto pick = rng.sample_without_replacement(candidates.size(), cap);
      std::sort(pick.begin(), pick.end());
      std::vector<std::size_t> capped;
      capped.reserve(cap);
      for (std::size_t idx : pick) capped.push_back(candidates[idx]);
      candidates = std::move(capped);
    }
    cohort.controls = std::move(candidates);
    cohort.comparator_drug = comparator;
    return cohort;
  }
  throw IneligibleDrugError("drug " + std::to_string(spec.drug) +
                            ": no comparator with eligible controls");
}

TrainSample trial_sample(const ClaimsPatient& p, int n_codes, int treatment,
                         int follow_up_days) {
  std::vector<const Visit*> baseline;
  for (const auto& v : p.visits)
    if (v.day < p.index_day) baseline.push_back(&v);
  if (baseline.empty()) throw std::invalid_argument("trial_sample: no baseline visits");

  TrainSample s;
  s.seq.codes = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(baseline.size()), n_codes);
  s.seq.times.resize(static_cast<Eigen::Index>(baseline.size()));
  for (std::size_t t = 0; t < baseline.size(); ++t) {
    for (int c : baseline[t]->codes)
      if (c < n_codes) s.seq.codes(static_cast<Eigen::Index>(t), c) = 1.0;
    s.seq.times(static_cast<Eigen::Index>(t)) = static_cast<double>(p.index_day - baseline[t]->day);
  }
  s.seq.valid_mask = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(baseline.size()));
  s.treatment = treatment;
  s.y = 0.0;
  for (const auto& v : p.visits) {
    if (v.day > p.index_day && v.day <= p.index_day + follow_up_days)
      for (int c : v.codes)
        if (c == kOutcomeCode) s.y = 1.0;
  }
  s.has_truth = false;
  return s;
}

Eigen::RowVectorXd baseline_code_counts(const ClaimsPatient& p, int n_codes) {
  Eigen::RowVectorXd counts = Eigen::RowVectorXd::Zero(n_codes);
  for (const auto& v : p.visits)
    if (v.day < p.index_day)
      for (int c : v.codes)
        if (c < n_codes) counts(c) += 1.0;
  return counts;
}

}  // namespace stedr::claims
