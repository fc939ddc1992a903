// stedr: command-line front end for dataset generation, training, evaluation,
// trial emulation, drug screening, and figure rendering.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>

#include "stedr/emulation.hpp"
#include "stedr/metrics.hpp"
#include "stedr/model.hpp"
#include "stedr/serial.hpp"
#include "stedr/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stedr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

class Manifest {
 public:
  Manifest(std::string command, std::uint64_t seed) : command_(std::move(command)), seed_(seed) {
    start_ = std::chrono::steady_clock::now();
  }
  void input(const std::string& path) { inputs_[path] = digest_file(path); }
  void output(const std::string& path) { outputs_[path] = digest_file(path); }
  void config(const std::string& text) { config_ = text; }

  void write(const std::string& anchor_path) const {
    json j;
    j["command"] = command_;
    j["seed"] = seed_;
    if (!config_.empty()) j["config"] = json::parse(config_);
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - start_)
                  .count();
    j["duration_ms"] = ms;
    std::ofstream out(anchor_path + ".manifest.json", std::ios::binary);
    if (!out) throw std::invalid_argument("cannot write manifest for " + anchor_path);
    out << j.dump(2) << "\n";
  }

 private:
  std::string command_;
  std::uint64_t seed_;
  std::string config_;
  std::map<std::string, std::string> inputs_, outputs_;
  std::chrono::steady_clock::time_point start_;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write " + path);
  out << text;
}

// flags > config file > defaults
struct TrainFlagOverrides {
  std::optional<int> k;
  std::optional<double> alpha;
  std::optional<double> learning_rate;
  std::optional<int> batch_size;
  std::optional<int> max_epochs;
  std::optional<int> patience;
  std::optional<int> hidden;
  std::optional<int> transformer_layers;
  std::optional<int> pred_layers;
  std::optional<std::string> outcome_kind;
  std::optional<std::string> iptw_mode;
  std::optional<double> propensity_clip;
  bool ablate_gmm = false;
  bool ablate_attention = false;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--k", k, "number of subgroups");
    cmd->add_option("--alpha", alpha, "overlap penalty strength");
    cmd->add_option("--lr", learning_rate, "learning rate");
    cmd->add_option("--batch-size", batch_size, "mini-batch size");
    cmd->add_option("--max-epochs", max_epochs, "epoch cap");
    cmd->add_option("--patience", patience, "early-stopping patience");
    cmd->add_option("--hidden", hidden, "transformer width");
    cmd->add_option("--transformer-layers", transformer_layers, "encoder layers");
    cmd->add_option("--pred-layers", pred_layers, "prediction head layers");
    cmd->add_option("--outcome-kind", outcome_kind, "continuous|binary");
    cmd->add_option("--iptw-mode", iptw_mode, "literal_sum|treatment_conditional");
    cmd->add_option("--propensity-clip", propensity_clip, "propensity clipping bound");
    cmd->add_flag("--ablate-gmm", ablate_gmm, "disable the subgroup mixture model");
    cmd->add_flag("--ablate-attention", ablate_attention, "disable the attention gating");
  }

  void apply(TrainConfig& cfg) const {
    if (k) cfg.k = *k;
    if (alpha) cfg.alpha = *alpha;
    if (learning_rate) cfg.learning_rate = *learning_rate;
    if (batch_size) cfg.batch_size = *batch_size;
    if (max_epochs) cfg.max_epochs = *max_epochs;
    if (patience) cfg.patience = *patience;
    if (hidden) cfg.hidden = *hidden;
    if (transformer_layers) cfg.transformer_layers = *transformer_layers;
    if (pred_layers) cfg.pred_layers = *pred_layers;
    if (outcome_kind)
      cfg.outcome_kind = *outcome_kind == "binary" ? OutcomeKind::binary : OutcomeKind::continuous;
    if (iptw_mode)
      cfg.iptw_mode = *iptw_mode == "treatment_conditional" ? IptwMode::treatment_conditional
                                                            : IptwMode::literal_sum;
    if (propensity_clip) cfg.propensity_clip = *propensity_clip;
    if (ablate_gmm) cfg.ablate_gmm = true;
    if (ablate_attention) cfg.ablate_attention = true;
  }
};

TrainConfig load_train_config(const std::string& config_path, std::uint64_t seed,
                              const TrainFlagOverrides& flags) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = TrainConfig::from_json(read_text(config_path));
  flags.apply(cfg);
  cfg.seed = seed;
  return cfg;
}

// --- gen ------------------------------------------------------------------

int cmd_gen(const std::string& generator, int n, std::uint64_t seed, const std::string& out,
            const std::string& config_path, const std::string& csv_path) {
  Manifest manifest("gen", seed);
  if (generator == "a") {
    auto ds = synth::generate_synthetic_a(n, seed);
    serial::write_jsonl(ds, out);
    manifest.output(out);
  } else if (generator == "b") {
    auto ds = synth::generate_synthetic_b(n, seed);
    serial::write_jsonl(ds, out);
    manifest.output(out);
  } else if (generator == "ihdp") {
    auto tbl = synth::generate_ihdp_like(seed);
    auto ds = synth::simulate_response_surface_b(tbl.x, tbl.treatment, seed);
    serial::write_jsonl(ds, out);
    manifest.output(out);
  } else if (generator == "rsb") {
    if (csv_path.empty())
      throw std::invalid_argument("gen rsb: --csv with a treatment column is required");
    manifest.input(csv_path);
    auto table = serial::read_csv(csv_path);
    auto cov = serial::split_treatment(table);
    auto ds = synth::simulate_response_surface_b(cov.x, cov.treatment, seed);
    ds.covariate_names = cov.names;
    serial::write_jsonl(ds, out);
    manifest.output(out);
  } else if (generator == "claims") {
    claims::ClaimsConfig cfg;
    if (!config_path.empty()) {
      manifest.input(config_path);
      cfg = claims::ClaimsConfig::from_json(read_text(config_path));
    }
    if (n > 0) cfg.n_patients = n;
    cfg.seed = seed;
    auto [db, catalog] = claims::generate_claims(cfg);
    std::string oracle_path = out + ".oracle.jsonl";
    std::string catalog_path = out + ".catalog.json";
    claims::write_claims(db, out, oracle_path);
    claims::write_catalog(catalog, catalog_path);
    manifest.config(cfg.to_json());
    manifest.output(out);
    manifest.output(oracle_path);
    manifest.output(catalog_path);
  } else {
    throw std::invalid_argument("unknown generator: " + generator +
                                " (expected a|b|ihdp|rsb|claims)");
  }
  manifest.write(out);
  return kExitOk;
}

// --- train ------------------------------------------------------------------

int cmd_train(const std::string& data_path, const std::string& config_path, std::uint64_t seed,
              const std::string& out, const TrainFlagOverrides& flags) {
  Manifest manifest("train", seed);
  manifest.input(data_path);
  if (!config_path.empty()) manifest.input(config_path);
  auto data = serial::read_sampleset(data_path);
  TrainConfig cfg = load_train_config(config_path, seed, flags);
  manifest.config(cfg.to_json());

  auto model = train(data, cfg);
  serial::save_checkpoint(model.to_checkpoint(), out);
  manifest.output(out);

  json hist = json::array();
  for (const auto& rec : model.history)
    hist.push_back(json{{"l_snn", rec.l_snn},
                        {"l_pnn", rec.l_pnn},
                        {"l_overlap", rec.l_overlap},
                        {"train_total", rec.train_total},
                        {"val_total", rec.val_total}});
  std::string hist_path = out + ".history.json";
  write_text(hist_path, hist.dump(2) + "\n");
  manifest.output(hist_path);
  manifest.write(out);
  return kExitOk;
}

// --- eval ------------------------------------------------------------------

int cmd_eval(const std::string& model_path, const std::string& data_path, const std::string& out,
             bool raw_units, const std::string& scope) {
  Manifest manifest("eval", 0);
  manifest.input(model_path);
  manifest.input(data_path);
  auto data = serial::read_sampleset(data_path);
  auto model = StedrModel::from_checkpoint(serial::load_checkpoint(model_path), data.width());

  std::vector<std::size_t> idx;
  if (scope == "all") {
    idx = iota_indices(data.size());
  } else {
    idx = split_dataset(data.size(), model.config().split, model.config().seed).test;
  }

  std::vector<double> tau_hat, tau_true;
  std::vector<int> assigned;
  double factual_se = 0.0;
  for (std::size_t i : idx) {
    const auto& s = data.samples[i];
    auto est = model.forward_one(s);
    tau_hat.push_back(est.tau_hat);
    assigned.push_back(est.subgroup);
    if (s.has_truth) tau_true.push_back(s.true_effect());
    double pred = s.treatment ? est.y1_hat : est.y0_hat;
    factual_se += (pred - s.y) * (pred - s.y);
  }

  json j;
  j["n"] = idx.size();
  j["scope"] = scope;
  j["raw_units"] = raw_units;
  j["factual_mse"] = factual_se / static_cast<double>(idx.size());
  if (data.has_truth) {
    double scale = raw_units ? 1.0 : model.y_std;
    std::vector<double> th = tau_hat, tt = tau_true;
    for (auto& v : th) v /= scale;
    for (auto& v : tt) v /= scale;
    j["pehe"] = metrics::pehe(th, tt);
    j["eps_ate"] = metrics::eps_ate(th, tt);
    auto vs = metrics::variance_stats(tau_hat, assigned, model.config().k);
    j["v_within"] = vs.v_within;
    j["v_across"] = vs.v_across;
  }
  std::vector<int> counts(static_cast<std::size_t>(model.config().k), 0);
  for (int a : assigned) counts[static_cast<std::size_t>(a)] += 1;
  j["subgroup_sizes"] = counts;
  write_text(out, j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  manifest.output(out);
  manifest.write(out);
  return kExitOk;
}

// --- emulate ------------------------------------------------------------------

int cmd_emulate(const std::string& db_path, const std::string& catalog_path, int drug,
                int trial_index, const std::string& mode, std::uint64_t seed,
                const std::string& out, const std::string& config_path, int min_case_size,
                const std::string& attention_csv, const std::string& model_out,
                const TrainFlagOverrides& flags) {
  Manifest manifest("emulate", seed);
  manifest.input(db_path);
  manifest.input(catalog_path);
  auto db = claims::read_claims(db_path);
  auto catalog = claims::read_catalog(catalog_path);

  claims::TrialSpec spec;
  spec.drug = drug;
  spec.trial_index = trial_index;
  spec.control_mode =
      mode == "same_class" ? claims::ControlMode::same_class : claims::ControlMode::random;
  spec.seed = mix_seed(seed, (static_cast<std::uint64_t>(drug) << 24) |
                                 static_cast<std::uint64_t>(trial_index));

  claims::EligibilityCriteria criteria;
  criteria.min_case_size = min_case_size;
  TrainConfig cfg = load_train_config(config_path, seed, flags);
  manifest.config(cfg.to_json());

  StedrModel model(cfg, db.config.n_codes);
  auto result = emulation::emulate_trial(db, catalog, spec, criteria, cfg, &model);
  write_text(out, result.to_json() + "\n");
  manifest.output(out);

  if (!attention_csv.empty() && !cfg.ablate_attention) {
    auto cohort = claims::build_trial(db, catalog, spec, criteria);
    std::vector<TrainSample> samples;
    for (std::size_t i : cohort.cases)
      samples.push_back(
          claims::trial_sample(db.patients[i], db.config.n_codes, 1, db.config.follow_up_days));
    for (std::size_t i : cohort.controls)
      samples.push_back(
          claims::trial_sample(db.patients[i], db.config.n_codes, 0, db.config.follow_up_days));
    auto summary = emulation::attention_summary(model, samples, cfg.k);
    std::vector<std::string> names = {"covariate"};
    for (int k = 0; k < cfg.k; ++k) names.push_back("subgroup" + std::to_string(k));
    Eigen::MatrixXd table(summary.relative.rows(), cfg.k + 1);
    for (Eigen::Index c = 0; c < summary.relative.rows(); ++c) {
      table(c, 0) = static_cast<double>(c);
      for (int k = 0; k < cfg.k; ++k) table(c, k + 1) = summary.relative(c, k);
    }
    serial::write_csv(attention_csv, names, table);
    manifest.output(attention_csv);
  }
  if (!model_out.empty()) {
    serial::save_checkpoint(model.to_checkpoint(), model_out);
    manifest.output(model_out);
  }
  manifest.write(out);
  return kExitOk;
}

// --- screen ------------------------------------------------------------------

int cmd_screen(const std::string& db_path, const std::string& catalog_path,
               const std::vector<int>& drugs, int n_trials, std::uint64_t seed,
               const std::string& out, const std::string& csv_out,
               const std::string& config_path, int min_case_size, int threads,
               const TrainFlagOverrides& flags) {
  Manifest manifest("screen", seed);
  manifest.input(db_path);
  manifest.input(catalog_path);
  auto db = claims::read_claims(db_path);
  auto catalog = claims::read_catalog(catalog_path);

  emulation::ScreenConfig sc;
  sc.drugs = drugs;
  if (sc.drugs.empty())
    for (int d = 0; d < db.config.n_drugs; ++d) sc.drugs.push_back(d);
  sc.n_trials = n_trials;
  sc.seed = seed;
  sc.threads = threads;
  sc.criteria.min_case_size = min_case_size;
  sc.train = load_train_config(config_path, seed, flags);
  manifest.config(sc.train.to_json());

  auto report = emulation::run_screen(db, catalog, sc);
  write_text(out, report.to_json() + "\n");
  manifest.output(out);
  std::string csv = csv_out.empty() ? out + ".csv" : csv_out;
  write_text(csv, report.to_csv());
  manifest.output(csv);
  manifest.write(out);

  for (const auto& dr : report.drugs)
    std::cout << "drug " << dr.drug << ": " << emulation::to_string(dr.verdict) << "\n";
  return kExitOk;
}

// --- report (static figures) -----------------------------------------------

struct ForestRow {
  int drug;
  std::string scope;
  double mean, lo, hi;
  bool valid;
  std::string verdict;
};

std::string svg_header(int width, int height) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return s.str();
}

void render_forest(const std::vector<ForestRow>& rows, int drug, const std::string& path) {
  std::vector<ForestRow> mine;
  for (const auto& r : rows)
    if (r.drug == drug && r.valid) mine.push_back(r);
  if (mine.empty()) return;
  double lo = 0.0, hi = 0.0;
  for (const auto& r : mine) {
    lo = std::min(lo, r.lo);
    hi = std::max(hi, r.hi);
  }
  double span = std::max(hi - lo, 1e-9);
  lo -= 0.1 * span;
  hi += 0.1 * span;
  span = hi - lo;

  const int width = 640, row_h = 40, margin = 120, top = 50;
  int height = top + row_h * static_cast<int>(mine.size()) + 30;
  auto xpos = [&](double v) {
    return margin + (v - lo) / span * (width - margin - 30);
  };
  std::ostringstream s;
  s << svg_header(width, height);
  s << "<text x=\"20\" y=\"25\" font-family=\"sans-serif\" font-size=\"15\">drug " << drug
    << " treatment-effect 95% CIs (" << mine.front().verdict << ")</text>\n";
  // zero reference
  s << "<line x1=\"" << xpos(0.0) << "\" y1=\"" << top - 10 << "\" x2=\"" << xpos(0.0)
    << "\" y2=\"" << height - 20 << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  for (std::size_t i = 0; i < mine.size(); ++i) {
    int y = top + static_cast<int>(i) * row_h;
    const auto& r = mine[i];
    s << "<text x=\"15\" y=\"" << y + 5 << "\" font-family=\"sans-serif\" font-size=\"13\">"
      << r.scope << "</text>\n";
    s << "<line x1=\"" << xpos(r.lo) << "\" y1=\"" << y << "\" x2=\"" << xpos(r.hi) << "\" y2=\""
      << y << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    for (double v : {r.lo, r.hi})
      s << "<line x1=\"" << xpos(v) << "\" y1=\"" << y - 6 << "\" x2=\"" << xpos(v) << "\" y2=\""
        << y + 6 << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    s << "<circle cx=\"" << xpos(r.mean) << "\" cy=\"" << y << "\" r=\"4\" fill=\"#1f6fb2\"/>\n";
  }
  s << "</svg>\n";
  write_text(path, s.str());
}

void render_heatmap(const serial::CsvTable& table, int k, const std::string& path) {
  // rows: covariate id + per-subgroup relative score. Show the covariates
  // with the highest subgroup-0 scores that exceed the 1/K importance bar.
  struct Row {
    int covariate;
    std::vector<double> scores;
  };
  std::vector<Row> rows;
  for (Eigen::Index i = 0; i < table.values.rows(); ++i) {
    Row r;
    r.covariate = static_cast<int>(table.values(i, 0));
    for (int g = 0; g < k; ++g) r.scores.push_back(table.values(i, 1 + g));
    rows.push_back(std::move(r));
  }
  double bar = 1.0 / static_cast<double>(k);
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.scores[0] > b.scores[0]; });
  std::vector<Row> shown;
  for (const auto& r : rows) {
    if (r.scores[0] > bar) shown.push_back(r);
    if (shown.size() == 15) break;
  }
  if (shown.empty()) shown.assign(rows.begin(), rows.begin() + std::min<std::size_t>(rows.size(), 15));

  const int cell = 34, left = 110, top = 60;
  int width = left + cell * k + 30;
  int height = top + cell * static_cast<int>(shown.size()) + 20;
  std::ostringstream s;
  s << svg_header(width, height);
  s << "<text x=\"15\" y=\"25\" font-family=\"sans-serif\" font-size=\"15\">relative covariate "
       "attention by subgroup</text>\n";
  for (int g = 0; g < k; ++g)
    s << "<text x=\"" << left + g * cell + 6 << "\" y=\"" << top - 8
      << "\" font-family=\"sans-serif\" font-size=\"12\">C" << g + 1 << "</text>\n";
  for (std::size_t i = 0; i < shown.size(); ++i) {
    int y = top + static_cast<int>(i) * cell;
    s << "<text x=\"10\" y=\"" << y + cell / 2 + 4
      << "\" font-family=\"sans-serif\" font-size=\"12\">code " << shown[i].covariate
      << "</text>\n";
    for (int g = 0; g < k; ++g) {
      double v = std::clamp(shown[i].scores[static_cast<std::size_t>(g)], 0.0, 1.0);
      int red = static_cast<int>(255.0 * v * std::min(1.0, 1.5));
      int blue = static_cast<int>(255.0 * (1.0 - v));
      s << "<rect x=\"" << left + g * cell << "\" y=\"" << y << "\" width=\"" << cell - 2
        << "\" height=\"" << cell - 2 << "\" fill=\"rgb(" << std::min(255, red) << ","
        << std::min(150, 255 - std::abs(red - blue) / 2) << "," << blue << ")\"/>\n";
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%.2f", shown[i].scores[static_cast<std::size_t>(g)]);
      s << "<text x=\"" << left + g * cell + 4 << "\" y=\"" << y + cell / 2 + 4
        << "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"white\">" << buf
        << "</text>\n";
    }
  }
  s << "</svg>\n";
  write_text(path, s.str());
}

int cmd_report(const std::string& screen_csv, const std::string& attention_csv,
               const std::string& out_dir) {
  Manifest manifest("report", 0);
  fs::create_directories(out_dir);

  if (!screen_csv.empty()) {
    manifest.input(screen_csv);
    std::ifstream in(screen_csv);
    if (!in) throw std::invalid_argument("cannot read " + screen_csv);
    std::string line;
    std::getline(in, line);  // header
    std::vector<ForestRow> rows;
    std::set<int> drug_ids;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ls(line);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      if (cells.size() < 9) continue;
      ForestRow r;
      r.drug = std::stoi(cells[0]);
      r.scope = cells[1];
      r.valid = !cells[2].empty();
      if (r.valid) {
        r.mean = std::stod(cells[2]);
        r.lo = std::stod(cells[3]);
        r.hi = std::stod(cells[4]);
      }
      r.verdict = cells[8];
      rows.push_back(r);
      drug_ids.insert(r.drug);
    }
    for (int drug : drug_ids) {
      std::string path = (fs::path(out_dir) / ("forest_drug" + std::to_string(drug) + ".svg")).string();
      render_forest(rows, drug, path);
      if (fs::exists(path)) manifest.output(path);
    }
  }
  if (!attention_csv.empty()) {
    manifest.input(attention_csv);
    auto table = serial::read_csv(attention_csv);
    int k = static_cast<int>(table.names.size()) - 1;
    if (k < 1) throw std::invalid_argument("attention csv needs subgroup columns");
    std::string path = (fs::path(out_dir) / "attention_heatmap.svg").string();
    render_heatmap(table, k, path);
    manifest.output(path);
  }
  manifest.write((fs::path(out_dir) / "report").string());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subgroup-aware treatment-effect estimation and drug screening"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate benchmark datasets or a claims corpus");
  std::string gen_generator, gen_out, gen_config, gen_csv;
  int gen_n = 1000;
  std::uint64_t gen_seed = 0;
  gen->add_option("--generator", gen_generator, "a|b|ihdp|rsb|claims")->required();
  gen->add_option("--n", gen_n, "sample / patient count");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output path (JSON-Lines)")->required();
  gen->add_option("--config", gen_config, "claims corpus config JSON");
  gen->add_option("--csv", gen_csv, "covariate CSV with a treatment column (rsb)");

  // train
  auto* tr = app.add_subcommand("train", "train a model on a generated dataset");
  std::string tr_data, tr_config, tr_out;
  std::uint64_t tr_seed = 0;
  TrainFlagOverrides tr_flags;
  tr->add_option("--data", tr_data, "dataset JSON-Lines")->required();
  tr->add_option("--config", tr_config, "training config JSON");
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--out", tr_out, "checkpoint output path")->required();
  tr_flags.add_flags(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_model, ev_data, ev_out, ev_scope = "test";
  bool ev_raw = false;
  ev->add_option("--model", ev_model, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "dataset JSON-Lines")->required();
  ev->add_option("--out", ev_out, "metrics JSON output")->required();
  ev->add_flag("--raw-units", ev_raw, "report effect metrics in raw outcome units");
  ev->add_option("--scope", ev_scope, "test|all (which samples to score)");

  // emulate
  auto* em = app.add_subcommand("emulate", "run a single emulated trial");
  std::string em_db, em_catalog, em_out, em_config, em_mode = "random", em_attn, em_model_out;
  int em_drug = 0, em_trial = 0, em_min_case = 100;
  std::uint64_t em_seed = 0;
  TrainFlagOverrides em_flags;
  em->add_option("--db", em_db, "claims JSON-Lines")->required();
  em->add_option("--catalog", em_catalog, "drug catalog JSON")->required();
  em->add_option("--drug", em_drug, "trial drug id")->required();
  em->add_option("--trial-index", em_trial, "trial index (seeds the cohort draw)");
  em->add_option("--mode", em_mode, "random|same_class");
  em->add_option("--seed", em_seed, "master seed");
  em->add_option("--out", em_out, "trial result JSON")->required();
  em->add_option("--config", em_config, "training config JSON");
  em->add_option("--min-case-size", em_min_case, "minimum case cohort size");
  em->add_option("--attention-csv", em_attn, "write relative attention scores CSV");
  em->add_option("--model-out", em_model_out, "also save the trained checkpoint");
  em_flags.add_flags(em);

  // screen
  auto* sc = app.add_subcommand("screen", "run the high-throughput drug screen");
  std::string sc_db, sc_catalog, sc_out, sc_csv, sc_config;
  std::vector<int> sc_drugs;
  int sc_trials = 100, sc_min_case = 100, sc_threads = 0;
  std::uint64_t sc_seed = 0;
  TrainFlagOverrides sc_flags;
  sc->add_option("--db", sc_db, "claims JSON-Lines")->required();
  sc->add_option("--catalog", sc_catalog, "drug catalog JSON")->required();
  sc->add_option("--drugs", sc_drugs, "drug ids (default: all)")->delimiter(',');
  sc->add_option("--n-trials", sc_trials, "trials per drug (half random, half same-class)");
  sc->add_option("--seed", sc_seed, "master seed");
  sc->add_option("--out", sc_out, "screen report JSON")->required();
  sc->add_option("--csv", sc_csv, "screen report CSV (default: <out>.csv)");
  sc->add_option("--config", sc_config, "training config JSON");
  sc->add_option("--min-case-size", sc_min_case, "minimum case cohort size");
  sc->add_option("--threads", sc_threads, "worker threads (0: STEDR_THREADS or hardware)");
  sc_flags.add_flags(sc);

  // report
  auto* rp = app.add_subcommand("report", "render static figures from report CSVs");
  std::string rp_screen, rp_attn, rp_dir;
  rp->add_option("--screen-csv", rp_screen, "screen report CSV (forest plots)");
  rp->add_option("--attention-csv", rp_attn, "attention score CSV (heatmap)");
  rp->add_option("--out-dir", rp_dir, "figure output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_generator, gen_n, gen_seed, gen_out, gen_config, gen_csv);
    if (tr->parsed()) return cmd_train(tr_data, tr_config, tr_seed, tr_out, tr_flags);
    if (ev->parsed()) return cmd_eval(ev_model, ev_data, ev_out, ev_raw, ev_scope);
    if (em->parsed())
      return cmd_emulate(em_db, em_catalog, em_drug, em_trial, em_mode, em_seed, em_out,
                         em_config, em_min_case, em_attn, em_model_out, em_flags);
    if (sc->parsed())
      return cmd_screen(sc_db, sc_catalog, sc_drugs, sc_trials, sc_seed, sc_out, sc_csv,
                        sc_config, sc_min_case, sc_threads, sc_flags);
    if (rp->parsed()) return cmd_report(rp_screen, rp_attn, rp_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
