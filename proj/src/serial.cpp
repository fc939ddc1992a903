#include "stedr/serial.hpp"

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace stedr::serial {

using nlohmann::json;

namespace {

json header_common(const char* generator, std::uint64_t seed, std::size_t n,
                   const std::vector<double>& coefficients) {
  json h;
  h["generator"] = generator;
  h["seed"] = seed;
  h["n"] = n;
  h["coefficients"] = coefficients;
  return h;
}

void dump_lines(const json& header, const std::vector<json>& lines, std::ostream& out) {
  out << header.dump() << "\n";
  for (const auto& l : lines) out << l.dump() << "\n";
}

}  // namespace

std::string to_jsonl(const synth::SyntheticDataset& ds) {
  json h = header_common(synth::to_string(ds.generator_id).c_str(), ds.seed, ds.samples.size(),
                         ds.coefficients);
  h["covariate_names"] = ds.covariate_names;
  h["sequential"] = false;
  std::vector<json> lines;
  lines.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    json j;
    j["x"] = s.covariates;
    j["t"] = s.treatment;
    j["y"] = s.observed_outcome;
    j["mu0"] = s.mu0;
    j["mu1"] = s.mu1;
    lines.push_back(std::move(j));
  }
  std::ostringstream out;
  dump_lines(h, lines, out);
  return out.str();
}

std::string to_jsonl(const synth::SequentialDataset& ds) {
  json h = header_common("b", ds.seed, ds.samples.size(), ds.coefficients);
  h["sequential"] = true;
  h["covariate_dim"] = ds.config.covariate_dim;
  std::vector<json> lines;
  lines.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    json j;
    std::vector<std::vector<double>> rows;
    for (Eigen::Index t = 0; t < s.covariate_history.rows(); ++t)
      rows.emplace_back(s.covariate_history.row(t).begin(), s.covariate_history.row(t).end());
    j["x"] = rows;
    j["t"] = s.treatment;
    j["y"] = s.observed_outcome;
    j["mu0"] = s.mu0;
    j["mu1"] = s.mu1;
    lines.push_back(std::move(j));
  }
  std::ostringstream out;
  dump_lines(h, lines, out);
  return out.str();
}

void write_jsonl(const synth::SyntheticDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write " + path);
  out << to_jsonl(ds);
}

void write_jsonl(const synth::SequentialDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write " + path);
  out << to_jsonl(ds);
}

SampleSet read_sampleset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty dataset file: " + path);
  json h = json::parse(line);
  SampleSet set;
  set.sequential = h.value("sequential", false);
  if (h.contains("covariate_names"))
    set.covariate_names = h["covariate_names"].get<std::vector<std::string>>();
  set.has_truth = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    TrainSample ts;
    if (set.sequential) {
      auto rows = j["x"].get<std::vector<std::vector<double>>>();
      const Eigen::Index t_len = static_cast<Eigen::Index>(rows.size());
      const Eigen::Index d = t_len > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
      ts.seq.codes.resize(t_len, d);
      for (Eigen::Index t = 0; t < t_len; ++t)
        for (Eigen::Index c = 0; c < d; ++c)
          ts.seq.codes(t, c) = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)];
      if (j.contains("times")) {
        auto tv = j["times"].get<std::vector<double>>();
        ts.seq.times.resize(t_len);
        for (Eigen::Index t = 0; t < t_len; ++t) ts.seq.times(t) = tv[static_cast<std::size_t>(t)];
      } else {
        ts.seq.times.resize(t_len);
        for (Eigen::Index t = 0; t < t_len; ++t) ts.seq.times(t) = static_cast<double>(t_len - 1 - t);
      }
      ts.seq.valid_mask = Eigen::VectorXd::Ones(t_len);
    } else {
      ts.seq = static_visit(j["x"].get<std::vector<double>>());
    }
    ts.treatment = j["t"].get<int>();
    ts.y = j["y"].get<double>();
    if (j.contains("mu0") && j.contains("mu1")) {
      ts.mu0 = j["mu0"].get<double>();
      ts.mu1 = j["mu1"].get<double>();
      ts.has_truth = true;
    } else {
      ts.has_truth = false;
      set.has_truth = false;
    }
    set.samples.push_back(std::move(ts));
  }
  if (set.samples.empty()) throw std::invalid_argument("dataset has no samples: " + path);
  for (const auto& s : set.samples) set.has_truth = set.has_truth && s.has_truth;
  return set;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty csv: " + path);
  CsvTable table;
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) table.names.push_back(cell);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != table.names.size())
      throw std::invalid_argument("csv row width mismatch in " + path);
    rows.push_back(std::move(row));
  }
  table.values.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(table.names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return table;
}

synth::CovariateTable split_treatment(const CsvTable& table, const std::string& treatment_column) {
  Eigen::Index tcol = -1;
  for (std::size_t j = 0; j < table.names.size(); ++j)
    if (table.names[j] == treatment_column) tcol = static_cast<Eigen::Index>(j);
  if (tcol < 0) throw std::invalid_argument("csv has no column '" + treatment_column + "'");
  synth::CovariateTable out;
  out.x.resize(table.values.rows(), table.values.cols() - 1);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < table.values.cols(); ++j) {
    if (j == tcol) continue;
    out.x.col(k) = table.values.col(j);
    out.names.push_back(table.names[static_cast<std::size_t>(j)]);
    ++k;
  }
  out.treatment.resize(static_cast<std::size_t>(table.values.rows()));
  for (Eigen::Index i = 0; i < table.values.rows(); ++i)
    out.treatment[static_cast<std::size_t>(i)] = table.values(i, tcol) != 0.0 ? 1 : 0;
  return out;
}

void write_csv(const std::string& path, const std::vector<std::string>& names,
               const Eigen::MatrixXd& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write " + path);
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  out << "\n";
  out.precision(17);
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) out << (j ? "," : "") << values(i, j);
    out << "\n";
  }
}

namespace {

constexpr char kCkptMagic[8] = {'S', 'T', 'E', 'D', 'R', 'C', 'K', '1'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::invalid_argument("checkpoint: truncated file");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  auto n = get<std::uint64_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::invalid_argument("checkpoint: truncated string");
  return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write " + path);
  out.write(kCkptMagic, sizeof(kCkptMagic));
  put<std::uint32_t>(out, 1);  // container version
  put_string(out, ckpt.config_json);
  put<double>(out, ckpt.pr_t);
  put<std::uint64_t>(out, ckpt.params.names().size());
  for (const auto& name : ckpt.params.names()) {
    const Eigen::MatrixXd& m = ckpt.params.at(name);
    put_string(out, name);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw std::invalid_argument("not a checkpoint file: " + path);
  auto version = get<std::uint32_t>(in);
  if (version != 1) throw std::invalid_argument("unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.config_json = get_string(in);
  ckpt.pr_t = get<double>(in);
  auto count = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(in);
    auto rows = get<std::uint64_t>(in);
    auto cols = get<std::uint64_t>(in);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in);
    ckpt.params.add(name, std::move(m));
  }
  return ckpt;
}

}  // namespace stedr::serial
