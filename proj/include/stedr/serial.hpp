#pragma once

#include <map>
#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "stedr/dataset.hpp"
#include "stedr/params.hpp"

namespace stedr::serial {

// --- JSON-Lines datasets: header line with generator metadata, then one
// sample per line with keys {x, t, y, mu0, mu1} (x nested for sequences). ---
void write_jsonl(const synth::SyntheticDataset& ds, const std::string& path);
void write_jsonl(const synth::SequentialDataset& ds, const std::string& path);
std::string to_jsonl(const synth::SyntheticDataset& ds);
std::string to_jsonl(const synth::SequentialDataset& ds);
SampleSet read_sampleset(const std::string& path);

// --- CSV covariate tables: first row names, comma separated. If
// `treatment_column` names an existing column it is split out. ---
struct CsvTable {
  std::vector<std::string> names;
  Eigen::MatrixXd values;
};
CsvTable read_csv(const std::string& path);
synth::CovariateTable split_treatment(const CsvTable& table,
                                      const std::string& treatment_column = "treatment");
void write_csv(const std::string& path, const std::vector<std::string>& names,
               const Eigen::MatrixXd& values);

// --- Checkpoint container: versioned binary map name -> (shape, row-major
// doubles) plus a JSON config blob and pr_t. Round-trips bit-exactly. ---
struct Checkpoint {
  std::string config_json;
  double pr_t = 0.5;
  ParamStore params;
};
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace stedr::serial
