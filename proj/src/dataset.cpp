#include "stedr/dataset.hpp"

namespace stedr {

VisitSequence static_visit(const std::vector<double>& covariates) {
  VisitSequence seq;
  seq.codes.resize(1, static_cast<Eigen::Index>(covariates.size()));
  for (std::size_t j = 0; j < covariates.size(); ++j)
    seq.codes(0, static_cast<Eigen::Index>(j)) = covariates[j];
  seq.times = Eigen::VectorXd::Zero(1);
  seq.valid_mask = Eigen::VectorXd::Ones(1);
  return seq;
}

VisitSequence static_visit(const Eigen::RowVectorXd& covariates) {
  std::vector<double> v(covariates.begin(), covariates.end());
  return static_visit(v);
}

SampleSet from_synthetic(const synth::SyntheticDataset& ds) {
  SampleSet set;
  set.covariate_names = ds.covariate_names;
  set.sequential = false;
  set.has_truth = true;
  set.samples.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    TrainSample ts;
    ts.seq = static_visit(s.covariates);
    ts.treatment = s.treatment;
    ts.y = s.observed_outcome;
    ts.mu0 = s.mu0;
    ts.mu1 = s.mu1;
    ts.has_truth = true;
    set.samples.push_back(std::move(ts));
  }
  return set;
}

SampleSet from_sequential(const synth::SequentialDataset& ds) {
  SampleSet set;
  for (int j = 0; j < ds.config.covariate_dim; ++j)
    set.covariate_names.push_back("x" + std::to_string(j));
  set.sequential = true;
  set.has_truth = true;
  set.samples.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    TrainSample ts;
    const Eigen::Index t_len = s.covariate_history.rows();
    ts.seq.codes = s.covariate_history;
    ts.seq.times.resize(t_len);
    for (Eigen::Index t = 0; t < t_len; ++t)
      ts.seq.times(t) = static_cast<double>(t_len - 1 - t);  // days before the last step
    ts.seq.valid_mask = Eigen::VectorXd::Ones(t_len);
    ts.treatment = s.treatment;
    ts.y = s.observed_outcome;
    ts.mu0 = s.mu0;
    ts.mu1 = s.mu1;
    ts.has_truth = true;
    set.samples.push_back(std::move(ts));
  }
  return set;
}

}  // namespace stedr
