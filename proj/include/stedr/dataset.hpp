#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "stedr/synth.hpp"

namespace stedr {

// One patient's longitudinal covariate matrix. Rows are visits in order of
// occurrence; `times` holds nonnegative days-before-index (nonincreasing,
// zero at the index date); masked rows are all-zero and their times ignored.
struct VisitSequence {
  Eigen::MatrixXd codes;      // T x M
  Eigen::VectorXd times;      // length T
  Eigen::VectorXd valid_mask; // length T, entries 0/1

  Eigen::Index visits() const { return codes.rows(); }
  Eigen::Index width() const { return codes.cols(); }
};

// Wraps a static d-dimensional sample as a single-visit sequence so one code
// path serves every benchmark.
VisitSequence static_visit(const std::vector<double>& covariates);
VisitSequence static_visit(const Eigen::RowVectorXd& covariates);

struct TrainSample {
  VisitSequence seq;
  int treatment = 0;
  double y = 0.0;
  double mu0 = 0.0, mu1 = 0.0;
  bool has_truth = false;
  double true_effect() const { return mu1 - mu0; }
};

struct SampleSet {
  std::vector<TrainSample> samples;
  std::vector<std::string> covariate_names;
  bool sequential = false;
  bool has_truth = false;

  std::size_t size() const { return samples.size(); }
  Eigen::Index width() const { return samples.empty() ? 0 : samples[0].seq.width(); }
};

SampleSet from_synthetic(const synth::SyntheticDataset& ds);
SampleSet from_sequential(const synth::SequentialDataset& ds);

}  // namespace stedr
