#pragma once

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

#include "stedr/common.hpp"
#include "stedr/tape.hpp"

namespace stedr {

// Named parameter arrays. Insertion order is preserved so that optimizer
// updates and checkpoint layout are deterministic.
class ParamStore {
 public:
  Eigen::MatrixXd& add(const std::string& name, Eigen::MatrixXd init);
  Eigen::MatrixXd& at(const std::string& name);
  const Eigen::MatrixXd& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t count_scalars() const;
  bool all_finite() const;

  // Registers every parameter as a gradient-tracked leaf on the tape.
  struct TapeView {
    std::map<std::string, ad::Node*> nodes;
    ad::Node* operator[](const std::string& name) const;
  };
  TapeView on_tape(ad::Tape& tape, bool needs_grad = true) const;

  // Accumulated gradients from a backward pass, keyed like the store.
  void copy_grads_from(const TapeView& view, std::map<std::string, Eigen::MatrixXd>& grads) const;

 private:
  std::vector<std::string> names_;
  std::map<std::string, Eigen::MatrixXd> values_;
  std::map<std::string, std::size_t> index_;
};

// Glorot-uniform weight init.
Eigen::MatrixXd glorot(Rng& rng, Eigen::Index rows, Eigen::Index cols);

enum class OptimizerKind { adam, sgd };

// Adaptive-moment optimizer (plain gradient descent available for comparison).
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8)
      : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& params, const std::map<std::string, Eigen::MatrixXd>& grads);

 private:
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Eigen::MatrixXd> m_, v_;
};

}  // namespace stedr
