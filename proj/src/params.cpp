#include "stedr/params.hpp"

#include <cmath>
#include <stdexcept>

namespace stedr {

Eigen::MatrixXd& ParamStore::add(const std::string& name, Eigen::MatrixXd init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter: " + name);
  index_[name] = names_.size();
  names_.push_back(name);
  return values_[name] = std::move(init);
}

Eigen::MatrixXd& ParamStore::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

const Eigen::MatrixXd& ParamStore::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::count_scalars() const {
  std::size_t n = 0;
  for (const auto& name : names_) n += static_cast<std::size_t>(at(name).size());
  return n;
}

bool ParamStore::all_finite() const {
  for (const auto& name : names_)
    if (!at(name).allFinite()) return false;
  return true;
}

ad::Node* ParamStore::TapeView::operator[](const std::string& name) const {
  auto it = nodes.find(name);
  if (it == nodes.end()) throw std::invalid_argument("parameter not on tape: " + name);
  return it->second;
}

ParamStore::TapeView ParamStore::on_tape(ad::Tape& tape, bool needs_grad) const {
  TapeView view;
  for (const auto& name : names_) view.nodes[name] = tape.leaf(at(name), needs_grad);
  return view;
}

void ParamStore::copy_grads_from(const TapeView& view,
                                 std::map<std::string, Eigen::MatrixXd>& grads) const {
  grads.clear();
  for (const auto& name : names_) grads[name] = view[name]->grad;
}

Eigen::MatrixXd glorot(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Eigen::MatrixXd w(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = rng.uniform(-a, a);
  return w;
}

void Optimizer::step(ParamStore& params, const std::map<std::string, Eigen::MatrixXd>& grads) {
  ++t_;
  for (const auto& name : params.names()) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Eigen::MatrixXd& g = git->second;
    Eigen::MatrixXd& w = params.at(name);
    if (kind_ == OptimizerKind::sgd) {
      w -= lr_ * g;
      continue;
    }
    Eigen::MatrixXd& m = m_.try_emplace(name, Eigen::MatrixXd::Zero(w.rows(), w.cols())).first->second;
    Eigen::MatrixXd& v = v_.try_emplace(name, Eigen::MatrixXd::Zero(w.rows(), w.cols())).first->second;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    Eigen::MatrixXd mhat = m / bc1;
    Eigen::MatrixXd vhat = v / bc2;
    w -= lr_ * mhat.cwiseQuotient((vhat.array().sqrt() + eps_).matrix());
  }
}

}  // namespace stedr
