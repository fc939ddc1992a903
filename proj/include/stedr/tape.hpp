#pragma once

// Reverse-mode autodiff over Eigen matrices. A Tape owns every node created
// during one forward pass; creation order is a valid topological order, so
// backward() is a single reverse sweep. Nodes are tape-owned raw pointers —
// do not keep them past the tape's lifetime.

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <vector>

namespace stedr::ad {

struct Node {
  Eigen::MatrixXd val;
  Eigen::MatrixXd grad;  // sized lazily at backward()
  std::function<void(Node&)> back;  // pulls node.grad into parents
  bool needs_grad = false;

  Eigen::Index rows() const { return val.rows(); }
  Eigen::Index cols() const { return val.cols(); }
  double scalar() const { return val(0, 0); }
};

class Tape {
 public:
  Node* leaf(Eigen::MatrixXd v, bool needs_grad = false) {
    auto n = std::make_unique<Node>();
    n->val = std::move(v);
    n->needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return nodes_.back().get();
  }

  Node* constant(Eigen::MatrixXd v) { return leaf(std::move(v), false); }
  Node* scalar(double v) {
    Eigen::MatrixXd m(1, 1);
    m(0, 0) = v;
    return leaf(std::move(m), false);
  }

  Node* op(Eigen::MatrixXd v, std::function<void(Node&)> back, bool needs_grad) {
    Node* n = leaf(std::move(v), needs_grad);
    if (needs_grad) n->back = std::move(back);
    return n;
  }

  // Seeds `loss` (1x1) with gradient 1 and sweeps the tape in reverse.
  void backward(Node* loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
};

void accumulate(Node* parent, const Eigen::MatrixXd& g);

// --- elementwise / arithmetic ---
Node* add(Tape& t, Node* a, Node* b);
Node* sub(Tape& t, Node* a, Node* b);
Node* mul(Tape& t, Node* a, Node* b);  // elementwise
Node* scale(Tape& t, Node* a, double c);
Node* add_const(Tape& t, Node* a, double c);
Node* relu(Tape& t, Node* a);
Node* sigmoid(Tape& t, Node* a);
Node* exp_(Tape& t, Node* a);
Node* log_(Tape& t, Node* a);        // requires val > 0
Node* square(Tape& t, Node* a);
Node* rsqrt_eps(Tape& t, Node* a, double eps);  // 1/sqrt(x + eps)
Node* sqrt_guarded(Tape& t, Node* a);           // value exact; grad clamped near 0
Node* clamp(Tape& t, Node* a, double lo, double hi);  // zero grad outside
Node* vmax(Tape& t, Node* a, Node* b);  // elementwise; tie -> a
Node* vmin(Tape& t, Node* a, Node* b);

// --- linear algebra / shape ---
Node* matmul(Tape& t, Node* a, Node* b);
Node* transpose(Tape& t, Node* a);
Node* concat_rows(Tape& t, const std::vector<Node*>& parts);
Node* concat_cols(Tape& t, const std::vector<Node*>& parts);
Node* slice_cols(Tape& t, Node* a, Eigen::Index start, Eigen::Index len);
Node* gather_rows(Tape& t, Node* a, const std::vector<Eigen::Index>& idx);

// --- broadcast ---
Node* add_rowvec(Tape& t, Node* a, Node* v);  // v is 1 x cols, added to each row
Node* mul_rowvec(Tape& t, Node* a, Node* v);  // v is 1 x cols
Node* sub_colvec(Tape& t, Node* a, Node* c);  // c is rows x 1, subtracted per row
Node* mul_colvec(Tape& t, Node* a, Node* c);  // c is rows x 1

// --- reductions ---
Node* sum(Tape& t, Node* a);       // 1x1
Node* mean_all(Tape& t, Node* a);  // 1x1
Node* row_sum(Tape& t, Node* a);   // n x 1
Node* row_mean(Tape& t, Node* a);  // n x 1

// --- softmax family ---
// Row-wise softmax. Optional column mask (1 x cols of 0/1): masked columns get
// exactly 0 and receive no gradient. Each row must keep at least one live col.
Node* softmax_rows(Tape& t, Node* a, const Eigen::RowVectorXd* col_mask = nullptr);
Node* log_softmax_rows(Tape& t, Node* a);
Node* logsumexp_rows(Tape& t, Node* a);  // n x 1

// Numerically stable binary cross-entropy against constant 0/1 targets,
// elementwise over logits.
Node* bce_with_logits(Tape& t, Node* logits, const Eigen::MatrixXd& targets);

// --- composite layers ---
// Row-wise layer norm with learned gain/bias (1 x cols each).
Node* layer_norm_rows(Tape& t, Node* a, Node* gamma, Node* beta, double eps = 1e-5);

// Per-group mat-vec used by the per-code embedders: W is (M*p) x L, D is
// L x M (column m = padded occurrence vector of code m, constant). Output is
// M x p with row m = W.block(m*p,0,p,L) * D.col(m).
Node* per_group_matvec(Tape& t, Node* w, const Eigen::MatrixXd& d, Eigen::Index p);

}  // namespace stedr::ad
