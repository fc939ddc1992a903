#include "stedr/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace stedr::ad {

namespace {

void check_same_shape(const Node* a, const Node* b, const char* what) {
  if (a->rows() != b->rows() || a->cols() != b->cols())
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

}  // namespace

void Tape::backward(Node* loss) {
  if (loss->rows() != 1 || loss->cols() != 1)
    throw std::invalid_argument("backward: loss must be 1x1");
  for (auto& n : nodes_) {
    if (n->needs_grad) n->grad = Eigen::MatrixXd::Zero(n->rows(), n->cols());
  }
  if (!loss->needs_grad) return;  // loss does not depend on any tracked leaf
  loss->grad(0, 0) = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.needs_grad && n.back) n.back(n);
  }
}

void accumulate(Node* parent, const Eigen::MatrixXd& g) {
  if (parent->needs_grad) parent->grad += g;
}

static bool any_grad(std::initializer_list<Node*> ps) {
  for (Node* p : ps)
    if (p->needs_grad) return true;
  return false;
}

Node* add(Tape& t, Node* a, Node* b) {
  check_same_shape(a, b, "add");
  return t.op(a->val + b->val,
              [a, b](Node& n) {
                accumulate(a, n.grad);
                accumulate(b, n.grad);
              },
              any_grad({a, b}));
}

Node* sub(Tape& t, Node* a, Node* b) {
  check_same_shape(a, b, "sub");
  return t.op(a->val - b->val,
              [a, b](Node& n) {
                accumulate(a, n.grad);
                accumulate(b, -n.grad);
              },
              any_grad({a, b}));
}

Node* mul(Tape& t, Node* a, Node* b) {
  check_same_shape(a, b, "mul");
  return t.op(a->val.cwiseProduct(b->val),
              [a, b](Node& n) {
                accumulate(a, n.grad.cwiseProduct(b->val));
                accumulate(b, n.grad.cwiseProduct(a->val));
              },
              any_grad({a, b}));
}

Node* scale(Tape& t, Node* a, double c) {
  return t.op(a->val * c, [a, c](Node& n) { accumulate(a, n.grad * c); }, a->needs_grad);
}

Node* add_const(Tape& t, Node* a, double c) {
  return t.op(a->val.array() + c, [a](Node& n) { accumulate(a, n.grad); }, a->needs_grad);
}

Node* relu(Tape& t, Node* a) {
  return t.op(a->val.cwiseMax(0.0),
              [a](Node& n) {
                accumulate(a, (a->val.array() > 0.0).cast<double>().matrix().cwiseProduct(n.grad));
              },
              a->needs_grad);
}

Node* sigmoid(Tape& t, Node* a) {
  Eigen::MatrixXd y = a->val.unaryExpr([](double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  Node* out = t.op(std::move(y), nullptr, a->needs_grad);
  if (a->needs_grad) {
    Eigen::MatrixXd yv = out->val;
    out->back = [a, yv](Node& n) {
      accumulate(a, n.grad.cwiseProduct(yv.cwiseProduct((1.0 - yv.array()).matrix())));
    };
  }
  return out;
}

Node* exp_(Tape& t, Node* a) {
  Node* out = t.op(a->val.array().exp(), nullptr, a->needs_grad);
  if (a->needs_grad) {
    Eigen::MatrixXd yv = out->val;
    out->back = [a, yv](Node& n) { accumulate(a, n.grad.cwiseProduct(yv)); };
  }
  return out;
}

Node* log_(Tape& t, Node* a) {
  if ((a->val.array() <= 0.0).any()) throw std::domain_error("log_: non-positive input");
  return t.op(a->val.array().log(),
              [a](Node& n) { accumulate(a, n.grad.cwiseQuotient(a->val)); }, a->needs_grad);
}

Node* square(Tape& t, Node* a) {
  return t.op(a->val.array().square(),
              [a](Node& n) { accumulate(a, 2.0 * n.grad.cwiseProduct(a->val)); },
              a->needs_grad);
}

Node* rsqrt_eps(Tape& t, Node* a, double eps) {
  Eigen::MatrixXd y = (a->val.array() + eps).rsqrt();
  Node* out = t.op(std::move(y), nullptr, a->needs_grad);
  if (a->needs_grad) {
    Eigen::MatrixXd yv = out->val;
    out->back = [a, yv](Node& n) {
      accumulate(a, -0.5 * n.grad.cwiseProduct(yv.array().cube().matrix()));
    };
  }
  return out;
}

Node* sqrt_guarded(Tape& t, Node* a) {
  if ((a->val.array() < 0.0).any()) throw std::domain_error("sqrt_guarded: negative input");
  Eigen::MatrixXd y = a->val.array().sqrt();
  Node* out = t.op(std::move(y), nullptr, a->needs_grad);
  if (a->needs_grad) {
    Eigen::MatrixXd yv = out->val;
    out->back = [a, yv](Node& n) {
      accumulate(a, n.grad.cwiseQuotient(2.0 * yv.cwiseMax(1e-12)));
    };
  }
  return out;
}

Node* clamp(Tape& t, Node* a, double lo, double hi) {
  return t.op(a->val.cwiseMax(lo).cwiseMin(hi),
              [a, lo, hi](Node& n) {
                Eigen::MatrixXd inside =
                    ((a->val.array() >= lo) && (a->val.array() <= hi)).cast<double>();
                accumulate(a, n.grad.cwiseProduct(inside.matrix()));
              },
              a->needs_grad);
}

Node* vmax(Tape& t, Node* a, Node* b) {
  check_same_shape(a, b, "vmax");
  return t.op(a->val.cwiseMax(b->val),
              [a, b](Node& n) {
                Eigen::MatrixXd pick_a = (a->val.array() >= b->val.array()).cast<double>();
                accumulate(a, n.grad.cwiseProduct(pick_a.matrix()));
                accumulate(b, n.grad.cwiseProduct((1.0 - pick_a.array()).matrix()));
              },
              any_grad({a, b}));
}

Node* vmin(Tape& t, Node* a, Node* b) {
  check_same_shape(a, b, "vmin");
  return t.op(a->val.cwiseMin(b->val),
              [a, b](Node& n) {
                Eigen::MatrixXd pick_a = (a->val.array() <= b->val.array()).cast<double>();
                accumulate(a, n.grad.cwiseProduct(pick_a.matrix()));
                accumulate(b, n.grad.cwiseProduct((1.0 - pick_a.array()).matrix()));
              },
              any_grad({a, b}));
}

Node* matmul(Tape& t, Node* a, Node* b) {
  if (a->cols() != b->rows()) throw std::invalid_argument("matmul: inner dim mismatch");
  return t.op(a->val * b->val,
              [a, b](Node& n) {
                if (a->needs_grad) a->grad += n.grad * b->val.transpose();
                if (b->needs_grad) b->grad += a->val.transpose() * n.grad;
              },
              any_grad({a, b}));
}

Node* transpose(Tape& t, Node* a) {
  return t.op(a->val.transpose(), [a](Node& n) { accumulate(a, n.grad.transpose()); },
              a->needs_grad);
}

Node* concat_rows(Tape& t, const std::vector<Node*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index cols = parts[0]->cols(), rows = 0;
  for (Node* p : parts) {
    if (p->cols() != cols) throw std::invalid_argument("concat_rows: col mismatch");
    rows += p->rows();
  }
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index r = 0;
  for (Node* p : parts) {
    v.middleRows(r, p->rows()) = p->val;
    r += p->rows();
  }
  bool ng = false;
  for (Node* p : parts) ng = ng || p->needs_grad;
  std::vector<Node*> ps = parts;
  return t.op(std::move(v),
              [ps](Node& n) {
                Eigen::Index r = 0;
                for (Node* p : ps) {
                  if (p->needs_grad) p->grad += n.grad.middleRows(r, p->rows());
                  r += p->rows();
                }
              },
              ng);
}

Node* concat_cols(Tape& t, const std::vector<Node*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index rows = parts[0]->rows(), cols = 0;
  for (Node* p : parts) {
    if (p->rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p->cols();
  }
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index c = 0;
  for (Node* p : parts) {
    v.middleCols(c, p->cols()) = p->val;
    c += p->cols();
  }
  bool ng = false;
  for (Node* p : parts) ng = ng || p->needs_grad;
  std::vector<Node*> ps = parts;
  return t.op(std::move(v),
              [ps](Node& n) {
                Eigen::Index c = 0;
                for (Node* p : ps) {
                  if (p->needs_grad) p->grad += n.grad.middleCols(c, p->cols());
                  c += p->cols();
                }
              },
              ng);
}

Node* slice_cols(Tape& t, Node* a, Eigen::Index start, Eigen::Index len) {
  if (start < 0 || start + len > a->cols()) throw std::invalid_argument("slice_cols: out of range");
  return t.op(a->val.middleCols(start, len),
              [a, start, len](Node& n) {
                if (a->needs_grad) a->grad.middleCols(start, len) += n.grad;
              },
              a->needs_grad);
}

Node* gather_rows(Tape& t, Node* a, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd v(static_cast<Eigen::Index>(idx.size()), a->cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a->rows()) throw std::invalid_argument("gather_rows: bad index");
    v.row(static_cast<Eigen::Index>(i)) = a->val.row(idx[i]);
  }
  std::vector<Eigen::Index> ix = idx;
  return t.op(std::move(v),
              [a, ix](Node& n) {
                if (!a->needs_grad) return;
                for (std::size_t i = 0; i < ix.size(); ++i)
                  a->grad.row(ix[i]) += n.grad.row(static_cast<Eigen::Index>(i));
              },
              a->needs_grad);
}

Node* add_rowvec(Tape& t, Node* a, Node* v) {
  if (v->rows() != 1 || v->cols() != a->cols())
    throw std::invalid_argument("add_rowvec: v must be 1 x cols(a)");
  return t.op(a->val.rowwise() + v->val.row(0),
              [a, v](Node& n) {
                accumulate(a, n.grad);
                if (v->needs_grad) v->grad += n.grad.colwise().sum();
              },
              any_grad({a, v}));
}

Node* mul_rowvec(Tape& t, Node* a, Node* v) {
  if (v->rows() != 1 || v->cols() != a->cols())
    throw std::invalid_argument("mul_rowvec: v must be 1 x cols(a)");
  return t.op(a->val.array().rowwise() * v->val.row(0).array(),
              [a, v](Node& n) {
                if (a->needs_grad)
                  a->grad += (n.grad.array().rowwise() * v->val.row(0).array()).matrix();
                if (v->needs_grad)
                  v->grad += n.grad.cwiseProduct(a->val).colwise().sum();
              },
              any_grad({a, v}));
}

Node* sub_colvec(Tape& t, Node* a, Node* c) {
  if (c->cols() != 1 || c->rows() != a->rows())
    throw std::invalid_argument("sub_colvec: c must be rows(a) x 1");
  return t.op(a->val.colwise() - c->val.col(0),
              [a, c](Node& n) {
                accumulate(a, n.grad);
                if (c->needs_grad) c->grad -= n.grad.rowwise().sum();
              },
              any_grad({a, c}));
}

Node* mul_colvec(Tape& t, Node* a, Node* c) {
  if (c->cols() != 1 || c->rows() != a->rows())
    throw std::invalid_argument("mul_colvec: c must be rows(a) x 1");
  return t.op(a->val.array().colwise() * c->val.col(0).array(),
              [a, c](Node& n) {
                if (a->needs_grad)
                  a->grad += (n.grad.array().colwise() * c->val.col(0).array()).matrix();
                if (c->needs_grad)
                  c->grad += n.grad.cwiseProduct(a->val).rowwise().sum();
              },
              any_grad({a, c}));
}

Node* sum(Tape& t, Node* a) {
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = a->val.sum();
  return t.op(std::move(v),
              [a](Node& n) {
                accumulate(a, Eigen::MatrixXd::Constant(a->rows(), a->cols(), n.grad(0, 0)));
              },
              a->needs_grad);
}

Node* mean_all(Tape& t, Node* a) {
  double cnt = static_cast<double>(a->rows() * a->cols());
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = a->val.sum() / cnt;
  return t.op(std::move(v),
              [a, cnt](Node& n) {
                accumulate(a,
                           Eigen::MatrixXd::Constant(a->rows(), a->cols(), n.grad(0, 0) / cnt));
              },
              a->needs_grad);
}

Node* row_sum(Tape& t, Node* a) {
  return t.op(a->val.rowwise().sum(),
              [a](Node& n) {
                if (a->needs_grad)
                  a->grad += n.grad.col(0).replicate(1, a->cols());
              },
              a->needs_grad);
}

Node* row_mean(Tape& t, Node* a) {
  double c = static_cast<double>(a->cols());
  return t.op(a->val.rowwise().sum() / c,
              [a, c](Node& n) {
                if (a->needs_grad)
                  a->grad += n.grad.col(0).replicate(1, a->cols()) / c;
              },
              a->needs_grad);
}

Node* softmax_rows(Tape& t, Node* a, const Eigen::RowVectorXd* col_mask) {
  Eigen::MatrixXd y(a->rows(), a->cols());
  for (Eigen::Index r = 0; r < a->rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < a->cols(); ++c) {
      if (col_mask && (*col_mask)(c) == 0.0) continue;
      mx = std::max(mx, a->val(r, c));
    }
    if (!std::isfinite(mx)) throw std::invalid_argument("softmax_rows: all columns masked");
    double z = 0.0;
    for (Eigen::Index c = 0; c < a->cols(); ++c) {
      double e = (col_mask && (*col_mask)(c) == 0.0) ? 0.0 : std::exp(a->val(r, c) - mx);
      y(r, c) = e;
      z += e;
    }
    y.row(r) /= z;
  }
  Node* out = t.op(std::move(y), nullptr, a->needs_grad);
  if (a->needs_grad) {
    Eigen::MatrixXd yv = out->val;
    out->back = [a, yv](Node& n) {
      // dx_r = y_r * (g_r - <g_r, y_r>); masked cols have y = 0 -> no grad
      Eigen::VectorXd dot = n.grad.cwiseProduct(yv).rowwise().sum();
      for (Eigen::Index r = 0; r < yv.rows(); ++r)
        a->grad.row(r) += yv.row(r).cwiseProduct(
            n.grad.row(r) - Eigen::RowVectorXd::Constant(yv.cols(), dot(r)));
    };
  }
  return out;
}

Node* log_softmax_rows(Tape& t, Node* a) {
  Eigen::MatrixXd y(a->rows(), a->cols());
  for (Eigen::Index r = 0; r < a->rows(); ++r) {
    double mx = a->val.row(r).maxCoeff();
    double z = (a->val.row(r).array() - mx).exp().sum();
    y.row(r) = a->val.row(r).array() - mx - std::log(z);
  }
  Node* out = t.op(std::move(y), nullptr, a->needs_grad);
  if (a->needs_grad) {
    Eigen::MatrixXd sm = out->val.array().exp();
    out->back = [a, sm](Node& n) {
      Eigen::VectorXd rowsum = n.grad.rowwise().sum();
      Eigen::MatrixXd dx = n.grad - (sm.array().colwise() * rowsum.array()).matrix();
      a->grad += dx;
    };
  }
  return out;
}

Node* logsumexp_rows(Tape& t, Node* a) {
  Eigen::MatrixXd v(a->rows(), 1);
  for (Eigen::Index r = 0; r < a->rows(); ++r) {
    double mx = a->val.row(r).maxCoeff();
    v(r, 0) = mx + std::log((a->val.row(r).array() - mx).exp().sum());
  }
  Node* out = t.op(std::move(v), nullptr, a->needs_grad);
  if (a->needs_grad) {
    Eigen::MatrixXd lse = out->val;
    out->back = [a, lse](Node& n) {
      for (Eigen::Index r = 0; r < a->rows(); ++r)
        a->grad.row(r) +=
            n.grad(r, 0) * (a->val.row(r).array() - lse(r, 0)).exp().matrix();
    };
  }
  return out;
}

Node* bce_with_logits(Tape& t, Node* logits, const Eigen::MatrixXd& targets) {
  if (logits->rows() != targets.rows() || logits->cols() != targets.cols())
    throw std::invalid_argument("bce_with_logits: shape mismatch");
  // loss = max(l,0) - l*y + log(1 + exp(-|l|))
  Eigen::MatrixXd v(logits->rows(), logits->cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r)
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      double l = logits->val(r, c);
      v(r, c) = std::max(l, 0.0) - l * targets(r, c) + std::log1p(std::exp(-std::abs(l)));
    }
  Eigen::MatrixXd y = targets;
  return t.op(std::move(v),
              [logits, y](Node& n) {
                if (!logits->needs_grad) return;
                for (Eigen::Index r = 0; r < y.rows(); ++r)
                  for (Eigen::Index c = 0; c < y.cols(); ++c) {
                    double l = logits->val(r, c);
                    double s = l >= 0.0 ? 1.0 / (1.0 + std::exp(-l))
                                        : std::exp(l) / (1.0 + std::exp(l));
                    logits->grad(r, c) += n.grad(r, c) * (s - y(r, c));
                  }
              },
              logits->needs_grad);
}

Node* layer_norm_rows(Tape& t, Node* a, Node* gamma, Node* beta, double eps) {
  Node* m = row_mean(t, a);
  Node* centered = sub_colvec(t, a, m);
  Node* var = row_mean(t, square(t, centered));
  Node* inv_std = rsqrt_eps(t, var, eps);
  Node* normalized = mul_colvec(t, centered, inv_std);
  return add_rowvec(t, mul_rowvec(t, normalized, gamma), beta);
}

Node* per_group_matvec(Tape& t, Node* w, const Eigen::MatrixXd& d, Eigen::Index p) {
  const Eigen::Index m_groups = d.cols();
  const Eigen::Index span = d.rows();
  if (w->cols() != span || w->rows() != m_groups * p)
    throw std::invalid_argument("per_group_matvec: W must be (M*p) x L with L = rows(D)");
  Eigen::MatrixXd v(m_groups, p);
  for (Eigen::Index m = 0; m < m_groups; ++m)
    v.row(m) = (w->val.middleRows(m * p, p) * d.col(m)).transpose();
  Eigen::MatrixXd dc = d;
  return t.op(std::move(v),
              [w, dc, p](Node& n) {
                if (!w->needs_grad) return;
                for (Eigen::Index m = 0; m < dc.cols(); ++m)
                  w->grad.middleRows(m * p, p) += n.grad.row(m).transpose() * dc.col(m).transpose();
              },
              w->needs_grad);
}

}  // namespace stedr::ad
