#include <cvlm/autodiff.hpp>

#include <cmath>
#include <string>

#include <cvlm/lowrank_cov.hpp>
#include <cvlm/special_functions.hpp>

namespace cvlm::ad {

// ---------------------------------------------------------------------------
// Var

bool Var::valid() const noexcept { return tape_ != nullptr && tape_->owns(*this); }

const Matrix& Var::value() const {
  if (!valid()) throw StateError("Var: handle is empty or belongs to a cleared tape");
  return tape_->value(id_);
}

Matrix Var::grad() const {
  if (!valid()) throw StateError("Var: handle is empty or belongs to a cleared tape");
  return tape_->grad(id_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("Var::scalar: value is not 1 x 1");
  return v(0, 0);
}

Tape& Var::tape() const {
  if (!valid()) throw StateError("Var: handle is empty or belongs to a cleared tape");
  return *tape_;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Node node) {
  const int id = static_cast<int>(nodes_.size());
  if (check_finite_ && !node.value.allFinite()) {
    throw NumericError("non-finite value produced by node #" + std::to_string(id) + " (" + node.op + ")");
  }
  nodes_.push_back(std::move(node));
  return Var(this, id, generation_);
}

void Tape::check(const Var& v, const char* what) const {
  if (!owns(v)) {
    throw StateError(std::string(what) + ": operand is empty, stale, or from another tape");
  }
}

Var Tape::constant(Matrix value, const char* name) {
  Node n{name, std::move(value), {}, false, false, {}, nullptr};
  return push(std::move(n));
}

Var Tape::input(Matrix value, const char* name) {
  Node n{name, std::move(value), {}, false, true, {}, nullptr};
  return push(std::move(n));
}

Var Tape::parameter(Parameter& p) {
  Node n{"parameter", p.value, {}, false, true, {}, &p};
  return push(std::move(n));
}

Var Tape::record(const char* op, Matrix value, std::span<const Var> parents, BackwardFn fn) {
  bool any_grad = false;
  for (const Var& p : parents) {
    check(p, op);
    any_grad = any_grad || needs_grad(p.id());
  }
  Node n{op, std::move(value), {}, false, any_grad, any_grad ? std::move(fn) : BackwardFn{}, nullptr};
  return push(std::move(n));
}

Matrix Tape::grad(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.has_grad) return n.grad;
  return Matrix::Zero(n.value.rows(), n.value.cols());
}

void Tape::backward(const Var& output, double seed) {
  if (!owns(output)) throw StateError("backward: no forward record for this output");
  for (Node& n : nodes_) n.has_grad = false;
  Node& out = nodes_[static_cast<std::size_t>(output.id())];
  if (!out.requires_grad) return;
  out.grad = Matrix::Constant(out.value.rows(), out.value.cols(), seed);
  out.has_grad = true;
  for (int i = output.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad || !n.backward) continue;
    n.backward(n.grad, *this, i);
  }
  for (Node& n : nodes_) {
    if (n.param != nullptr && n.has_grad) {
      if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols()) {
        n.param->grad.setZero(n.grad.rows(), n.grad.cols());
      }
      n.param->grad += n.grad;
    }
  }
}

void Tape::clear() {
  nodes_.clear();
  ++generation_;
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix v = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(v), {a, b}, [ia, ib](const Matrix& g, Tape& t, int) {
    if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var operator+(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return a.tape().record("add", a.value() + b.value(), {a, b}, [ia, ib](const Matrix& g, Tape& t, int) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var operator-(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape().record("sub", a.value() - b.value(), {a, b}, [ia, ib](const Matrix& g, Tape& t, int) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var operator*(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  Matrix v = a.value().cwiseProduct(b.value());
  return a.tape().record("mul", std::move(v), {a, b}, [ia, ib](const Matrix& g, Tape& t, int) {
    if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.needs_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var operator/(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  const int ia = a.id(), ib = b.id();
  Matrix v = a.value().cwiseQuotient(b.value());
  return a.tape().record("div", std::move(v), {a, b}, [ia, ib](const Matrix& g, Tape& t, int self) {
    if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseQuotient(t.value(ib)));
    if (t.needs_grad(ib)) {
      t.accumulate(ib, -(g.cwiseProduct(t.value(self))).cwiseQuotient(t.value(ib)));
    }
  });
}

Var operator*(double c, const Var& x) {
  const int ix = x.id();
  return x.tape().record("scale", c * x.value(), {x}, [ix, c](const Matrix& g, Tape& t, int) {
    t.accumulate(ix, c * g);
  });
}

Var operator-(const Var& x) { return -1.0 * x; }

Var add_scalar(const Var& x, double c) {
  const int ix = x.id();
  Matrix v = x.value().array() + c;
  return x.tape().record("add_scalar", std::move(v), {x}, [ix](const Matrix& g, Tape& t, int) {
    t.accumulate(ix, g);
  });
}

Var add_bias(const Var& x, const Var& bias) {
  if (bias.cols() != 1 || bias.rows() != x.rows()) throw ShapeError("add_bias: bias must be rows x 1");
  const int ix = x.id(), ib = bias.id();
  Matrix v = x.value().colwise() + bias.value().col(0);
  return x.tape().record("add_bias", std::move(v), {x, bias}, [ix, ib](const Matrix& g, Tape& t, int) {
    t.accumulate(ix, g);
    if (t.needs_grad(ib)) t.accumulate(ib, g.rowwise().sum());
  });
}

Var scale_rows(const Var& x, const Var& s) {
  if (s.cols() != 1 || s.rows() != x.rows()) throw ShapeError("scale_rows: scale must be rows x 1");
  const int ix = x.id(), is = s.id();
  Matrix v = s.value().col(0).asDiagonal() * x.value();
  return x.tape().record("scale_rows", std::move(v), {x, s}, [ix, is](const Matrix& g, Tape& t, int) {
    if (t.needs_grad(ix)) t.accumulate(ix, t.value(is).col(0).asDiagonal() * g);
    if (t.needs_grad(is)) t.accumulate(is, g.cwiseProduct(t.value(ix)).rowwise().sum());
  });
}

Var exp(const Var& x) {
  const int ix = x.id();
  Matrix v = x.value().array().exp();
  return x.tape().record("exp", std::move(v), {x}, [ix](const Matrix& g, Tape& t, int self) {
    t.accumulate(ix, g.cwiseProduct(t.value(self)));
  });
}

Var log(const Var& x) {
  const int ix = x.id();
  Matrix v = x.value().array().log();
  return x.tape().record("log", std::move(v), {x}, [ix](const Matrix& g, Tape& t, int) {
    t.accumulate(ix, g.cwiseQuotient(t.value(ix)));
  });
}

Var tanh(const Var& x) {
  const int ix = x.id();
  Matrix v = x.value().array().tanh();
  return x.tape().record("tanh", std::move(v), {x}, [ix](const Matrix& g, Tape& t, int self) {
    const auto y = t.value(self).array();
    t.accumulate(ix, (g.array() * (1.0 - y.square())).matrix());
  });
}

Var sigmoid(const Var& x) {
  const int ix = x.id();
  Matrix v = (1.0 + (-x.value().array()).exp()).inverse();
  return x.tape().record("sigmoid", std::move(v), {x}, [ix](const Matrix& g, Tape& t, int self) {
    const auto y = t.value(self).array();
    t.accumulate(ix, (g.array() * y * (1.0 - y)).matrix());
  });
}

Var square(const Var& x) {
  const int ix = x.id();
  Matrix v = x.value().array().square();
  return x.tape().record("square", std::move(v), {x}, [ix](const Matrix& g, Tape& t, int) {
    t.accumulate(ix, 2.0 * g.cwiseProduct(t.value(ix)));
  });
}

Var relu_floor(const Var& x, double floor) {
  if (!(floor > 0.0)) throw DomainError("relu_floor: floor must be positive");
  const int ix = x.id();
  Matrix v = x.value().cwiseMax(floor);
  return x.tape().record("relu_floor", std::move(v), {x}, [ix, floor](const Matrix& g, Tape& t, int) {
    t.accumulate(ix, (t.value(ix).array() > floor).select(g, 0.0));
  });
}

Var sum(const Var& x) {
  const int ix = x.id();
  Matrix v(1, 1);
  v(0, 0) = x.value().sum();
  return x.tape().record("sum", std::move(v), {x}, [ix](const Matrix& g, Tape& t, int) {
    const Matrix& xv = t.value(ix);
    t.accumulate(ix, Matrix::Constant(xv.rows(), xv.cols(), g(0, 0)));
  });
}

Var col_sums(const Var& x) {
  const int ix = x.id();
  Matrix v = x.value().colwise().sum();
  return x.tape().record("col_sums", std::move(v), {x}, [ix](const Matrix& g, Tape& t, int) {
    t.accumulate(ix, g.replicate(t.value(ix).rows(), 1));
  });
}

Var broadcast_rows(const Var& x, Index n) {
  if (x.rows() != 1) throw ShapeError("broadcast_rows: input must have one row");
  const int ix = x.id();
  Matrix v = x.value().replicate(n, 1);
  return x.tape().record("broadcast_rows", std::move(v), {x}, [ix](const Matrix& g, Tape& t, int) {
    t.accumulate(ix, g.colwise().sum());
  });
}

Var slice_rows(const Var& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw ShapeError("slice_rows: out of range");
  const int ix = x.id();
  Matrix v = x.value().middleRows(start, count);
  return x.tape().record("slice_rows", std::move(v), {x}, [ix, start, count](const Matrix& g, Tape& t, int) {
    const Matrix& xv = t.value(ix);
    Matrix full = Matrix::Zero(xv.rows(), xv.cols());
    full.middleRows(start, count) = g;
    t.accumulate(ix, full);
  });
}

Var slice_cols(const Var& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw ShapeError("slice_cols: out of range");
  const int ix = x.id();
  Matrix v = x.value().middleCols(start, count);
  return x.tape().record("slice_cols", std::move(v), {x}, [ix, start, count](const Matrix& g, Tape& t, int) {
    const Matrix& xv = t.value(ix);
    Matrix full = Matrix::Zero(xv.rows(), xv.cols());
    full.middleCols(start, count) = g;
    t.accumulate(ix, full);
  });
}

Var concat_rows(const Var& top, const Var& bottom) {
  if (top.cols() != bottom.cols()) throw ShapeError("concat_rows: column counts differ");
  const int it = top.id(), ib = bottom.id();
  const Index rt = top.rows(), rb = bottom.rows();
  Matrix v(rt + rb, top.cols());
  v.topRows(rt) = top.value();
  v.bottomRows(rb) = bottom.value();
  return top.tape().record("concat_rows", std::move(v), {top, bottom},
                           [it, ib, rt, rb](const Matrix& g, Tape& t, int) {
                             if (t.needs_grad(it)) t.accumulate(it, g.topRows(rt));
                             if (t.needs_grad(ib)) t.accumulate(ib, g.bottomRows(rb));
                           });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const Index rows = parts.front().rows();
  Index cols = 0;
  std::vector<int> ids;
  std::vector<Index> widths;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    ids.push_back(p.id());
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Matrix v(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape().record(
      "concat_cols", std::move(v), parts,
      [ids = std::move(ids), widths = std::move(widths)](const Matrix& g, Tape& t, int) {
        Index offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.needs_grad(ids[k])) t.accumulate(ids[k], g.middleCols(offset, widths[k]));
          offset += widths[k];
        }
      });
}

Var gather_cols(const Var& table, std::span<const int> ids) {
  const Matrix& tv = table.value();
  Matrix v(tv.rows(), static_cast<Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (ids[j] < 0 || ids[j] >= tv.cols()) {
      throw InputError("gather_cols: id " + std::to_string(ids[j]) + " outside [0, " +
                       std::to_string(tv.cols()) + ")");
    }
    v.col(static_cast<Index>(j)) = tv.col(ids[j]);
  }
  const int it = table.id();
  return table.tape().record(
      "gather_cols", std::move(v), {table},
      [it, idx = std::vector<int>(ids.begin(), ids.end())](const Matrix& g, Tape& t, int) {
        const Matrix& tv = t.value(it);
        Matrix full = Matrix::Zero(tv.rows(), tv.cols());
        for (std::size_t j = 0; j < idx.size(); ++j) full.col(idx[j]) += g.col(static_cast<Index>(j));
        t.accumulate(it, full);
      });
}

Var normal_cdf(const Var& x) {
  const int ix = x.id();
  Matrix v = x.value().unaryExpr([](double s) { return std_normal_cdf(s).value(); });
  return x.tape().record("normal_cdf", std::move(v), {x}, [ix](const Matrix& g, Tape& t, int) {
    t.accumulate(ix, g.cwiseProduct(t.value(ix).unaryExpr([](double s) { return std_normal_pdf(s); })));
  });
}

Var normal_quantile(const Var& u) {
  const int iu = u.id();
  Matrix v = u.value().unaryExpr([](double p) { return std_normal_quantile(p); });
  return u.tape().record("normal_quantile", std::move(v), {u}, [iu](const Matrix& g, Tape& t, int self) {
    t.accumulate(iu, g.cwiseQuotient(t.value(self).unaryExpr([](double s) { return std_normal_pdf(s); })));
  });
}

namespace {

DiagRankOneCov<double> column_cov(const Matrix& w, const Matrix& a, Index j) {
  return DiagRankOneCov<double>(w.col(j), a.col(j));
}

void require_cov_operands(const Var& w, const Var& a, const char* op) {
  require_same_shape(w, a, op);
}

}  // namespace

Var rank_one_cholesky(const Var& w, const Var& a) {
  require_cov_operands(w, a, "rank_one_cholesky");
  const Index d = w.rows(), batch = w.cols();
  Matrix v(2 * d, batch);
  for (Index j = 0; j < batch; ++j) {
    const auto terms = rank_one_cholesky_terms(column_cov(w.value(), a.value(), j));
    v.col(j).head(d) = terms.diag;
    v.col(j).tail(d) = terms.g;
  }
  const int iw = w.id(), ia = a.id();
  return w.tape().record("rank_one_cholesky", std::move(v), {w, a}, [iw, ia, d](const Matrix& g, Tape& t, int) {
    const Matrix& wv = t.value(iw);
    const Matrix& av = t.value(ia);
    Matrix gw(d, wv.cols()), ga(d, wv.cols());
    for (Index j = 0; j < wv.cols(); ++j) {
      const auto terms = rank_one_cholesky_terms(column_cov(wv, av, j));
      double rho_bar_next = 0.0;
      for (Index k = d - 1; k >= 0; --k) {
        const double rho = terms.rho[k], p = terms.pivot[k], s = terms.diag[k];
        const double ak = av(k, j), wk = wv(k, j);
        const double s_bar = g(k, j), g_bar = g(d + k, j);
        const double p_bar = s_bar / (2.0 * s) - g_bar * rho * ak / (2.0 * p * s) -
                             rho_bar_next * rho * wk / (p * p);
        gw(k, j) = p_bar + rho_bar_next * rho / p;
        ga(k, j) = p_bar * 2.0 * rho * ak + g_bar * rho / s;
        rho_bar_next = p_bar * ak * ak + g_bar * ak / s + rho_bar_next * wk / p;
      }
    }
    t.accumulate(iw, gw);
    t.accumulate(ia, ga);
  });
}

Var rank_one_lower_matvec(const Var& factor, const Var& a, const Var& eps) {
  require_same_shape(a, eps, "rank_one_lower_matvec");
  const Index d = a.rows(), batch = a.cols();
  if (factor.rows() != 2 * d || factor.cols() != batch) {
    throw ShapeError("rank_one_lower_matvec: factor must be 2d x B");
  }
  const Matrix& f = factor.value();
  const Matrix& av = a.value();
  const Matrix& ev = eps.value();
  Matrix v(d, batch);
  for (Index j = 0; j < batch; ++j) {
    double prefix = 0.0;
    for (Index i = 0; i < d; ++i) {
      v(i, j) = f(i, j) * ev(i, j) + av(i, j) * prefix;
      prefix += f(d + i, j) * ev(i, j);
    }
  }
  const int iff = factor.id(), ia = a.id(), ie = eps.id();
  return a.tape().record(
      "rank_one_lower_matvec", std::move(v), {factor, a, eps}, [iff, ia, ie, d](const Matrix& g, Tape& t, int) {
        const Matrix& f = t.value(iff);
        const Matrix& av = t.value(ia);
        const Matrix& ev = t.value(ie);
        const Index batch = av.cols();
        Matrix gf(2 * d, batch), ga(d, batch), ge(d, batch);
        Eigen::VectorXd prefix(d);
        for (Index j = 0; j < batch; ++j) {
          double acc = 0.0;
          for (Index i = 0; i < d; ++i) {
            prefix[i] = acc;
            acc += f(d + i, j) * ev(i, j);
          }
          double suffix = 0.0;  // sum_{m > i} qbar_m a_m
          for (Index i = d - 1; i >= 0; --i) {
            const double qb = g(i, j);
            gf(i, j) = qb * ev(i, j);
            gf(d + i, j) = ev(i, j) * suffix;
            ga(i, j) = qb * prefix[i];
            ge(i, j) = qb * f(i, j) + f(d + i, j) * suffix;
            suffix += qb * av(i, j);
          }
        }
        t.accumulate(iff, gf);
        t.accumulate(ia, ga);
        t.accumulate(ie, ge);
      });
}

Var lowrank_log_det(const Var& w, const Var& a) {
  require_cov_operands(w, a, "lowrank_log_det");
  const Index batch = w.cols();
  Matrix v(1, batch);
  for (Index j = 0; j < batch; ++j) v(0, j) = log_det(column_cov(w.value(), a.value(), j));
  const int iw = w.id(), ia = a.id();
  return w.tape().record("lowrank_log_det", std::move(v), {w, a}, [iw, ia](const Matrix& g, Tape& t, int) {
    const auto wv = t.value(iw).array();
    const auto av = t.value(ia).array();
    const Eigen::RowVectorXd tdet = 1.0 + (av.square() / wv).colwise().sum();
    const Eigen::ArrayXXd scale = (g.array().row(0) / tdet.array()).replicate(wv.rows(), 1);
    if (t.needs_grad(iw)) {
      const Eigen::ArrayXXd gw = g.replicate(wv.rows(), 1).array() / wv - scale * av.square() / wv.square();
      t.accumulate(iw, gw.matrix());
    }
    if (t.needs_grad(ia)) t.accumulate(ia, (2.0 * scale * av / wv).matrix());
  });
}

Var lowrank_inv_quadratic_form(const Var& w, const Var& a, const Var& q) {
  require_cov_operands(w, a, "lowrank_inv_quadratic_form");
  require_same_shape(w, q, "lowrank_inv_quadratic_form");
  const Index batch = w.cols();
  Matrix v(1, batch);
  for (Index j = 0; j < batch; ++j) {
    v(0, j) = inv_quadratic_form(column_cov(w.value(), a.value(), j), q.value().col(j));
  }
  const int iw = w.id(), ia = a.id(), iq = q.id();
  return w.tape().record(
      "lowrank_inv_quadratic_form", std::move(v), {w, a, q}, [iw, ia, iq](const Matrix& g, Tape& t, int) {
        const Matrix& wv = t.value(iw);
        const Matrix& av = t.value(ia);
        const Matrix& qv = t.value(iq);
        const Index d = wv.rows(), batch = wv.cols();
        Matrix gw(d, batch), ga(d, batch), gq(d, batch);
        for (Index j = 0; j < batch; ++j) {
          const auto wj = wv.col(j).array();
          const auto aj = av.col(j).array();
          const auto qj = qv.col(j).array();
          const double tden = 1.0 + (aj.square() / wj).sum();
          const double cross = (aj * qj / wj).sum();
          const double c = cross / tden;
          const double gj = g(0, j);
          gq.col(j) = (gj * (2.0 * qj / wj - 2.0 * c * aj / wj)).matrix();
          ga.col(j) = (gj * (-2.0 * c * qj / wj + 2.0 * c * c * aj / wj)).matrix();
          gw.col(j) = (gj * (-qj.square() / wj.square() + 2.0 * c * aj * qj / wj.square() -
                             c * c * aj.square() / wj.square()))
                          .matrix();
        }
        t.accumulate(iw, gw);
        t.accumulate(ia, ga);
        t.accumulate(iq, gq);
      });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> targets) {
  const Matrix& z = logits.value();
  if (static_cast<Index>(targets.size()) != z.cols()) {
    throw ShapeError("softmax_cross_entropy: one target per column required");
  }
  Matrix probs(z.rows(), z.cols());
  double total = 0.0;
  for (Index j = 0; j < z.cols(); ++j) {
    const int target = targets[static_cast<std::size_t>(j)];
    if (target < 0) {
      probs.col(j).setZero();
      continue;
    }
    if (target >= z.rows()) throw InputError("softmax_cross_entropy: target id out of range");
    const double m = z.col(j).maxCoeff();
    probs.col(j) = (z.col(j).array() - m).exp();
    const double s = probs.col(j).sum();
    probs.col(j) /= s;
    total += m + std::log(s) - z(target, j);
  }
  Matrix v(1, 1);
  v(0, 0) = total;
  const int il = logits.id();
  return logits.tape().record(
      "softmax_cross_entropy", std::move(v), {logits},
      [il, p = std::move(probs), tg = std::vector<int>(targets.begin(), targets.end())](const Matrix& g, Tape& t,
                                                                                          int) {
        Matrix grad = p;
        for (std::size_t j = 0; j < tg.size(); ++j) {
          if (tg[j] >= 0) grad(tg[j], static_cast<Index>(j)) -= 1.0;
        }
        t.accumulate(il, g(0, 0) * grad);
      });
}

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps, Eigen::VectorXd* batch_mean,
                     Eigen::VectorXd* batch_var) {
  const Matrix& xv = x.value();
  const Index n = xv.cols();
  if (n < 2) throw ConfigError("batch_norm: batch size must be >= 2 in train mode");
  if (gamma.rows() != xv.rows() || gamma.cols() != 1 || beta.rows() != xv.rows() || beta.cols() != 1) {
    throw ShapeError("batch_norm: gamma and beta must be features x 1");
  }
  const Eigen::VectorXd mean = xv.rowwise().mean();
  const Matrix centered = xv.colwise() - mean;
  const Eigen::VectorXd var = centered.array().square().rowwise().mean();
  const Eigen::VectorXd inv_std = (var.array() + eps).rsqrt();
  Matrix xhat = inv_std.asDiagonal() * centered;
  Matrix v = (gamma.value().col(0).asDiagonal() * xhat).colwise() + beta.value().col(0);
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      "batch_norm", std::move(v), {x, gamma, beta},
      [ix, ig, ib, xhat = std::move(xhat), inv_std](const Matrix& g, Tape& t, int) {
        const double count = static_cast<double>(g.cols());
        if (t.needs_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).rowwise().sum());
        if (t.needs_grad(ib)) t.accumulate(ib, g.rowwise().sum());
        if (t.needs_grad(ix)) {
          const Matrix gx_hat = t.value(ig).col(0).asDiagonal() * g;
          const Eigen::VectorXd s1 = gx_hat.rowwise().sum();
          const Eigen::VectorXd s2 = gx_hat.cwiseProduct(xhat).rowwise().sum();
          Matrix gx = (count * gx_hat).colwise() - s1;
          gx -= s2.asDiagonal() * xhat;
          gx = (inv_std / count).asDiagonal() * gx;
          t.accumulate(ix, gx);
        }
      });
}

// ---------------------------------------------------------------------------
// Record

Record::Record(std::vector<std::pair<Index, Index>> input_shapes, Builder builder)
    : shapes_(std::move(input_shapes)), builder_(std::move(builder)) {}

Matrix Record::forward(std::span<const Matrix> inputs) {
  if (inputs.size() != shapes_.size()) throw ShapeError("Record::forward: wrong number of inputs");
  forward_done_ = false;
  tape_.clear();
  inputs_.clear();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].rows() != shapes_[i].first || inputs[i].cols() != shapes_[i].second) {
      throw ShapeError("Record::forward: input " + std::to_string(i) + " has the wrong shape");
    }
    inputs_.push_back(tape_.input(inputs[i]));
  }
  output_ = builder_(tape_, inputs_);
  forward_done_ = true;
  return output_.value();
}

std::vector<Matrix> Record::backward(double seed) {
  if (!forward_done_) throw StateError("Record::backward called before forward");
  tape_.backward(output_, seed);
  std::vector<Matrix> grads;
  grads.reserve(inputs_.size());
  for (const Var& v : inputs_) grads.push_back(v.grad());
  return grads;
}

}  // namespace cvlm::ad
