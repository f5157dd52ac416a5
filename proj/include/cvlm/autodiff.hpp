#ifndef CVLM_AUTODIFF_HPP
#define CVLM_AUTODIFF_HPP

// Tape-based reverse-mode differentiation over dense double matrices.
//
// Every value on the tape is an Eigen::MatrixXd. Batched quantities keep one
// example per column. Operations are recorded eagerly as they are evaluated
// (define-by-run); Tape::backward walks the record in reverse and accumulates
// gradients into every reachable node and into bound Parameters.

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include <cvlm/errors.hpp>

namespace cvlm::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; invalidated by Tape::clear().
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Gradient after Tape::backward; zeros for unreachable nodes.
  Matrix grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;

  Tape& tape() const;
  int id() const noexcept { return id_; }
  bool valid() const noexcept;

 private:
  friend class Tape;
  Var(Tape* tape, int id, unsigned generation) : tape_(tape), id_(id), generation_(generation) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
  unsigned generation_ = 0;
};

class Tape {
 public:
  /// Backward rule: receives the node's upstream gradient and its own id.
  using BackwardFn = std::function<void(const Matrix& upstream, Tape& tape, int self)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value, const char* name = "constant");
  /// Differentiable leaf not tied to a Parameter.
  Var input(Matrix value, const char* name = "input");
  /// Leaf whose gradient is added to p.grad on backward.
  Var parameter(Parameter& p);

  Var record(const char* op, Matrix value, std::span<const Var> parents, BackwardFn fn);
  Var record(const char* op, Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(op, std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
  }

  /// Reverse sweep from `output`, seeded with `seed` in every entry.
  void backward(const Var& output, double seed = 1.0);

  /// Drops every node; outstanding Vars become invalid.
  void clear();

  std::size_t size() const noexcept { return nodes_.size(); }
  void set_check_finite(bool on) noexcept { check_finite_ = on; }

  // Accessors for backward rules.
  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  template <typename Expr>
  void accumulate(int id, const Eigen::MatrixBase<Expr>& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.has_grad) {
      n.grad += g;
    } else {
      n.grad = g;
      n.has_grad = true;
    }
  }
  Matrix grad(int id) const;
  bool owns(const Var& v) const noexcept { return v.tape_ == this && v.generation_ == generation_; }

 private:
  struct Node {
    const char* op;
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Node node);
  void check(const Var& v, const char* what) const;

  std::vector<Node> nodes_;
  unsigned generation_ = 1;
  bool check_finite_ = true;
};

// ---------------------------------------------------------------------------
// Primitives. Shapes follow Eigen conventions; batched vectors are d x B.

Var matmul(const Var& a, const Var& b);
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
/// Elementwise product.
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator*(double c, const Var& x);
Var operator-(const Var& x);
Var add_scalar(const Var& x, double c);

/// x + b with b (rows x 1) broadcast over columns.
Var add_bias(const Var& x, const Var& bias);
/// x_ij * s_i with s (rows x 1) broadcast over columns.
Var scale_rows(const Var& x, const Var& s);

Var exp(const Var& x);
Var log(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var square(const Var& x);
/// max(relu(x), floor) for floor > 0; subgradient 0 at and below the floor.
Var relu_floor(const Var& x, double floor);

/// Sum of all entries, 1 x 1.
Var sum(const Var& x);
/// Column sums, 1 x cols.
Var col_sums(const Var& x);
/// Repeat a 1 x B row n times.
Var broadcast_rows(const Var& x, Index n);

Var slice_rows(const Var& x, Index start, Index count);
Var slice_cols(const Var& x, Index start, Index count);
Var concat_rows(const Var& top, const Var& bottom);
Var concat_cols(std::span<const Var> parts);

/// Columns of `table` selected by `ids` (embedding lookup).
Var gather_cols(const Var& table, std::span<const int> ids);

Var normal_cdf(const Var& x);
Var normal_quantile(const Var& u);

/// Rank-one Cholesky of diag(w) + a a^T per column. Output is 2d x B: rows
/// [0, d) hold the factor diagonal, rows [d, 2d) the column multipliers g
/// (L_ik = a_i g_k for i > k).
Var rank_one_cholesky(const Var& w, const Var& a);
/// q = L eps for the compact factor produced by rank_one_cholesky.
Var rank_one_lower_matvec(const Var& factor, const Var& a, const Var& eps);
/// log|diag(w) + a a^T| per column, 1 x B.
Var lowrank_log_det(const Var& w, const Var& a);
/// q^T (diag(w) + a a^T)^-1 q per column, 1 x B.
Var lowrank_inv_quadratic_form(const Var& w, const Var& a, const Var& q);

/// Summed cross-entropy of softmax(logits) columns against `targets`;
/// entries < 0 are ignored. Returns 1 x 1.
Var softmax_cross_entropy(const Var& logits, std::span<const int> targets);

/// Batch-normalization with batch statistics (one feature per row, one example
/// per column). The biased batch variance is reported through `batch_var`.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                     Eigen::VectorXd* batch_mean = nullptr, Eigen::VectorXd* batch_var = nullptr);

// ---------------------------------------------------------------------------

/// A reusable function of fixed-shape inputs: forward() rebuilds the tape,
/// backward() returns d(output)/d(input) for every input.
class Record {
 public:
  using Builder = std::function<Var(Tape&, std::span<const Var>)>;

  Record(std::vector<std::pair<Index, Index>> input_shapes, Builder builder);

  Matrix forward(std::span<const Matrix> inputs);
  std::vector<Matrix> backward(double seed = 1.0);
  std::size_t size() const noexcept { return tape_.size(); }

 private:
  std::vector<std::pair<Index, Index>> shapes_;
  Builder builder_;
  Tape tape_;
  std::vector<Var> inputs_;
  Var output_;
  bool forward_done_ = false;
};

}  // namespace cvlm::ad

#endif  // CVLM_AUTODIFF_HPP
