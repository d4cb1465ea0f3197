#pragma once

// Reverse-mode automatic differentiation over dense 2-D matrices.
//
// Every backward rule is written in terms of the same differentiable ops, so
// a gradient computed with `create_graph = true` is itself a graph that can be
// differentiated again. The meta-gradient through a lookahead parameter
// update relies on this.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace datamanip::ad {

using Matrix = Eigen::MatrixXd;

class Var;
struct Node;
using NodePtr = std::shared_ptr<Node>;

// Maps the gradient of a node's output to gradients of its inputs. Entries
// for inputs that do not require a gradient may be left undefined.
using BackwardFn = std::function<std::vector<Var>(
    const Var& grad_out, const Var& self, const std::vector<Var>& inputs)>;

struct Node {
  Matrix value;
  bool requires_grad = false;
  std::vector<Var> inputs;
  BackwardFn backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix& value() const { return node_->value; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Graph recording is on by default. Disabling it turns every op into a plain
// matrix computation that produces constants.
bool grad_enabled();

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

Var constant(Matrix value);
Var scalar(double value);
// A differentiable leaf.
Var leaf(Matrix value);
Var zeros(Eigen::Index rows, Eigen::Index cols);

// Gradients of a scalar `output` with respect to `inputs`. Inputs the output
// does not depend on receive zero matrices. With `create_graph` the returned
// gradients are differentiable functions of everything they depend on.
std::vector<Var> grad(const Var& output, std::span<const Var> inputs,
                      bool create_graph = false);

// Elementwise arithmetic. Shapes must match exactly.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);

// Broadcasting helpers: `row` is 1 x c, `col` is r x 1, `s` is 1 x 1.
Var add_row(const Var& a, const Var& row);
Var mul_row(const Var& a, const Var& row);
Var mul_col(const Var& a, const Var& col);
Var mul_scalar(const Var& a, const Var& s);
Var broadcast_rows(const Var& row, Eigen::Index rows);
Var broadcast_cols(const Var& col, Eigen::Index cols);
Var expand(const Var& s, Eigen::Index rows, Eigen::Index cols);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var relu(const Var& a);
Var pow(const Var& a, double exponent);

// Row-wise normalizations.
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

// Reductions: sum -> 1x1, col_sum -> 1 x c, row_sum -> r x 1.
Var sum(const Var& a);
Var col_sum(const Var& a);
Var row_sum(const Var& a);

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
// Embeds `a` into a zero matrix of `total` rows (cols) starting at `start`.
Var place_rows(const Var& a, Eigen::Index total, Eigen::Index start);
Var place_cols(const Var& a, Eigen::Index total, Eigen::Index start);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
// Row gather with repetition allowed; scatter_add_rows is its adjoint.
Var gather_rows(const Var& a, std::vector<Eigen::Index> index);
Var scatter_add_rows(const Var& a, std::vector<Eigen::Index> index,
                     Eigen::Index total);

// Column-major reinterpretation; rows * cols must equal a.size().
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);

Var detach(const Var& a);
// Forward value is `forward_value`; the gradient passes straight to `soft`.
Var straight_through(Matrix forward_value, const Var& soft);

}  // namespace datamanip::ad
