#include "datamanip/autodiff.hpp"

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace datamanip::ad {

namespace {

thread_local bool g_grad_enabled = true;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("autodiff: ") + what);
}

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(
        std::string("autodiff: shape mismatch in ") + op + " (" +
        std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
        std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
  }
}

Var make(Matrix value, std::vector<Var> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs = std::move(inputs);
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

bool needs(const std::vector<Var>& in, std::size_t i) {
  return in[i].requires_grad();
}

}  // namespace

double Var::item() const {
  require(rows() == 1 && cols() == 1, "item() on a non-scalar");
  return node_->value(0, 0);
}

bool grad_enabled() { return g_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) {
  g_grad_enabled = enabled;
}

GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var leaf(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var zeros(Eigen::Index rows, Eigen::Index cols) {
  return constant(Matrix::Zero(rows, cols));
}

std::vector<Var> grad(const Var& output, std::span<const Var> inputs,
                      bool create_graph) {
  require(output.defined(), "grad of an undefined output");
  require(output.rows() == 1 && output.cols() == 1,
          "grad requires a scalar output");

  // Iterative post-order DFS gives a topological order.
  std::vector<NodePtr> order;
  if (output.requires_grad()) {
    std::unordered_set<Node*> visited;
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(output.node(), 0);
    visited.insert(output.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        const NodePtr& child = node->inputs[next++].node();
        if (child->requires_grad && visited.insert(child.get()).second) {
          stack.emplace_back(child, 0);
        }
      } else {
        order.push_back(std::move(node));
        stack.pop_back();
      }
    }
  }

  // Keep the inputs' gradient slots alive after their consumers are freed.
  std::unordered_set<Node*> wanted;
  for (const auto& in : inputs) {
    if (in.defined()) wanted.insert(in.node().get());
  }
  // Nodes with no path to a wanted input need no gradient. `order` lists
  // children before parents, so one forward sweep settles relevance.
  std::unordered_set<Node*> relevant;
  for (const auto& node : order) {
    bool r = wanted.count(node.get()) > 0;
    for (const auto& in : node->inputs) {
      if (r) break;
      r = relevant.count(in.node().get()) > 0;
    }
    if (r) relevant.insert(node.get());
  }

  GradModeGuard mode(create_graph);
  std::unordered_map<Node*, Var> grads;
  grads.reserve(order.size());
  if (output.requires_grad()) {
    grads[output.node().get()] = constant(Matrix::Ones(1, 1));
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = it->get();
    auto found = grads.find(node);
    if (found == grads.end() || !node->backward || !relevant.count(node)) continue;
    Var g = found->second;
    if (!wanted.count(node)) grads.erase(found);
    Var self(*it);
    std::vector<Var> parts = node->backward(g, self, node->inputs);
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const Var& in = node->inputs[i];
      if (!in.requires_grad() || !parts[i].defined()) continue;
      Node* key = in.node().get();
      if (!relevant.count(key)) continue;
      auto slot = grads.find(key);
      if (slot == grads.end()) {
        grads.emplace(key, parts[i]);
      } else {
        slot->second = add(slot->second, parts[i]);
      }
    }
  }

  std::vector<Var> result;
  result.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto found = in.defined() ? grads.find(in.node().get()) : grads.end();
    if (found != grads.end()) {
      result.push_back(found->second);
    } else {
      result.push_back(zeros(in.rows(), in.cols()));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  return make(a.value() + b.value(), {a, b},
              [](const Var& g, const Var&, const std::vector<Var>&) {
                return std::vector<Var>{g, g};
              });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  return make(a.value() - b.value(), {a, b},
              [](const Var& g, const Var&, const std::vector<Var>& in) {
                return std::vector<Var>{g, needs(in, 1) ? neg(g) : Var()};
              });
}

Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  return make(a.value().cwiseProduct(b.value()), {a, b},
              [](const Var& g, const Var&, const std::vector<Var>& in) {
                return std::vector<Var>{
                    needs(in, 0) ? mul(g, in[1]) : Var(),
                    needs(in, 1) ? mul(g, in[0]) : Var()};
              });
}

Var div(const Var& a, const Var& b) {
  same_shape(a, b, "div");
  return make(a.value().cwiseQuotient(b.value()), {a, b},
              [](const Var& g, const Var& self, const std::vector<Var>& in) {
                return std::vector<Var>{
                    needs(in, 0) ? div(g, in[1]) : Var(),
                    needs(in, 1) ? neg(div(mul(g, self), in[1])) : Var()};
              });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double factor) {
  return make(a.value() * factor, {a},
              [factor](const Var& g, const Var&, const std::vector<Var>&) {
                return std::vector<Var>{scale(g, factor)};
              });
}

Var add_scalar(const Var& a, double offset) {
  return make(a.value().array() + offset, {a},
              [](const Var& g, const Var&, const std::vector<Var>&) {
                return std::vector<Var>{g};
              });
}

// ---------------------------------------------------------------------------
// Broadcasting

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row shape");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return make(std::move(out), {a, row},
              [](const Var& g, const Var&, const std::vector<Var>& in) {
                return std::vector<Var>{g, needs(in, 1) ? col_sum(g) : Var()};
              });
}

Var mul_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "mul_row shape");
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return make(std::move(out), {a, row},
              [](const Var& g, const Var&, const std::vector<Var>& in) {
                return std::vector<Var>{
                    needs(in, 0) ? mul_row(g, in[1]) : Var(),
                    needs(in, 1) ? col_sum(mul(g, in[0])) : Var()};
              });
}

Var mul_col(const Var& a, const Var& col) {
  require(col.cols() == 1 && col.rows() == a.rows(), "mul_col shape");
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return make(std::move(out), {a, col},
              [](const Var& g, const Var&, const std::vector<Var>& in) {
                return std::vector<Var>{
                    needs(in, 0) ? mul_col(g, in[1]) : Var(),
                    needs(in, 1) ? row_sum(mul(g, in[0])) : Var()};
              });
}

Var mul_scalar(const Var& a, const Var& s) {
  require(s.rows() == 1 && s.cols() == 1, "mul_scalar expects 1x1");
  return make(a.value() * s.value()(0, 0), {a, s},
              [](const Var& g, const Var&, const std::vector<Var>& in) {
                return std::vector<Var>{
                    needs(in, 0) ? mul_scalar(g, in[1]) : Var(),
                    needs(in, 1) ? sum(mul(g, in[0])) : Var()};
              });
}

Var broadcast_rows(const Var& row, Eigen::Index rows) {
  require(row.rows() == 1, "broadcast_rows expects 1 x c");
  return make(row.value().replicate(rows, 1), {row},
              [](const Var& g, const Var&, const std::vector<Var>&) {
                return std::vector<Var>{col_sum(g)};
              });
}

Var broadcast_cols(const Var& col, Eigen::Index cols) {
  require(col.cols() == 1, "broadcast_cols expects r x 1");
  return make(col.value().replicate(1, cols), {col},
              [](const Var& g, const Var&, const std::vector<Var>&) {
                return std::vector<Var>{row_sum(g)};
              });
}

Var expand(const Var& s, Eigen::Index rows, Eigen::Index cols) {
  require(s.rows() == 1 && s.cols() == 1, "expand expects 1x1");
  return make(Matrix::Constant(rows, cols, s.value()(0, 0)), {s},
              [](const Var& g, const Var&, const std::vector<Var>&) {
                return std::vector<Var>{sum(g)};
              });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul inner dimension");
  return make(a.value() * b.value(), {a, b},
              [](const Var& g, const Var&, const std::vector<Var>& in) {
                return std::vector<Var>{
                    needs(in, 0) ? matmul(g, transpose(in[1])) : Var(),
                    needs(in, 1) ? matmul(transpose(in[0]), g) : Var()};
              });
}

Var transpose(const Var& a) {
  return make(a.value().transpose(), {a},
              [](const Var& g, const Var&, const std::vector<Var>&) {
                return std::vector<Var>{transpose(g)};
              });
}

// ---------------------------------------------------------------------------
// Nonlinearities

Var sigmoid(const Var& a) {
  Matrix out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return make(std::move(out), {a},
              [](const Var& g, const Var& y, const std::vector<Var>&) {
                return std::vector<Var>{mul(g, mul(y, add_scalar(neg(y), 1.0)))};
              });
}

Var tanh(const Var& a) {
  return make(a.value().array().tanh().matrix(), {a},
              [](const Var& g, const Var& y, const std::vector<Var>&) {
                return std::vector<Var>{
                    mul(g, add_scalar(neg(mul(y, y)), 1.0))};
              });
}

Var exp(const Var& a) {
  return make(a.value().array().exp().matrix(), {a},
              [](const Var& g, const Var& y, const std::vector<Var>&) {
                return std::vector<Var>{mul(g, y)};
              });
}

Var log(const Var& a) {
  return make(a.value().array().log().matrix(), {a},
              [](const Var& g, const Var&, const std::vector<Var>& in) {
                return std::vector<Var>{div(g, in[0])};
              });
}

Var relu(const Var& a) {
  Matrix mask = (a.value().array() > 0.0).cast<double>().matrix();
  Matrix out = a.value().cwiseProduct(mask);
  return make(std::move(out), {a},
              [mask = std::move(mask)](const Var& g, const Var&,
                                       const std::vector<Var>&) {
                return std::vector<Var>{mul(g, constant(mask))};
              });
}

Var pow(const Var& a, double exponent) {
  return make(a.value().array().pow(exponent).matrix(), {a},
              [exponent](const Var& g, const Var&, const std::vector<Var>& in) {
                return std::vector<Var>{
                    mul(g, scale(pow(in[0], exponent - 1.0), exponent))};
              });
}

Var softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return make(std::move(out), {a},
              [](const Var& g, const Var& y, const std::vector<Var>&) {
                Var dot = row_sum(mul(g, y));
                return std::vector<Var>{
                    mul(y, sub(g, broadcast_cols(dot, g.cols())))};
              });
}

Var log_softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    const double lse = m + std::log((out.row(r).array() - m).exp().sum());
    out.row(r).array() -= lse;
  }
  return make(std::move(out), {a},
              [](const Var& g, const Var& y, const std::vector<Var>&) {
                return std::vector<Var>{sub(g, mul_col(exp(y), row_sum(g)))};
              });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& a) {
  const auto r = a.rows();
  const auto c = a.cols();
  return make(Matrix::Constant(1, 1, a.value().sum()), {a},
              [r, c](const Var& g, const Var&, const std::vector<Var>&) {
                return std::vector<Var>{expand(g, r, c)};
              });
}

Var col_sum(const Var& a) {
  const auto r = a.rows();
  return make(a.value().colwise().sum(), {a},
              [r](const Var& g, const Var&, const std::vector<Var>&) {
                return std::vector<Var>{broadcast_rows(g, r)};
              });
}

Var row_sum(const Var& a) {
  const auto c = a.cols();
  return make(a.value().rowwise().sum(), {a},
              [c](const Var& g, const Var&, const std::vector<Var>&) {
                return std::vector<Var>{broadcast_cols(g, c)};
              });
}

// ---------------------------------------------------------------------------
// Structural ops

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(),
          "slice_rows range");
  const auto total = a.rows();
  return make(a.value().middleRows(start, count), {a},
              [total, start](const Var& g, const Var&,
                             const std::vector<Var>&) {
                return std::vector<Var>{place_rows(g, total, start)};
              });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(),
          "slice_cols range");
  const auto total = a.cols();
  return make(a.value().middleCols(start, count), {a},
              [total, start](const Var& g, const Var&,
                             const std::vector<Var>&) {
                return std::vector<Var>{place_cols(g, total, start)};
              });
}

Var place_rows(const Var& a, Eigen::Index total, Eigen::Index start) {
  require(start >= 0 && start + a.rows() <= total, "place_rows range");
  Matrix out = Matrix::Zero(total, a.cols());
  out.middleRows(start, a.rows()) = a.value();
  const auto count = a.rows();
  return make(std::move(out), {a},
              [start, count](const Var& g, const Var&,
                             const std::vector<Var>&) {
                return std::vector<Var>{slice_rows(g, start, count)};
              });
}

Var place_cols(const Var& a, Eigen::Index total, Eigen::Index start) {
  require(start >= 0 && start + a.cols() <= total, "place_cols range");
  Matrix out = Matrix::Zero(a.rows(), total);
  out.middleCols(start, a.cols()) = a.value();
  const auto count = a.cols();
  return make(std::move(out), {a},
              [start, count](const Var& g, const Var&,
                             const std::vector<Var>&) {
                return std::vector<Var>{slice_cols(g, start, count)};
              });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows of nothing");
  Eigen::Index rows = 0;
  const auto cols = parts.front().cols();
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  offsets.reserve(parts.size());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
              [offsets = std::move(offsets)](const Var& g, const Var&,
                                             const std::vector<Var>& in) {
                std::vector<Var> out(in.size());
                for (std::size_t i = 0; i < in.size(); ++i) {
                  if (in[i].requires_grad()) {
                    out[i] = slice_rows(g, offsets[i], in[i].rows());
                  }
                }
                return out;
              });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols of nothing");
  Eigen::Index cols = 0;
  const auto rows = parts.front().rows();
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  offsets.reserve(parts.size());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
              [offsets = std::move(offsets)](const Var& g, const Var&,
                                             const std::vector<Var>& in) {
                std::vector<Var> out(in.size());
                for (std::size_t i = 0; i < in.size(); ++i) {
                  if (in[i].requires_grad()) {
                    out[i] = slice_cols(g, offsets[i], in[i].cols());
                  }
                }
                return out;
              });
}

Var gather_rows(const Var& a, std::vector<Eigen::Index> index) {
  Matrix out(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] >= 0 && index[i] < a.rows(), "gather_rows index");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(index[i]);
  }
  const auto total = a.rows();
  return make(std::move(out), {a},
              [index = std::move(index), total](const Var& g, const Var&,
                                                const std::vector<Var>&) {
                return std::vector<Var>{scatter_add_rows(g, index, total)};
              });
}

Var scatter_add_rows(const Var& a, std::vector<Eigen::Index> index,
                     Eigen::Index total) {
  require(static_cast<Eigen::Index>(index.size()) == a.rows(),
          "scatter_add_rows index length");
  Matrix out = Matrix::Zero(total, a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] >= 0 && index[i] < total, "scatter_add_rows index");
    out.row(index[i]) += a.value().row(static_cast<Eigen::Index>(i));
  }
  return make(std::move(out), {a},
              [index = std::move(index)](const Var& g, const Var&,
                                         const std::vector<Var>&) {
                return std::vector<Var>{gather_rows(g, index)};
              });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  require(rows * cols == a.value().size(), "reshape size");
  const auto r0 = a.rows();
  const auto c0 = a.cols();
  Matrix out = a.value().reshaped(rows, cols);
  return make(std::move(out), {a},
              [r0, c0](const Var& g, const Var&, const std::vector<Var>&) {
                return std::vector<Var>{reshape(g, r0, c0)};
              });
}

Var detach(const Var& a) { return constant(a.value()); }

Var straight_through(Matrix forward_value, const Var& soft) {
  require(forward_value.rows() == soft.rows() &&
              forward_value.cols() == soft.cols(),
          "straight_through shape");
  return make(std::move(forward_value), {soft},
              [](const Var& g, const Var&, const std::vector<Var>&) {
                return std::vector<Var>{g};
              });
}

}  // namespace datamanip::ad
