#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "datamanip/autodiff.hpp"
#include "datamanip/rng.hpp"

namespace datamanip {

// An ordered, named collection of tensors. Architectures record indices into
// a ParamSet at construction and read tensors by index during a forward pass,
// so the same architecture can run on the original parameters or on a
// differentiable lookahead copy of them.
class ParamSet {
 public:
  std::size_t add(std::string name, ad::Matrix init);

  std::size_t size() const { return tensors_.size(); }
  const ad::Var& operator[](std::size_t i) const { return tensors_[i]; }
  const std::vector<ad::Var>& tensors() const { return tensors_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  void rename(std::size_t i, std::string name) { names_.at(i) = std::move(name); }
  std::size_t index_of(std::string_view name) const;

  // Same names, different tensors (e.g. theta - alpha * grad).
  ParamSet with_tensors(std::vector<ad::Var> tensors) const;
  // Fresh differentiable leaves holding the current values.
  ParamSet as_leaves() const;
  // Same values as constants, for forward passes that need no gradient here.
  ParamSet as_constants() const;
  void set_value(std::size_t i, ad::Matrix value);

  std::size_t scalar_count() const;
  bool all_finite() const;

  // Flat views, used by finite-difference checks and checkpoint hashing.
  double coordinate(std::size_t flat) const;
  void set_coordinate(std::size_t flat, double value);

  // Appends all tensors of `other` with a name prefix and returns the offset.
  std::size_t append(const ParamSet& other, std::string_view prefix);
  ParamSet slice(std::size_t begin, std::size_t count) const;

 private:
  std::vector<std::string> names_;
  std::vector<ad::Var> tensors_;
};

ad::Matrix init_uniform(Eigen::Index rows, Eigen::Index cols, double bound,
                        Rng& rng);
ad::Matrix init_normal(Eigen::Index rows, Eigen::Index cols, double stddev,
                       Rng& rng);

// Plain gradient step, params <- params - lr * grads, on values only.
void sgd_step(ParamSet& params, const std::vector<ad::Var>& grads, double lr);

struct AdamState {
  long t = 0;
  std::vector<ad::Matrix> m, v;
};

// Adam, used for pretraining the augmentation models and optionally for
// the meta step.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet& params, const std::vector<ad::Var>& grads);
  void step(ParamSet& params, const std::vector<ad::Matrix>& grads);

  AdamState state() const;
  void set_state(AdamState state);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<ad::Matrix> m_, v_;
};

}  // namespace datamanip
