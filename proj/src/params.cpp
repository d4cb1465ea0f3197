#include "datamanip/params.hpp"

#include <cmath>
#include <stdexcept>

namespace datamanip {

std::size_t ParamSet::add(std::string name, ad::Matrix init) {
  names_.push_back(std::move(name));
  tensors_.push_back(ad::leaf(std::move(init)));
  return tensors_.size() - 1;
}

std::size_t ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

ParamSet ParamSet::with_tensors(std::vector<ad::Var> tensors) const {
  if (tensors.size() != tensors_.size()) {
    throw std::invalid_argument("ParamSet::with_tensors: size mismatch");
  }
  ParamSet out;
  out.names_ = names_;
  out.tensors_ = std::move(tensors);
  return out;
}

ParamSet ParamSet::as_leaves() const {
  ParamSet out;
  out.names_ = names_;
  out.tensors_.reserve(tensors_.size());
  for (const auto& t : tensors_) out.tensors_.push_back(ad::leaf(t.value()));
  return out;
}

ParamSet ParamSet::as_constants() const {
  ParamSet out;
  out.names_ = names_;
  out.tensors_.reserve(tensors_.size());
  for (const auto& t : tensors_) out.tensors_.push_back(ad::constant(t.value()));
  return out;
}

void ParamSet::set_value(std::size_t i, ad::Matrix value) {
  tensors_.at(i) = ad::leaf(std::move(value));
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value().size());
  return n;
}

bool ParamSet::all_finite() const {
  for (const auto& t : tensors_) {
    if (!t.value().allFinite()) return false;
  }
  return true;
}

double ParamSet::coordinate(std::size_t flat) const {
  for (const auto& t : tensors_) {
    const auto n = static_cast<std::size_t>(t.value().size());
    if (flat < n) return t.value().data()[flat];
    flat -= n;
  }
  throw std::out_of_range("ParamSet::coordinate");
}

void ParamSet::set_coordinate(std::size_t flat, double value) {
  for (auto& t : tensors_) {
    const auto n = static_cast<std::size_t>(t.value().size());
    if (flat < n) {
      ad::Matrix m = t.value();
      m.data()[flat] = value;
      t = ad::leaf(std::move(m));
      return;
    }
    flat -= n;
  }
  throw std::out_of_range("ParamSet::set_coordinate");
}

std::size_t ParamSet::append(const ParamSet& other, std::string_view prefix) {
  const std::size_t offset = tensors_.size();
  for (std::size_t i = 0; i < other.size(); ++i) {
    names_.push_back(std::string(prefix) + other.names_[i]);
    tensors_.push_back(other.tensors_[i]);
  }
  return offset;
}

ParamSet ParamSet::slice(std::size_t begin, std::size_t count) const {
  ParamSet out;
  out.names_.assign(names_.begin() + begin, names_.begin() + begin + count);
  out.tensors_.assign(tensors_.begin() + begin,
                      tensors_.begin() + begin + count);
  return out;
}

ad::Matrix init_uniform(Eigen::Index rows, Eigen::Index cols, double bound,
                        Rng& rng) {
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = (2.0 * rng.uniform() - 1.0) * bound;
  }
  return m;
}

ad::Matrix init_normal(Eigen::Index rows, Eigen::Index cols, double stddev,
                       Rng& rng) {
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * stddev;
  return m;
}

void sgd_step(ParamSet& params, const std::vector<ad::Var>& grads, double lr) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    params.set_value(i, params[i].value() - lr * grads[i].value());
  }
}

void Adam::step(ParamSet& params, const std::vector<ad::Var>& grads) {
  std::vector<ad::Matrix> values;
  values.reserve(grads.size());
  for (const auto& g : grads) values.push_back(g.value());
  step(params, values);
}

void Adam::step(ParamSet& params, const std::vector<ad::Matrix>& grads) {
  if (m_.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.push_back(ad::Matrix::Zero(params[i].rows(), params[i].cols()));
      v_.push_back(ad::Matrix::Zero(params[i].rows(), params[i].cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ad::Matrix& g = grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    ad::Matrix update =
        (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + eps_);
    params.set_value(i, params[i].value() - lr_ * update);
  }
}

AdamState Adam::state() const { return {t_, m_, v_}; }

void Adam::set_state(AdamState state) {
  if (state.m.size() != state.v.size()) throw std::invalid_argument("Adam: moment count mismatch");
  t_ = state.t;
  m_ = std::move(state.m);
  v_ = std::move(state.v);
}

}  // namespace datamanip
