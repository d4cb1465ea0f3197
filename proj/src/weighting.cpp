#include "datamanip/weighting.hpp"

#include <cmath>
#include <stdexcept>

namespace datamanip {

InstanceEncoder InstanceEncoder::create(ParamSet& params, const std::string& name,
                                        int vocab_size, const EncoderDims& dims, Rng& rng) {
  if (dims.dim <= 0 || dims.heads <= 0 || dims.dim % dims.heads != 0 || dims.layers < 1) {
    throw std::invalid_argument("InstanceEncoder: invalid dimensions");
  }
  InstanceEncoder e;
  e.vocab_size_ = vocab_size;
  e.dim_ = dims.dim;
  e.embed_ = params.add(name + ".embed", init_normal(vocab_size, dims.dim, 1.0, rng));
  e.positions_ = nn::sinusoidal_positions(dims.max_len, dims.dim);
  e.separator_ = one_hot_rows(std::vector<int>{kEos}, vocab_size);
  for (int l = 0; l < dims.layers; ++l) {
    e.blocks_.push_back(nn::EncoderBlock::create(params, name + ".block." + std::to_string(l),
                                                 dims.dim, dims.heads, dims.ff_hidden, rng));
  }
  e.norm_ = nn::LayerNorm::create(params, name + ".norm", dims.dim);
  return e;
}

ad::Var InstanceEncoder::encode_one(const ParamSet& params, const ad::Var& query,
                                    const ad::Var& response) const {
  std::vector<ad::Var> parts{query, ad::constant(separator_), response};
  ad::Var rows = ad::concat_rows(parts);
  const Eigen::Index len = rows.rows();
  if (len > positions_.rows()) throw std::invalid_argument("InstanceEncoder: input too long");
  ad::Var x = ad::add(ad::matmul(rows, params[embed_]), ad::constant(positions_.topRows(len)));
  for (const auto& block : blocks_) x = block.apply(params, x, ad::Matrix());
  x = norm_.apply(params, x);
  return ad::scale(ad::col_sum(x), 1.0 / static_cast<double>(len));
}

ad::Var InstanceEncoder::encode(const ParamSet& params, std::span<const RelaxedSentence> queries,
                                std::span<const RelaxedSentence> responses) const {
  if (queries.size() != responses.size() || queries.empty()) {
    throw std::invalid_argument("InstanceEncoder::encode: need matching, non-empty inputs");
  }
  std::vector<ad::Var> rows;
  rows.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    rows.push_back(encode_one(params, queries[i].probs, responses[i].probs));
  }
  return ad::concat_rows(rows);
}

Scorer Scorer::create(ParamSet& params, const std::string& name, int in, int hidden_dim,
                      Rng& rng) {
  Scorer s;
  s.hidden = nn::Linear::create(params, name + ".hidden", in, hidden_dim, rng);
  s.output = nn::Linear::create(params, name + ".output", hidden_dim, 1, rng);
  return s;
}

ad::Var Scorer::apply(const ParamSet& params, const ad::Var& features) const {
  return output.apply(params, ad::tanh(hidden.apply(params, features)));
}

const char* weight_norm_name(WeightNorm norm) {
  return norm == WeightNorm::sum_to_one ? "sum_to_one" : "mean_one";
}

WeightNorm parse_weight_norm(std::string_view name) {
  if (name == "sum_to_one") return WeightNorm::sum_to_one;
  if (name == "mean_one") return WeightNorm::mean_one;
  throw std::invalid_argument("unknown weight normalization: " + std::string(name));
}

ad::Var uniform_weights(int n, WeightNorm norm) {
  if (n < 1) throw std::invalid_argument("uniform_weights: need at least one instance");
  const double w = norm == WeightNorm::sum_to_one ? 1.0 / n : 1.0;
  return ad::constant(ad::Matrix::Constant(n, 1, w));
}

namespace {

ad::Var column_softmax(const ad::Var& scores) {
  return ad::transpose(ad::softmax_rows(ad::transpose(scores)));
}

}  // namespace

namespace {

// m * exp(s - max s) / sum(m * exp(s - max s)) over the rows in `rows`,
// scattered back into n rows. The shift is a constant and cancels exactly.
ad::Var masked_softmax(const ad::Var& s, const ad::Var& m, std::vector<Eigen::Index> rows,
                       Eigen::Index n) {
  ad::Var sg = ad::gather_rows(s, rows);
  ad::Var mg = ad::gather_rows(m, rows);
  const double shift = sg.value().maxCoeff();
  ad::Var u = ad::mul(ad::exp(ad::add_scalar(sg, -shift)), mg);
  ad::Var total = ad::expand(ad::sum(u), u.rows(), 1);
  return ad::scatter_add_rows(ad::div(u, total), std::move(rows), n);
}

}  // namespace

WeightVector weights_from_scores(const ad::Var& scores, const WeightOptions& options,
                                 std::span<const Origin> origins,
                                 std::span<const int> parent_rows,
                                 const ad::Var& inclusion) {
  const Eigen::Index n = scores.rows();
  if (n < 1 || scores.cols() != 1) throw std::invalid_argument("weights: scores must be N x 1");
  const bool masked = inclusion.defined();
  if (masked) {
    if (inclusion.rows() != n || inclusion.cols() != 1) {
      throw std::invalid_argument("weights: inclusion must be N x 1");
    }
    if ((inclusion.value().array() < 0.0).any() || inclusion.value().sum() <= 0.0) {
      throw std::invalid_argument("weights: inclusion must be non-negative with a positive sum");
    }
  }
  ad::Var s = scores;
  if (options.parent_shared && !parent_rows.empty()) {
    if (static_cast<Eigen::Index>(parent_rows.size()) != n) {
      throw std::invalid_argument("weights: parent_rows size mismatch");
    }
    s = ad::gather_rows(s, std::vector<Eigen::Index>(parent_rows.begin(), parent_rows.end()));
  }
  WeightVector out;
  out.norm = options.norm;
  out.scores = s.value();

  bool split = false;
  if (options.per_origin && !origins.empty()) {
    if (static_cast<Eigen::Index>(origins.size()) != n) {
      throw std::invalid_argument("weights: origins size mismatch");
    }
    for (auto o : origins) split = split || o != Origin::original;
  }
  std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;

  ad::Var w;
  if (!masked) {
    if (!split) {
      w = column_softmax(s);
    } else {
      std::vector<Eigen::Index> orig, aug;
      for (Eigen::Index i = 0; i < n; ++i) {
        (origins[static_cast<std::size_t>(i)] == Origin::original ? orig : aug).push_back(i);
      }
      auto group = [&](std::vector<Eigen::Index> rows) {
        const double share = static_cast<double>(rows.size()) / static_cast<double>(n);
        ad::Var g = ad::scale(column_softmax(ad::gather_rows(s, rows)), share);
        return ad::scatter_add_rows(g, std::move(rows), n);
      };
      w = ad::add(group(orig), group(aug));
    }
    if (options.norm == WeightNorm::mean_one) w = ad::scale(w, static_cast<double>(n));
    out.weights = w;
    return out;
  }

  ad::Var count = ad::sum(inclusion);
  if (!split) {
    w = masked_softmax(s, inclusion, all, n);
  } else {
    std::vector<Eigen::Index> groups[2];
    for (Eigen::Index i = 0; i < n; ++i) {
      groups[origins[static_cast<std::size_t>(i)] == Origin::original ? 0 : 1].push_back(i);
    }
    std::vector<ad::Var> parts;
    for (auto& rows : groups) {
      if (rows.empty()) continue;
      ad::Var members = ad::sum(ad::gather_rows(inclusion, rows));
      if (members.item() <= 0.0) continue;  // nothing included in this group
      ad::Var share = ad::div(members, count);
      parts.push_back(ad::mul(masked_softmax(s, inclusion, rows, n), ad::expand(share, n, 1)));
    }
    w = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) w = ad::add(w, parts[i]);
  }
  if (options.norm == WeightNorm::mean_one) w = ad::mul(w, ad::expand(count, n, 1));
  out.weights = w;
  return out;
}

WeightVector score_and_weight(const ad::Var& features, const Scorer& scorer,
                              const ParamSet& params, const WeightOptions& options,
                              std::span<const Origin> origins,
                              std::span<const int> parent_rows,
                              const ad::Var& inclusion) {
  return weights_from_scores(scorer.apply(params, features), options, origins, parent_rows,
                             inclusion);
}

}  // namespace datamanip
