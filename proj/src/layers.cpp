#include "datamanip/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace datamanip::nn {

Linear Linear::create(ParamSet& params, const std::string& name, int in,
                      int out, Rng& rng, bool bias) {
  if (in <= 0 || out <= 0) {
    throw std::invalid_argument("Linear " + name + ": dimensions must be > 0");
  }
  Linear l;
  l.in = in;
  l.out = out;
  l.has_bias = bias;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  l.weight = params.add(name + ".weight", init_uniform(in, out, bound, rng));
  if (bias) l.bias = params.add(name + ".bias", Matrix::Zero(1, out));
  return l;
}

Var Linear::apply(const ParamSet& params, const Var& x) const {
  Var y = ad::matmul(x, params[weight]);
  return has_bias ? ad::add_row(y, params[bias]) : y;
}

LayerNorm LayerNorm::create(ParamSet& params, const std::string& name,
                            int dim) {
  LayerNorm n;
  n.dim = dim;
  n.gain = params.add(name + ".gain", Matrix::Ones(1, dim));
  n.bias = params.add(name + ".bias", Matrix::Zero(1, dim));
  return n;
}

Var LayerNorm::apply(const ParamSet& params, const Var& x) const {
  const double inv_dim = 1.0 / static_cast<double>(dim);
  Var mean = ad::scale(ad::row_sum(x), inv_dim);
  Var centered = ad::sub(x, ad::broadcast_cols(mean, x.cols()));
  Var var = ad::scale(ad::row_sum(ad::mul(centered, centered)), inv_dim);
  Var inv_std = ad::pow(ad::add_scalar(var, 1e-5), -0.5);
  Var normed = ad::mul_col(centered, inv_std);
  return ad::add_row(ad::mul_row(normed, params[gain]), params[bias]);
}

LstmLayer LstmLayer::create(ParamSet& params, const std::string& name,
                            int input_dim, int hidden, Rng& rng) {
  if (input_dim <= 0 || hidden <= 0) {
    throw std::invalid_argument("LSTM " + name + ": dimensions must be > 0");
  }
  LstmLayer l;
  l.input_dim = input_dim;
  l.hidden = hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  l.w_input = params.add(name + ".w_input",
                         init_uniform(input_dim, 4 * hidden, bound, rng));
  l.w_hidden = params.add(name + ".w_hidden",
                          init_uniform(hidden, 4 * hidden, bound, rng));
  Matrix b = Matrix::Zero(1, 4 * hidden);
  b.middleCols(hidden, hidden).setOnes();  // forget gate
  l.bias = params.add(name + ".bias", std::move(b));
  return l;
}

LstmState LstmLayer::initial(Eigen::Index batch) const {
  return {ad::zeros(batch, hidden), ad::zeros(batch, hidden)};
}

LstmState LstmLayer::step(const ParamSet& params, const Var& x,
                          const LstmState& prev, const Matrix& mask) const {
  Var gates = ad::add_row(ad::add(ad::matmul(x, params[w_input]),
                                  ad::matmul(prev.h, params[w_hidden])),
                          params[bias]);
  Var sig = ad::sigmoid(ad::slice_cols(gates, 0, 3 * hidden));
  Var in_gate = ad::slice_cols(sig, 0, hidden);
  Var forget = ad::slice_cols(sig, hidden, hidden);
  Var out_gate = ad::slice_cols(sig, 2 * hidden, hidden);
  Var cand = ad::tanh(ad::slice_cols(gates, 3 * hidden, hidden));
  Var c = ad::add(ad::mul(forget, prev.c), ad::mul(in_gate, cand));
  Var h = ad::mul(out_gate, ad::tanh(c));
  if (mask.size() == 0 || mask.minCoeff() >= 1.0) return {h, c};
  Var keep = ad::constant(mask);
  Var hold = ad::constant((1.0 - mask.array()).matrix());
  return {ad::add(ad::mul_col(h, keep), ad::mul_col(prev.h, hold)),
          ad::add(ad::mul_col(c, keep), ad::mul_col(prev.c, hold))};
}

MultiHeadAttention MultiHeadAttention::create(ParamSet& params,
                                              const std::string& name, int dim,
                                              int heads, Rng& rng) {
  if (heads <= 0 || dim % heads != 0) {
    throw std::invalid_argument("attention " + name +
                                ": dim must be divisible by heads");
  }
  MultiHeadAttention a;
  a.dim = dim;
  a.heads = heads;
  a.query = Linear::create(params, name + ".query", dim, dim, rng);
  a.key = Linear::create(params, name + ".key", dim, dim, rng);
  a.value = Linear::create(params, name + ".value", dim, dim, rng);
  a.output = Linear::create(params, name + ".output", dim, dim, rng);
  return a;
}

Var MultiHeadAttention::apply(const ParamSet& params, const Var& queries,
                              const Var& memory, const Matrix& mask) const {
  const int head_dim = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Var q = query.apply(params, queries);
  Var k = key.apply(params, memory);
  Var v = value.apply(params, memory);
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = ad::slice_cols(q, h * head_dim, head_dim);
    Var kh = ad::slice_cols(k, h * head_dim, head_dim);
    Var vh = ad::slice_cols(v, h * head_dim, head_dim);
    Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    if (mask.size() != 0) scores = ad::add(scores, ad::constant(mask));
    outs.push_back(ad::matmul(ad::softmax_rows(scores), vh));
  }
  Var merged = heads == 1 ? outs.front() : ad::concat_cols(outs);
  return output.apply(params, merged);
}

FeedForward FeedForward::create(ParamSet& params, const std::string& name,
                                int dim, int hidden, Rng& rng) {
  return {Linear::create(params, name + ".inner", dim, hidden, rng),
          Linear::create(params, name + ".outer", hidden, dim, rng)};
}

Var FeedForward::apply(const ParamSet& params, const Var& x) const {
  return outer.apply(params, ad::relu(inner.apply(params, x)));
}

EncoderBlock EncoderBlock::create(ParamSet& params, const std::string& name,
                                  int dim, int heads, int ff_hidden, Rng& rng) {
  EncoderBlock b;
  b.norm_attn = LayerNorm::create(params, name + ".norm_attn", dim);
  b.attn = MultiHeadAttention::create(params, name + ".attn", dim, heads, rng);
  b.norm_ff = LayerNorm::create(params, name + ".norm_ff", dim);
  b.ff = FeedForward::create(params, name + ".ff", dim, ff_hidden, rng);
  return b;
}

Var EncoderBlock::apply(const ParamSet& params, const Var& x,
                        const Matrix& mask) const {
  Var normed = norm_attn.apply(params, x);
  Var h = ad::add(x, attn.apply(params, normed, normed, mask));
  return ad::add(h, ff.apply(params, norm_ff.apply(params, h)));
}

DecoderBlock DecoderBlock::create(ParamSet& params, const std::string& name,
                                  int dim, int heads, int ff_hidden, Rng& rng) {
  DecoderBlock b;
  b.norm_self = LayerNorm::create(params, name + ".norm_self", dim);
  b.self_attn =
      MultiHeadAttention::create(params, name + ".self_attn", dim, heads, rng);
  b.norm_cross = LayerNorm::create(params, name + ".norm_cross", dim);
  b.cross_attn =
      MultiHeadAttention::create(params, name + ".cross_attn", dim, heads, rng);
  b.norm_ff = LayerNorm::create(params, name + ".norm_ff", dim);
  b.ff = FeedForward::create(params, name + ".ff", dim, ff_hidden, rng);
  return b;
}

Var DecoderBlock::apply(const ParamSet& params, const Var& x,
                        const Var& memory, const Matrix& self_mask,
                        const Matrix& cross_mask) const {
  Var normed = norm_self.apply(params, x);
  Var h = ad::add(x, self_attn.apply(params, normed, normed, self_mask));
  h = ad::add(h, cross_attn.apply(params, norm_cross.apply(params, h), memory,
                                  cross_mask));
  return ad::add(h, ff.apply(params, norm_ff.apply(params, h)));
}

Matrix sinusoidal_positions(int length, int dim) {
  Matrix p(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      p(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return p;
}

Matrix causal_mask(int length) {
  Matrix m = Matrix::Zero(length, length);
  for (int r = 0; r < length; ++r) {
    for (int c = r + 1; c < length; ++c) m(r, c) = kMaskedLogit;
  }
  return m;
}

}  // namespace datamanip::nn
