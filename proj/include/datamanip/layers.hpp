#pragma once

// Functional building blocks. Each layer registers its tensors in a ParamSet
// and keeps only their indices; `apply` reads the tensors from whichever
// ParamSet it is handed.

#include <cstddef>
#include <string>
#include <vector>

#include "datamanip/autodiff.hpp"
#include "datamanip/params.hpp"
#include "datamanip/rng.hpp"

namespace datamanip::nn {

using ad::Matrix;
using ad::Var;

// Additive attention mask value for disallowed positions.
inline constexpr double kMaskedLogit = -1e9;

struct Linear {
  std::size_t weight = 0;
  std::size_t bias = 0;
  bool has_bias = true;
  int in = 0;
  int out = 0;

  static Linear create(ParamSet& params, const std::string& name, int in,
                       int out, Rng& rng, bool bias = true);
  Var apply(const ParamSet& params, const Var& x) const;
};

struct LayerNorm {
  std::size_t gain = 0;
  std::size_t bias = 0;
  int dim = 0;

  static LayerNorm create(ParamSet& params, const std::string& name, int dim);
  Var apply(const ParamSet& params, const Var& x) const;
};

struct LstmState {
  Var h;
  Var c;
};

// Single LSTM layer; gate order in the fused projection is [i, f, o, g].
struct LstmLayer {
  std::size_t w_input = 0;
  std::size_t w_hidden = 0;
  std::size_t bias = 0;
  int input_dim = 0;
  int hidden = 0;

  static LstmLayer create(ParamSet& params, const std::string& name,
                          int input_dim, int hidden, Rng& rng);
  LstmState initial(Eigen::Index batch) const;
  // `mask` (batch x 1, 0/1) freezes the state of rows whose position is
  // padding; pass an empty matrix when every row is live.
  LstmState step(const ParamSet& params, const Var& x, const LstmState& prev,
                 const Matrix& mask) const;
};

// Multi-head scaled dot-product attention over single sequences.
struct MultiHeadAttention {
  Linear query, key, value, output;
  int heads = 1;
  int dim = 0;

  static MultiHeadAttention create(ParamSet& params, const std::string& name,
                                   int dim, int heads, Rng& rng);
  // `mask` is additive, rows(queries) x rows(memory); empty for none.
  Var apply(const ParamSet& params, const Var& queries, const Var& memory,
            const Matrix& mask) const;
};

struct FeedForward {
  Linear inner, outer;

  static FeedForward create(ParamSet& params, const std::string& name,
                            int dim, int hidden, Rng& rng);
  Var apply(const ParamSet& params, const Var& x) const;
};

// Pre-norm transformer encoder block.
struct EncoderBlock {
  LayerNorm norm_attn, norm_ff;
  MultiHeadAttention attn;
  FeedForward ff;

  static EncoderBlock create(ParamSet& params, const std::string& name,
                             int dim, int heads, int ff_hidden, Rng& rng);
  Var apply(const ParamSet& params, const Var& x, const Matrix& mask) const;
};

// Pre-norm transformer decoder block with cross attention.
struct DecoderBlock {
  LayerNorm norm_self, norm_cross, norm_ff;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ff;

  static DecoderBlock create(ParamSet& params, const std::string& name,
                             int dim, int heads, int ff_hidden, Rng& rng);
  Var apply(const ParamSet& params, const Var& x, const Var& memory,
            const Matrix& self_mask, const Matrix& cross_mask) const;
};

// Sinusoidal position table, rows = positions.
Matrix sinusoidal_positions(int length, int dim);
Matrix causal_mask(int length);

}  // namespace datamanip::nn
