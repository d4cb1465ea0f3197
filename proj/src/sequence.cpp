#include "datamanip/sequence.hpp"

#include <algorithm>
#include <stdexcept>

namespace datamanip {

ad::Matrix one_hot_rows(std::span<const int> ids, int vocab_size) {
  ad::Matrix m = ad::Matrix::Zero(static_cast<Eigen::Index>(ids.size()), vocab_size);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab_size) {
      throw std::out_of_range("token id outside the vocabulary");
    }
    m(static_cast<Eigen::Index>(i), ids[i]) = 1.0;
  }
  return m;
}

RelaxedSentence RelaxedSentence::from_ids(std::span<const int> ids,
                                          int vocab_size) {
  RelaxedSentence s;
  s.probs = ad::constant(one_hot_rows(ids, vocab_size));
  s.hard.assign(ids.begin(), ids.end());
  return s;
}

ad::Var SeqSide::sequence(int b) const {
  std::vector<Eigen::Index> index;
  const int len = lengths.at(static_cast<std::size_t>(b));
  index.reserve(static_cast<std::size_t>(len));
  for (int t = 0; t < len; ++t) index.push_back(static_cast<Eigen::Index>(t) * batch + b);
  return ad::gather_rows(tokens, std::move(index));
}

SeqSide make_side(std::span<const ad::Var> sequences, int vocab_size) {
  SeqSide side;
  side.batch = static_cast<int>(sequences.size());
  for (const auto& s : sequences) {
    if (s.cols() != vocab_size) throw std::invalid_argument("make_side: vocab width");
    side.lengths.push_back(static_cast<int>(s.rows()));
    side.width = std::max(side.width, static_cast<int>(s.rows()));
  }
  const Eigen::Index rows = static_cast<Eigen::Index>(side.width) * side.batch;
  side.mask = ad::Matrix::Zero(side.batch, side.width);
  bool differentiable = false;
  for (const auto& s : sequences) differentiable = differentiable || s.requires_grad();

  ad::Matrix values = ad::Matrix::Zero(rows, vocab_size);
  for (int t = 0; t < side.width; ++t) {
    for (int b = 0; b < side.batch; ++b) {
      const auto r = static_cast<Eigen::Index>(t) * side.batch + b;
      if (t < side.lengths[static_cast<std::size_t>(b)]) {
        values.row(r) = sequences[static_cast<std::size_t>(b)].value().row(t);
        side.mask(b, t) = 1.0;
      } else {
        values(r, kPad) = 1.0;
      }
    }
  }
  if (!differentiable || !ad::grad_enabled()) {
    side.tokens = ad::constant(std::move(values));
    return side;
  }
  // Scatter each sequence into its time-major rows and add the constant
  // padding rows; the sum has exactly the values assembled above.
  std::vector<ad::Var> parts;
  ad::Matrix padding = values;
  for (int b = 0; b < side.batch; ++b) {
    const auto& s = sequences[static_cast<std::size_t>(b)];
    std::vector<Eigen::Index> index;
    for (int t = 0; t < side.lengths[static_cast<std::size_t>(b)]; ++t) {
      const auto r = static_cast<Eigen::Index>(t) * side.batch + b;
      index.push_back(r);
      padding.row(r).setZero();
    }
    if (s.requires_grad()) {
      parts.push_back(ad::scatter_add_rows(s, std::move(index), rows));
    } else {
      for (int t = 0; t < side.lengths[static_cast<std::size_t>(b)]; ++t) {
        padding.row(static_cast<Eigen::Index>(t) * side.batch + b) = s.value().row(t);
      }
    }
  }
  ad::Var acc = ad::constant(std::move(padding));
  for (const auto& p : parts) acc = ad::add(acc, p);
  side.tokens = acc;
  return side;
}

SeqSide make_side(std::span<const TokenIds> sequences, int vocab_size) {
  SeqSide side;
  side.batch = static_cast<int>(sequences.size());
  for (const auto& s : sequences) {
    side.lengths.push_back(static_cast<int>(s.size()));
    side.width = std::max(side.width, static_cast<int>(s.size()));
  }
  side.mask = ad::Matrix::Zero(side.batch, side.width);
  ad::Matrix values = ad::Matrix::Zero(
      static_cast<Eigen::Index>(side.width) * side.batch, vocab_size);
  for (int t = 0; t < side.width; ++t) {
    for (int b = 0; b < side.batch; ++b) {
      const auto r = static_cast<Eigen::Index>(t) * side.batch + b;
      const auto& s = sequences[static_cast<std::size_t>(b)];
      if (t < static_cast<int>(s.size())) {
        const int id = s[static_cast<std::size_t>(t)];
        if (id < 0 || id >= vocab_size) throw std::out_of_range("token id outside the vocabulary");
        values(r, id) = 1.0;
        side.mask(b, t) = 1.0;
      } else {
        values(r, kPad) = 1.0;
      }
    }
  }
  side.tokens = ad::constant(std::move(values));
  return side;
}

SeqBatch make_seq_batch(std::span<const RelaxedSentence> queries,
                        std::span<const RelaxedSentence> responses,
                        int vocab_size) {
  if (queries.size() != responses.size()) {
    throw std::invalid_argument("make_seq_batch: query/response count mismatch");
  }
  const ad::Var bos = ad::constant(one_hot_rows(std::vector<int>{kBos}, vocab_size));
  const ad::Var eos = ad::constant(one_hot_rows(std::vector<int>{kEos}, vocab_size));
  std::vector<ad::Var> src, dec, tgt;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (queries[i].size() == 0 || responses[i].size() == 0) {
      throw std::invalid_argument("make_seq_batch: empty sentence");
    }
    src.push_back(queries[i].probs);
    std::vector<ad::Var> d{bos, responses[i].probs};
    dec.push_back(ad::concat_rows(d));
    std::vector<ad::Var> g{responses[i].probs, eos};
    tgt.push_back(ad::concat_rows(g));
  }
  SeqBatch out;
  out.vocab_size = vocab_size;
  out.source = make_side(src, vocab_size);
  out.decoder_input = make_side(dec, vocab_size);
  out.target = make_side(tgt, vocab_size);
  return out;
}

SeqBatch make_seq_batch(const Batch& batch, int vocab_size) {
  std::vector<TokenIds> src, dec, tgt;
  for (const auto& p : batch.pairs) {
    if (p.query.empty() || p.response.empty()) {
      throw std::invalid_argument("make_seq_batch: empty sentence");
    }
    src.push_back(p.query);
    TokenIds d{kBos};
    d.insert(d.end(), p.response.begin(), p.response.end());
    dec.push_back(std::move(d));
    TokenIds g = p.response;
    g.push_back(kEos);
    tgt.push_back(std::move(g));
  }
  SeqBatch out;
  out.vocab_size = vocab_size;
  out.source = make_side(src, vocab_size);
  out.decoder_input = make_side(dec, vocab_size);
  out.target = make_side(tgt, vocab_size);
  return out;
}

}  // namespace datamanip
