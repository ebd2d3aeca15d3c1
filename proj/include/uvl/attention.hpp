#pragma once

#include <random>
#include <string>

#include "uvl/params.hpp"
#include "uvl/tensor.hpp"

namespace uvl {

// Additive attention bias large enough that exp() underflows to exactly zero
// after max-subtraction, making masked keys numerically invisible.
inline constexpr double kAttnMaskBias = -1e9;

struct AttentionParams {
  int heads = 1;
  Linear q, k, v, o;
  AttentionParams() = default;
  AttentionParams(ParamStore& ps, const std::string& name, int dim, int heads_,
                  std::mt19937_64& rng)
      : heads(heads_),
        q(ps, name + ".q", dim, dim, rng),
        k(ps, name + ".k", dim, dim, rng),
        v(ps, name + ".v", dim, dim, rng),
        o(ps, name + ".o", dim, dim, rng) {}
};

// Multi-head attention without residual. bias is an optional additive
// (nq x nk) constant of zeros and kAttnMaskBias entries.
inline Tensor multi_head_attention(const AttentionParams& p, const Tensor& query_in,
                                   const Tensor& kv_in, const Tensor& bias = {}) {
  int dim = p.q.w.cols();
  if (dim % p.heads != 0) throw ShapeError("attention: dim not divisible by heads");
  int dh = dim / p.heads;
  Tensor q = p.q(query_in);
  Tensor k = p.k(kv_in);
  Tensor v = p.v(kv_in);
  std::vector<Tensor> head_outs;
  head_outs.reserve(p.heads);
  for (int h = 0; h < p.heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dh)));
    if (bias.defined()) scores = add(scores, bias);
    head_outs.push_back(matmul(softmax_rows(scores), vh));
  }
  return p.o(concat_cols(head_outs));
}

struct FeedForwardParams {
  Linear fc1, fc2;
  FeedForwardParams() = default;
  FeedForwardParams(ParamStore& ps, const std::string& name, int dim, int hidden,
                    std::mt19937_64& rng)
      : fc1(ps, name + ".fc1", dim, hidden, rng), fc2(ps, name + ".fc2", hidden, dim, rng) {}
  Tensor operator()(const Tensor& x) const { return fc2(relu(fc1(x))); }
};

// Pre-LN self-attention transformer block.
struct TransformerBlockParams {
  AttentionParams attn;
  FeedForwardParams ffn;
  LayerNorm ln1, ln2;
  TransformerBlockParams() = default;
  TransformerBlockParams(ParamStore& ps, const std::string& name, int dim, int heads,
                         std::mt19937_64& rng)
      : attn(ps, name + ".attn", dim, heads, rng),
        ffn(ps, name + ".ffn", dim, 4 * dim, rng),
        ln1(ps, name + ".ln1", dim),
        ln2(ps, name + ".ln2", dim) {}

  Tensor operator()(const Tensor& x, const Tensor& bias = {}) const {
    Tensor n = ln1(x);
    Tensor y = add(x, multi_head_attention(attn, n, n, bias));
    return add(y, ffn(ln2(y)));
  }
};

}  // namespace uvl
