#pragma once

#include <random>
#include <vector>

#include "uvl/attention.hpp"
#include "uvl/params.hpp"
#include "uvl/sparse.hpp"
#include "uvl/tensor.hpp"

namespace uvl {

struct DecoderConfig {
  int dim = 64;
  int heads = 4;
  int layers = 2;            // L
  int object_queries = 8;    // Q; one extra scene-level query is always added
  int sample_budget = 64;    // K_s, per level
  bool deep_supervision = true;
};

struct DecoderLayerParams {
  AttentionParams cross, self_attn;
  LayerNorm cross_ln, self_ln, ffn_ln;
  FeedForwardParams ffn;
  DecoderLayerParams() = default;
  DecoderLayerParams(ParamStore& ps, const std::string& name, int dim, int heads,
                     std::mt19937_64& rng)
      : cross(ps, name + ".cross", dim, heads, rng),
        self_attn(ps, name + ".self", dim, heads, rng),
        cross_ln(ps, name + ".cross_ln", dim),
        self_ln(ps, name + ".self_ln", dim),
        ffn_ln(ps, name + ".ffn_ln", dim),
        ffn(ps, name + ".ffn", dim, 4 * dim, rng) {}
};

struct DecoderParams {
  DecoderConfig cfg;
  Tensor latent_queries;              // (Q+1) x C: Q object queries then scene query
  std::vector<DecoderLayerParams> layers;
  std::vector<Linear> level_proj;     // one per cross-attention level (stages 1..S-1)
  LayerNorm final_ln;
  Linear mask_proj;                   // -> O^m
  Linear semantic_proj;               // -> O^s

  DecoderParams() = default;
  DecoderParams(ParamStore& ps, const DecoderConfig& cfg, int num_levels,
                std::mt19937_64& rng);
};

// Query features [object queries | scene query | text queries], final layer
// plus per-layer auxiliary copies when deep supervision is on.
struct DecoderOutputs {
  int object_queries = 0;  // Q
  int text_len = 0;        // L_T
  Tensor mask_embed;       // (Q+1) x C
  Tensor semantic;         // (Q+1+L_T) x C
  std::vector<Tensor> aux_mask_embed;
  std::vector<Tensor> aux_semantic;

  Tensor object_semantic() const { return slice_rows(semantic, 0, object_queries); }
  Tensor scene_semantic() const { return slice_rows(semantic, object_queries, 1); }
  Tensor text_semantic() const {
    return slice_rows(semantic, object_queries + 1, text_len);
  }
};

// Uniform sample without replacement (ascending) when available >= budget;
// otherwise all indices in order, padded by cycling so every index appears.
std::vector<int> sample_voxel_indices(int available, int budget, std::mt19937_64& rng);

// Additive attention bias from per-entry admit flags (row-major nq x nk).
// A row admitting nothing falls back to full attention.
Tensor attn_bias_from_admit(const std::vector<std::uint8_t>& admit, int nq, int nk);

// Fixed sinusoidal features of voxel positions (coords scaled by stride).
Tensor fourier_positions(const std::vector<BCoord>& coords, const std::vector<int>& idx,
                         int stride, int dim);

// text_feats may be undefined (no text queries). Voxel sample indices are drawn
// once per call and reused at every layer. With causal=true the text block is
// lower-triangular and object/scene queries do not attend text at all.
DecoderOutputs decoder_forward(const DecoderParams& params, const EncoderOutputs& enc,
                               const Tensor& text_feats, std::mt19937_64& rng,
                               bool causal = false);

}  // namespace uvl
