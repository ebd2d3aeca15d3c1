#include "uvl/decoder.hpp"

#include <algorithm>
#include <cmath>

namespace uvl {

DecoderParams::DecoderParams(ParamStore& ps, const DecoderConfig& config, int num_levels,
                             std::mt19937_64& rng)
    : cfg(config) {
  if (num_levels < 1) throw InputError("decoder: at least one feature level required");
  latent_queries = ps.add("decoder.latent_queries",
                          Tensor::randn({cfg.object_queries + 1, cfg.dim}, 0.02, rng, true));
  for (int l = 0; l < cfg.layers; ++l)
    layers.emplace_back(ps, "decoder.layer" + std::to_string(l), cfg.dim, cfg.heads, rng);
  for (int s = 0; s < num_levels; ++s)
    level_proj.emplace_back(ps, "decoder.level_proj" + std::to_string(s + 1), cfg.dim,
                            cfg.dim, rng);
  final_ln = LayerNorm(ps, "decoder.final_ln", cfg.dim);
  mask_proj = Linear(ps, "decoder.mask_proj", cfg.dim, cfg.dim, rng);
  semantic_proj = Linear(ps, "decoder.semantic_proj", cfg.dim, cfg.dim, rng);
}

std::vector<int> sample_voxel_indices(int available, int budget, std::mt19937_64& rng) {
  if (available < 1) throw InputError("sample_voxel_indices: empty voxel tensor");
  if (budget < 1) throw InputError("sample_voxel_indices: budget must be >= 1");
  std::vector<int> idx;
  idx.reserve(budget);
  if (available <= budget) {
    for (int i = 0; i < budget; ++i) idx.push_back(i % available);
    return idx;
  }
  // reservoir-free partial Fisher-Yates, then ascending for stable ordering
  std::vector<int> pool(available);
  for (int i = 0; i < available; ++i) pool[i] = i;
  for (int i = 0; i < budget; ++i) {
    std::uniform_int_distribution<int> pick(i, available - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  idx.assign(pool.begin(), pool.begin() + budget);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Tensor attn_bias_from_admit(const std::vector<std::uint8_t>& admit, int nq, int nk) {
  if (static_cast<int>(admit.size()) != nq * nk)
    throw ShapeError("attn_bias_from_admit: flag count mismatch");
  std::vector<double> bias(admit.size(), 0.0);
  for (int i = 0; i < nq; ++i) {
    bool any = false;
    for (int j = 0; j < nk; ++j) any = any || admit[static_cast<size_t>(i) * nk + j];
    if (!any) continue;  // fallback: full attention for this query
    for (int j = 0; j < nk; ++j)
      if (!admit[static_cast<size_t>(i) * nk + j])
        bias[static_cast<size_t>(i) * nk + j] = kAttnMaskBias;
  }
  return Tensor::from({nq, nk}, std::move(bias));
}

Tensor fourier_positions(const std::vector<BCoord>& coords, const std::vector<int>& idx,
                         int stride, int dim) {
  int n = static_cast<int>(idx.size());
  std::vector<double> out(static_cast<size_t>(n) * dim, 0.0);
  int bands = dim / 6;  // sin+cos per axis per band; any remainder stays zero
  for (int r = 0; r < n; ++r) {
    const BCoord& c = coords[idx[r]];
    for (int axis = 0; axis < 3; ++axis) {
      double pos = static_cast<double>(c[axis + 1]) * stride;
      for (int b = 0; b < bands; ++b) {
        double omega = 2.0 * M_PI * std::pow(2.0, b) / 256.0;
        out[static_cast<size_t>(r) * dim + (axis * bands + b) * 2] =
            std::sin(omega * pos);
        out[static_cast<size_t>(r) * dim + (axis * bands + b) * 2 + 1] =
            std::cos(omega * pos);
      }
    }
  }
  return Tensor::from({n, dim}, std::move(out));
}

namespace {

// Admit flags for object-query rows from current mask logits; scene query and
// text rows always use full attention.
Tensor masked_attn_bias(const Tensor& mask_logits, int num_queries, int num_keys,
                        int object_queries) {
  std::vector<std::uint8_t> admit(static_cast<size_t>(num_queries) * num_keys, 1);
  for (int qi = 0; qi < object_queries; ++qi)
    for (int j = 0; j < num_keys; ++j)
      admit[static_cast<size_t>(qi) * num_keys + j] = mask_logits.at(qi, j) > 0.0;
  return attn_bias_from_admit(admit, num_queries, num_keys);
}

Tensor causal_self_bias(int object_block, int text_len) {
  int n = object_block + text_len;
  std::vector<double> bias(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      bool allowed;
      if (i < object_block) {
        allowed = j < object_block;  // latent queries never read text
      } else {
        allowed = j < object_block || j <= i;  // text: earlier positions only
      }
      if (!allowed) bias[static_cast<size_t>(i) * n + j] = kAttnMaskBias;
    }
  return Tensor::from({n, n}, std::move(bias));
}

}  // namespace

DecoderOutputs decoder_forward(const DecoderParams& params, const EncoderOutputs& enc,
                               const Tensor& text_feats, std::mt19937_64& rng,
                               bool causal) {
  const DecoderConfig& cfg = params.cfg;
  const int S = enc.num_stages();
  const int num_levels = S - 1;
  if (num_levels != static_cast<int>(params.level_proj.size()))
    throw InputError("decoder_forward: encoder stage count does not match params");
  const int Q = cfg.object_queries;
  const int text_len = text_feats.defined() ? text_feats.rows() : 0;
  const int nq = Q + 1 + text_len;

  // Voxel features per level, sampled once and reused at every layer.
  std::vector<Tensor> level_feats(num_levels);
  for (int s = 0; s < num_levels; ++s) {
    const SparseVoxelTensor& stage = enc.stages[s];
    std::vector<int> idx = sample_voxel_indices(stage.size(), cfg.sample_budget, rng);
    Tensor sampled = params.level_proj[s](gather_rows(stage.features, idx));
    level_feats[s] = add(sampled, fourier_positions(stage.coords, idx, stage.stride,
                                                    cfg.dim));
  }

  Tensor x = text_feats.defined() ? concat_rows({params.latent_queries, text_feats})
                                  : params.latent_queries;
  Tensor self_bias = causal ? causal_self_bias(Q + 1, text_len) : Tensor{};

  DecoderOutputs out;
  out.object_queries = Q;
  out.text_len = text_len;

  auto project_heads = [&](const Tensor& state, Tensor& mask_embed, Tensor& semantic) {
    Tensor normed = params.final_ln(state);
    mask_embed = params.mask_proj(slice_rows(normed, 0, Q + 1));
    semantic = params.semantic_proj(normed);
  };

  for (int l = 0; l < cfg.layers; ++l) {
    const DecoderLayerParams& layer = params.layers[l];
    int level = l % num_levels;
    const Tensor& kv = level_feats[level];

    // Attention mask from the current mask predictions (no gradient through
    // the threshold; the bias is a constant).
    Tensor cur_mask_embed = params.mask_proj(params.final_ln(slice_rows(x, 0, Q + 1)));
    Tensor mask_logits = detach(matmul(cur_mask_embed, transpose(kv)));
    Tensor cross_bias = masked_attn_bias(mask_logits, nq, kv.rows(), Q);

    x = add(x, multi_head_attention(layer.cross, layer.cross_ln(x), kv, cross_bias));
    Tensor n = layer.self_ln(x);
    x = add(x, multi_head_attention(layer.self_attn, n, n, self_bias));
    x = add(x, layer.ffn(layer.ffn_ln(x)));

    if (cfg.deep_supervision && l + 1 < cfg.layers) {
      Tensor am, as;
      project_heads(x, am, as);
      out.aux_mask_embed.push_back(am);
      out.aux_semantic.push_back(as);
    }
  }

  project_heads(x, out.mask_embed, out.semantic);
  return out;
}

}  // namespace uvl
