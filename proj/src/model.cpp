#include "uvl/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace uvl {

namespace {

UNetConfig unet_config(const TrainConfig& cfg) {
  UNetConfig u;
  u.in_channels = 3;
  u.channels = cfg.unet_channels;
  u.hidden_dim = cfg.dim;
  u.residual_blocks = cfg.residual_blocks;
  return u;
}

TextEncoderConfig text_config(const TrainConfig& cfg, int vocab_size) {
  TextEncoderConfig t;
  t.dim = cfg.dim;
  t.layers = cfg.text_layers;
  t.heads = cfg.heads;
  t.max_len = cfg.max_text_len;
  t.vocab_size = vocab_size;
  return t;
}

DecoderConfig decoder_config(const TrainConfig& cfg) {
  DecoderConfig d;
  d.dim = cfg.dim;
  d.heads = cfg.heads;
  d.layers = cfg.decoder_layers;
  d.object_queries = cfg.object_queries;
  d.sample_budget = cfg.sample_budget;
  d.deep_supervision = cfg.deep_supervision;
  return d;
}

}  // namespace

Model::Model(const TrainConfig& config, Vocabulary v, std::vector<std::string> names)
    : cfg(config), vocab(std::move(v)), class_names(std::move(names)) {
  cfg.validate();
  if (class_names.empty()) throw InputError("model: class name list is empty");
  std::mt19937_64 rng(cfg.seed);
  unet = UNetParams(store, unet_config(cfg), rng);
  text = TextEncoderParams(store, text_config(cfg, vocab.size()), rng);
  decoder = DecoderParams(store, decoder_config(cfg),
                          static_cast<int>(cfg.unet_channels.size()) - 1, rng);
  cls_head = Linear(store, "head.cls", cfg.dim, cfg.dim, rng);
  cap_head = Linear(store, "head.cap", cfg.dim, cfg.dim, rng);
  tcls_head = Linear(store, "head.tcls", cfg.dim,
                     static_cast<int>(class_names.size()), rng);
  shape_proj = Linear(store, "head.shape_proj", cfg.dim, cfg.dim, rng);
  text_proj = Linear(store, "head.text_proj", cfg.dim, cfg.dim, rng);
  grounding_eta = store.add("head.grounding_eta", Tensor::zeros({1, 1}, true));
  log_inv_tau =
      store.add("head.log_inv_tau", Tensor::full({1, 1}, std::log(1.0 / 0.07), true));
}

std::vector<Tensor> Model::head_params(const std::string& head) const {
  if (head == "obj_cls") return {cls_head.w, cls_head.b};
  if (head == "mask") return {decoder.mask_proj.w, decoder.mask_proj.b};
  if (head == "grounding") return {grounding_eta, tcls_head.w, tcls_head.b};
  if (head == "text_gen") return {cap_head.w, cap_head.b};
  if (head == "matching")
    return {log_inv_tau, shape_proj.w, shape_proj.b, text_proj.w, text_proj.b};
  throw InputError("unknown head: " + head);
}

SceneEncoding encode_scene(const Model& m, const VoxelGrid& grid) {
  SceneEncoding se;
  se.enc = unet_encode(sparse_input({&grid}), m.unet);
  const SparseVoxelTensor& full = se.enc.full_resolution();
  if (full.size() != grid.size())
    throw NumericError("encode_scene: full-resolution stage lost voxels");
  // map stage rows back to grid voxel order
  std::map<IVec3, int> row_of;
  for (int r = 0; r < full.size(); ++r)
    row_of[{full.coords[r][1], full.coords[r][2], full.coords[r][3]}] = r;
  std::vector<int> perm(grid.size());
  for (int v = 0; v < grid.size(); ++v) {
    auto it = row_of.find(grid.coords[v]);
    if (it == row_of.end())
      throw NumericError("encode_scene: voxel missing from full-resolution stage");
    perm[v] = it->second;
  }
  se.voxel_feats = gather_rows(full.features, perm);
  return se;
}

Tensor class_embeddings(const Model& m) {
  std::vector<std::string> names = m.class_names;
  names.push_back("background");
  return embed_texts(m.text, m.vocab, names);
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

SegLosses segmentation_loss(const Model& m, const VoxelGrid& grid,
                            const GroundTruthInstances& gt, std::mt19937_64& rng) {
  const LossWeights& w = m.cfg.loss;
  const int q = m.cfg.object_queries;
  SceneEncoding se = encode_scene(m, grid);
  DecoderOutputs out = decoder_forward(m.decoder, se.enc, Tensor{}, rng);
  Tensor cemb = class_embeddings(m);

  auto head_outputs = [&](const Tensor& mask_embed, const Tensor& semantic) {
    Tensor logits = classify(m.cls_head(slice_rows(semantic, 0, q)), cemb);
    Tensor mlogits = predict_masks(mask_embed, se.voxel_feats);
    return std::pair<Tensor, Tensor>{logits, mlogits};
  };

  auto [logits, mlogits] = head_outputs(out.mask_embed, out.semantic);
  MatchResult match = match_instances(logits, mlogits, gt, w);

  SegLosses losses;
  losses.cls = loss_cls(logits, match, gt, m.background_class(), w);
  losses.mask = loss_mask(mlogits, match, gt.masks, w);
  // deep supervision reuses the final layer's assignment
  for (size_t a = 0; a < out.aux_mask_embed.size(); ++a) {
    auto [al, am] = head_outputs(out.aux_mask_embed[a], out.aux_semantic[a]);
    losses.cls = add(losses.cls, loss_cls(al, match, gt, m.background_class(), w));
    losses.mask = add(losses.mask, loss_mask(am, match, gt.masks, w));
  }
  return losses;
}

Tensor grounded_seg_loss(const Model& m, const VoxelGrid& grid,
                         const std::vector<Referral>& referrals,
                         const GroundTruthInstances& gt, std::mt19937_64& rng) {
  if (referrals.empty()) throw InputError("grounded_seg_loss: no referrals");
  const LossWeights& w = m.cfg.loss;
  const int q = m.cfg.object_queries;
  SceneEncoding se = encode_scene(m, grid);
  DecoderOutputs out = decoder_forward(m.decoder, se.enc, Tensor{}, rng);
  Tensor obj_sem = slice_rows(out.semantic, 0, q);
  Tensor mlogits = predict_masks(out.mask_embed, se.voxel_feats);

  // unique referred instances, in first-appearance order
  std::vector<int> inst_ids;
  for (const auto& r : referrals) {
    if (r.instance_id < 0 || r.instance_id >= static_cast<int>(gt.masks.size()))
      throw InputError("grounded_seg_loss: referral targets a missing instance");
    if (std::find(inst_ids.begin(), inst_ids.end(), r.instance_id) == inst_ids.end())
      inst_ids.push_back(r.instance_id);
  }

  // one-to-one query assignment by mask cost alone (no class supervision here)
  const int nv = grid.size();
  std::vector<double> cost(static_cast<size_t>(q) * inst_ids.size());
  for (int qi = 0; qi < q; ++qi) {
    for (size_t g = 0; g < inst_ids.size(); ++g) {
      const std::vector<double>& mask = gt.masks[inst_ids[g]];
      double bce = 0.0, inter = 0.0, psum = 0.0, gsum = 0.0;
      for (int v = 0; v < nv; ++v) {
        double x = mlogits.at(qi, v);
        bce += (x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x))) -
               x * mask[v];
        double p = 1.0 / (1.0 + std::exp(-x));
        inter += p * mask[v];
        psum += p;
        gsum += mask[v];
      }
      cost[static_cast<size_t>(qi) * inst_ids.size() + g] =
          w.bce * bce / nv + w.dice * (1.0 - 2.0 * inter / (psum + gsum + 1e-6));
    }
  }
  MatchResult match = hungarian(cost, q, static_cast<int>(inst_ids.size()));
  std::vector<int> query_of_instance(inst_ids.size(), -1);
  for (const auto& [qi, g] : match.assignment) query_of_instance[g] = qi;

  std::vector<std::string> sentences;
  std::vector<int> matched_query;
  std::vector<double> tcls_targets;
  std::vector<std::vector<double>> referred_masks;
  const int k = static_cast<int>(m.class_names.size());
  for (const auto& r : referrals) {
    sentences.push_back(r.sentence);
    size_t g = std::find(inst_ids.begin(), inst_ids.end(), r.instance_id) -
               inst_ids.begin();
    matched_query.push_back(query_of_instance[g]);
    referred_masks.push_back(gt.masks[r.instance_id]);
    for (int c = 0; c < k; ++c)
      tcls_targets.push_back(gt.classes[r.instance_id] == c ? 1.0 : 0.0);
  }

  Tensor temb = embed_texts(m.text, m.vocab, sentences);
  Tensor gl = grounding_logits(temb, obj_sem, m.grounding_eta);
  Tensor tcls = m.tcls_head(temb);
  return loss_grounding(gl, matched_query, tcls, tcls_targets, mlogits, referred_masks,
                        w);
}

Tensor captioning_loss(const Model& m, const VoxelGrid& grid, const std::string& caption,
                       std::mt19937_64& rng) {
  const LossWeights& w = m.cfg.loss;
  std::vector<int> ids = m.vocab.encode(caption, m.cfg.max_text_len);
  std::vector<int> inputs(ids.begin(), ids.end() - 1);
  std::vector<int> targets(ids.begin() + 1, ids.end());

  SceneEncoding se = encode_scene(m, grid);
  Tensor tf = encode_text(m.text, inputs, /*causal=*/true);
  DecoderOutputs out = decoder_forward(m.decoder, se.enc, tf, rng, /*causal=*/true);
  Tensor logits = caption_logits(m.cap_head(out.text_semantic()), m.text.token_embedding);
  return loss_caption(logits, targets, w);
}

Tensor retrieval_loss(const Model& m, const std::vector<const VoxelGrid*>& grids,
                      const std::vector<std::string>& texts, std::mt19937_64& rng) {
  if (grids.size() != texts.size() || grids.empty())
    throw InputError("retrieval_loss: need matching non-empty shape/text lists");
  std::vector<Tensor> scene_rows;
  for (const VoxelGrid* g : grids) {
    SceneEncoding se = encode_scene(m, *g);
    DecoderOutputs out = decoder_forward(m.decoder, se.enc, Tensor{}, rng);
    scene_rows.push_back(out.scene_semantic());
  }
  Tensor shape_embs = m.shape_proj(concat_rows(scene_rows));
  Tensor text_embs = m.text_proj(embed_texts(m.text, m.vocab, texts));
  Tensor sim = matching_similarity(shape_embs, text_embs, m.log_inv_tau);
  std::vector<int> targets(grids.size());
  for (size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<int>(i);
  return loss_retrieval(sim, targets, m.cfg.loss);
}

Tensor shape_classification_loss(const Model& m, const VoxelGrid& grid, int class_id,
                                 std::mt19937_64& rng) {
  if (class_id < 0 || class_id >= static_cast<int>(m.class_names.size()))
    throw InputError("shape_classification_loss: class id out of range");
  Tensor emb = shape_embedding(m, grid, rng);
  Tensor name_embs = m.text_proj(embed_texts(m.text, m.vocab, m.class_names));
  Tensor sim = matching_similarity(emb, name_embs, m.log_inv_tau);
  return scale(cross_entropy_rows(sim, {class_id}), m.cfg.loss.ret);
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

std::vector<InstancePrediction> infer_scene_instances(const Model& m,
                                                      const VoxelGrid& grid,
                                                      std::mt19937_64& rng) {
  const int q = m.cfg.object_queries;
  SceneEncoding se = encode_scene(m, grid);
  DecoderOutputs out = decoder_forward(m.decoder, se.enc, Tensor{}, rng);
  Tensor logits = classify(m.cls_head(slice_rows(out.semantic, 0, q)),
                           class_embeddings(m));
  Tensor mlogits = predict_masks(out.mask_embed, se.voxel_feats);
  return infer_instances(logits, mlogits, m.cfg.top_k);
}

std::vector<int> infer_scene_semantic(const Model& m, const VoxelGrid& grid,
                                      std::mt19937_64& rng) {
  return infer_semantic(infer_scene_instances(m, grid, rng), grid.size());
}

std::vector<std::uint8_t> infer_grounding(const Model& m, const VoxelGrid& grid,
                                          const std::string& sentence,
                                          std::mt19937_64& rng) {
  const int q = m.cfg.object_queries;
  SceneEncoding se = encode_scene(m, grid);
  DecoderOutputs out = decoder_forward(m.decoder, se.enc, Tensor{}, rng);
  Tensor temb = embed_texts(m.text, m.vocab, {sentence});
  Tensor sim = grounding_similarity(temb, slice_rows(out.semantic, 0, q),
                                    m.grounding_eta);
  int best = 0;
  for (int i = 1; i < q; ++i)
    if (sim.at(0, i) > sim.at(0, best)) best = i;
  Tensor mlogits = predict_masks(out.mask_embed, se.voxel_feats);
  std::vector<std::uint8_t> mask(grid.size());
  for (int v = 0; v < grid.size(); ++v) mask[v] = mlogits.at(best, v) > 0.0;
  return mask;
}

std::vector<int> generate_caption_tokens(const Model& m, const VoxelGrid& grid,
                                         std::mt19937_64& rng) {
  SceneEncoding se = encode_scene(m, grid);
  std::vector<int> ids = {Vocabulary::kBos};
  while (static_cast<int>(ids.size()) < m.cfg.max_text_len) {
    Tensor tf = encode_text(m.text, ids, /*causal=*/true);
    DecoderOutputs out = decoder_forward(m.decoder, se.enc, tf, rng, /*causal=*/true);
    Tensor logits =
        caption_logits(m.cap_head(out.text_semantic()), m.text.token_embedding);
    int last = static_cast<int>(ids.size()) - 1;
    int best = 0;
    for (int v = 1; v < logits.cols(); ++v)
      if (logits.at(last, v) > logits.at(last, best)) best = v;
    ids.push_back(best);
    if (best == Vocabulary::kEos) break;
  }
  return ids;
}

Tensor shape_embedding(const Model& m, const VoxelGrid& grid, std::mt19937_64& rng) {
  SceneEncoding se = encode_scene(m, grid);
  DecoderOutputs out = decoder_forward(m.decoder, se.enc, Tensor{}, rng);
  return m.shape_proj(out.scene_semantic());
}

int classify_shape(const Model& m, const VoxelGrid& grid, std::mt19937_64& rng) {
  Tensor emb = shape_embedding(m, grid, rng);
  Tensor name_embs = m.text_proj(embed_texts(m.text, m.vocab, m.class_names));
  Tensor sim = matching_similarity(emb, name_embs, m.log_inv_tau);
  int best = 0;
  for (int c = 1; c < sim.cols(); ++c)
    if (sim.at(0, c) > sim.at(0, best)) best = c;
  return best;
}

}  // namespace uvl
