#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "uvl/tensor.hpp"

namespace uvl {

enum class Task {
  semantic_seg,
  instance_seg,
  grounded_seg,
  captioning,
  retrieval,
  shape_classification,
};

const char* task_name(Task t);
Task task_from_name(const std::string& name);

// Which functional heads a task exercises. Exactly the flagged heads may
// contribute gradient when training on that task.
struct HeadComposition {
  bool obj_cls = false;
  bool mask = false;
  bool grounding = false;
  bool text_gen = false;
  bool matching = false;
};

HeadComposition head_composition(Task t);

struct LossWeights {
  double cls = 2.0;
  double bce = 5.0;
  double dice = 5.0;
  double gc = 0.4;
  double cap = 2.0;
  double ret = 2.0;
  double bg_weight = 0.1;  // down-weight on background classification targets
};

// One-to-one minimal-cost assignment of min(n,m) (row, column) pairs,
// sorted by row index.
struct MatchResult {
  std::vector<std::pair<int, int>> assignment;
  double cost = 0.0;
};

// O(n^3) minimal-cost assignment on a dense n x m cost matrix (row-major).
// Ties break toward lower indices. NaN costs are rejected.
MatchResult hungarian(const std::vector<double>& cost, int n, int m);

// Per-scene instance ground truth: class id and a per-voxel 0/1 mask per
// instance, all masks over the same voxel set.
struct GroundTruthInstances {
  std::vector<int> classes;
  std::vector<std::vector<double>> masks;
};

// ---- classification head ----
// logits = O^s_objects (Q x C) against class-name embeddings ((K+1) x C);
// column K is the background class.
Tensor classify(const Tensor& obj_semantic, const Tensor& class_emb);
// Cross-entropy over all queries; unmatched queries target `background_class`
// with weight bg_weight. Scaled by lambda_cls.
Tensor loss_cls(const Tensor& class_logits, const MatchResult& match,
                const GroundTruthInstances& gt, int background_class,
                const LossWeights& w);

// ---- mask head ----
// Per-query per-voxel logits: first Q rows of O^m against V_S (N x C).
Tensor predict_masks(const Tensor& mask_embed, const Tensor& voxel_feats);
// Mean over matched pairs of lambda_bce*BCE + lambda_dice*Dice; zero scalar
// when nothing is matched.
Tensor loss_mask(const Tensor& mask_logits, const MatchResult& match,
                 const std::vector<std::vector<double>>& gt_masks,
                 const LossWeights& w);

// Assignment cost per (query, instance):
//   lambda_cls * (-softmax prob of the instance's class)
//   + lambda_bce * BCE(query mask, instance mask)
//   + lambda_dice * Dice(query mask, instance mask),
// evaluated numerically (no gradient flows through the matching itself).
// Zero instances -> empty result.
MatchResult match_instances(const Tensor& class_logits, const Tensor& mask_logits,
                            const GroundTruthInstances& gt, const LossWeights& w);

// ---- grounding head ----
// e^eta * T_emb (N_r x C) . O^s_objects^T, pre-softmax. eta is a learnable
// 1x1 scale parameter.
Tensor grounding_logits(const Tensor& text_emb, const Tensor& obj_semantic,
                        const Tensor& eta);
// softmax over queries; rows sum to 1.
Tensor grounding_similarity(const Tensor& text_emb, const Tensor& obj_semantic,
                            const Tensor& eta);
// lambda_gc * CE(logits, matched query per referred object)
// + BCE(category-existence logits, targets)
// + mask loss of each matched query against its referred object's mask.
Tensor loss_grounding(const Tensor& grounding_logits_, const std::vector<int>& matched_query,
                      const Tensor& tcls_logits, const std::vector<double>& tcls_targets,
                      const Tensor& mask_logits,
                      const std::vector<std::vector<double>>& referred_masks,
                      const LossWeights& w);

// ---- text generation head ----
// Next-token logits: O^s_text (L_T x C) against the token embedding table.
Tensor caption_logits(const Tensor& text_semantic, const Tensor& token_table);
// lambda_cap * CE averaged over positions whose target is not PAD (id 0);
// all-PAD targets give a zero scalar.
Tensor loss_caption(const Tensor& logits, const std::vector<int>& targets,
                    const LossWeights& w);

// ---- matching head ----
// Cosine similarities of L2-normalized embeddings scaled by e^{log(1/tau)}.
Tensor matching_similarity(const Tensor& shape_embs, const Tensor& text_embs,
                           const Tensor& log_inv_tau);
// lambda_ret * 0.5 * (row-wise CE + column-wise CE); targets[i] is the text
// column matching shape row i (a permutation).
Tensor loss_retrieval(const Tensor& similarity, const std::vector<int>& targets,
                      const LossWeights& w);

// Sum of the given loss scalars; undefined entries contribute nothing and an
// empty list gives a zero scalar.
Tensor total_loss(const std::vector<Tensor>& parts);

// ---- inference ----
struct InstancePrediction {
  int class_id = 0;
  double score = 0.0;
  std::vector<std::uint8_t> mask;  // per-voxel, binarized at probability 0.5
};

// Non-background predictions sorted by class score (desc, then query index),
// truncated to top_k.
std::vector<InstancePrediction> infer_instances(const Tensor& class_logits,
                                                const Tensor& mask_logits, int top_k);

// Per-voxel class map: each voxel takes the class of the highest-scoring
// prediction covering it; uncovered voxels fall back to the top prediction's
// class (0 when there are no predictions).
std::vector<int> infer_semantic(const std::vector<InstancePrediction>& preds,
                                int num_voxels);

// Structured text dump, one record per instance with a run-length-encoded
// mask (alternating zero/one run lengths, starting with zeros).
void write_predictions(std::ostream& out, const std::vector<InstancePrediction>& preds);
std::vector<InstancePrediction> read_predictions(std::istream& in,
                                                 const std::string& origin);

}  // namespace uvl
