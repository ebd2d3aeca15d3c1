#pragma once

#include <random>
#include <string>
#include <vector>

#include "uvl/config.hpp"
#include "uvl/data.hpp"
#include "uvl/decoder.hpp"
#include "uvl/router.hpp"
#include "uvl/sparse.hpp"
#include "uvl/text.hpp"

namespace uvl {

// The full network: sparse voxel U-Net, text encoder, query decoder, and the
// five functional heads. All parameters live in `store` in construction order.
struct Model {
  TrainConfig cfg;
  Vocabulary vocab;
  std::vector<std::string> class_names;  // K classes; background index = K

  ParamStore store;
  UNetParams unet;
  TextEncoderParams text;
  DecoderParams decoder;

  Linear cls_head;    // obj_cls head: object semantic -> class-embedding space
  Linear cap_head;    // text_gen head: text semantic -> token-embedding space
  Linear tcls_head;   // grounding head: sentence embedding -> K existence logits
  Linear shape_proj;  // matching head: scene semantic -> retrieval space
  Linear text_proj;   // matching head: sentence embedding -> retrieval space
  Tensor grounding_eta;  // 1x1, scale e^eta in the grounding softmax
  Tensor log_inv_tau;    // 1x1, contrastive temperature log(1/tau), init log(1/0.07)

  Model(const TrainConfig& cfg, Vocabulary vocab, std::vector<std::string> class_names);

  int background_class() const { return static_cast<int>(class_names.size()); }
  // Head parameter group for Table-2 routing checks:
  // head in {obj_cls, mask, grounding, text_gen, matching}.
  std::vector<Tensor> head_params(const std::string& head) const;
};

// Scene pass through the backbone. voxel_feats rows follow grid voxel order.
struct SceneEncoding {
  EncoderOutputs enc;
  Tensor voxel_feats;  // N x C full-resolution mask-head features
};
SceneEncoding encode_scene(const Model& m, const VoxelGrid& grid);

// (K+1) x C class-name embeddings (last row = "background").
Tensor class_embeddings(const Model& m);

// ---- per-task losses (single scene / batch item; callers accumulate) ----
struct SegLosses {
  Tensor cls, mask;
};
// Deep supervision applies the final layer's assignment to every auxiliary
// output as well; instance and semantic segmentation differ only in `gt`.
SegLosses segmentation_loss(const Model& m, const VoxelGrid& grid,
                            const GroundTruthInstances& gt, std::mt19937_64& rng);

Tensor grounded_seg_loss(const Model& m, const VoxelGrid& grid,
                         const std::vector<Referral>& referrals,
                         const GroundTruthInstances& gt, std::mt19937_64& rng);

Tensor captioning_loss(const Model& m, const VoxelGrid& grid, const std::string& caption,
                       std::mt19937_64& rng);

Tensor retrieval_loss(const Model& m, const std::vector<const VoxelGrid*>& grids,
                      const std::vector<std::string>& texts, std::mt19937_64& rng);

Tensor shape_classification_loss(const Model& m, const VoxelGrid& grid, int class_id,
                                 std::mt19937_64& rng);

// ---- inference ----
std::vector<InstancePrediction> infer_scene_instances(const Model& m,
                                                      const VoxelGrid& grid,
                                                      std::mt19937_64& rng);
std::vector<int> infer_scene_semantic(const Model& m, const VoxelGrid& grid,
                                      std::mt19937_64& rng);
// Binarized mask of the query the sentence grounds to.
std::vector<std::uint8_t> infer_grounding(const Model& m, const VoxelGrid& grid,
                                          const std::string& sentence,
                                          std::mt19937_64& rng);
// Greedy autoregressive decoding from BOS; stops at EOS or max_text_len.
std::vector<int> generate_caption_tokens(const Model& m, const VoxelGrid& grid,
                                         std::mt19937_64& rng);
// L2-normalizable retrieval embedding of a shape (1 x C).
Tensor shape_embedding(const Model& m, const VoxelGrid& grid, std::mt19937_64& rng);
// Argmax similarity against the class-name texts.
int classify_shape(const Model& m, const VoxelGrid& grid, std::mt19937_64& rng);

}  // namespace uvl
