#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uvl/router.hpp"

namespace uvl {

// Flat training/model configuration. Serialized as "key = value" lines with
// dotted keys; `apply_preset` fills the named bundles.
struct TrainConfig {
  // model
  int dim = 32;
  int heads = 4;
  int decoder_layers = 2;
  int object_queries = 8;
  int sample_budget = 64;
  bool deep_supervision = true;
  int text_layers = 2;
  int max_text_len = 16;
  int vocab_size = 256;
  std::vector<int> unet_channels = {8, 16, 24};
  int residual_blocks = 1;
  double voxel_size = 0.08;
  double voxel_size_fine = 0.08;

  LossWeights loss;

  // optimization
  double lr = 1e-4;
  int warmup_steps = 10;
  int epochs = 10;
  int steps_per_epoch = 50;
  int scene_batch = 2;
  int pair_batch = 4;
  std::uint64_t seed = 1;
  std::string tasks =
      "instance_seg,semantic_seg,grounded_seg,captioning,retrieval,"
      "shape_classification";
  int top_k = 16;

  int total_steps() const { return epochs * steps_per_epoch; }
  void validate() const;  // throws InputError on non-positive fields
};

// Presets: "desk" (default toy scale), "paper" (published scale), and
// "finetune_grounded_seg" (20 epochs at 1e-5 on top of the current values).
void apply_preset(TrainConfig& cfg, const std::string& name);

// Warmup ramps linearly over the first warmup_steps steps; afterwards the
// rate drops by 10x at 50% and again at 70% of total steps. `step` is 1-based.
double lr_at(const TrainConfig& cfg, int step);

std::string config_to_text(const TrainConfig& cfg);
TrainConfig config_from_text(const std::string& text, const std::string& origin);
TrainConfig load_config(const std::string& path);
void save_config(const TrainConfig& cfg, const std::string& path);

// Comma-separated task list (cfg.tasks) -> parsed enum list.
std::vector<Task> parse_task_list(const std::string& tasks);

}  // namespace uvl
