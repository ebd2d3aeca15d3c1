#pragma once

#include <string>
#include <vector>

#include "uvl/checkpoint.hpp"
#include "uvl/data.hpp"
#include "uvl/model.hpp"

namespace uvl {

struct TrainOptions {
  std::string out_dir;
  std::string resume_path;  // continue from this checkpoint when non-empty
};

struct TrainResult {
  int steps_run = 0;
  std::string final_checkpoint;
  std::string loss_log_path;
};

// Round-robin multi-task training over the scenes per cfg.tasks. Writes a
// per-step CSV loss log and one checkpoint per epoch (plus the initial
// state); all randomness flows from a single generator seeded by the config,
// so identical inputs give bit-identical logs. Throws NumericError with the
// step number if a loss goes non-finite.
TrainResult train_model(Model& model, const std::vector<SceneSample>& scenes,
                        const TrainOptions& options);

}  // namespace uvl
