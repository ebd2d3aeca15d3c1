#include "uvl/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

namespace uvl {

namespace {

struct PreparedScene {
  VoxelGrid grid;
  GroundTruthInstances instances;
  GroundTruthInstances semantic;
  std::string caption;
  std::vector<Referral> referrals;
  int shape_class = 0;  // class of instance 0, for shape-level tasks
};

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string checkpoint_name(const std::string& dir, int epoch) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "epoch_%04d.ckpt", epoch);
  return dir + "/" + buf;
}

}  // namespace

TrainResult train_model(Model& model, const std::vector<SceneSample>& scenes,
                        const TrainOptions& options) {
  const TrainConfig& cfg = model.cfg;
  if (scenes.empty()) throw InputError("train: empty dataset");
  if (options.out_dir.empty()) throw InputError("train: output directory required");
  std::filesystem::create_directories(options.out_dir);

  std::vector<Task> tasks = parse_task_list(cfg.tasks);
  std::vector<PreparedScene> data;
  data.reserve(scenes.size());
  for (const auto& s : scenes) {
    PreparedScene p;
    p.grid = voxelize(s.cloud, cfg.voxel_size);
    p.instances = voxel_instances(p.grid);
    p.semantic = semantic_instances(p.grid);
    p.caption = s.caption;
    p.referrals = s.referrals;
    p.shape_class = p.instances.classes.empty() ? 0 : p.instances.classes.front();
    data.push_back(std::move(p));
  }
  const int n = static_cast<int>(data.size());

  AdamW opt;
  opt.config().lr = cfg.lr;
  std::mt19937_64 rng(cfg.seed + 0x9e3779b97f4a7c15ULL);
  int start_step = 0;
  if (!options.resume_path.empty()) {
    load_checkpoint(options.resume_path, model, &opt, &rng);
    start_step = static_cast<int>(opt.steps());
  }

  TrainResult result;
  result.loss_log_path = options.out_dir + "/loss_log.csv";
  std::ofstream log(result.loss_log_path,
                    start_step > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw InputError("train: cannot write " + result.loss_log_path);
  if (start_step == 0) {
    log << "step,task,lr,loss_cls,loss_mask,loss_grd,loss_cap,loss_ret,total\n";
    save_checkpoint(checkpoint_name(options.out_dir, 0), model, &opt, &rng);
    result.final_checkpoint = checkpoint_name(options.out_dir, 0);
  }

  std::vector<Tensor> params = model.store.tensors();
  const int total = cfg.total_steps();
  // Each task cycles through the dataset with its own counter; a global step
  // counter would stride by the task count and leave scenes permanently
  // unseen by some tasks. Replayed deterministically on resume.
  std::map<Task, int> task_steps;
  for (int s = 1; s <= start_step; ++s) task_steps[tasks[(s - 1) % tasks.size()]]++;
  for (int step = start_step + 1; step <= total; ++step) {
    Task task = tasks[(step - 1) % tasks.size()];
    int task_step = task_steps[task]++;
    model.store.zero_grad();

    Tensor cls, mask, grd, cap, ret;
    auto scene_at = [&](int i) -> PreparedScene& { return data[i % n]; };
    // deterministic batches: consecutive scenes per task occurrence
    int base = task_step * cfg.scene_batch;

    switch (task) {
      case Task::semantic_seg:
      case Task::instance_seg: {
        for (int b = 0; b < cfg.scene_batch; ++b) {
          PreparedScene& p = scene_at(base + b);
          const GroundTruthInstances& gt =
              task == Task::instance_seg ? p.instances : p.semantic;
          SegLosses l = segmentation_loss(model, p.grid, gt, rng);
          cls = cls.defined() ? add(cls, l.cls) : l.cls;
          mask = mask.defined() ? add(mask, l.mask) : l.mask;
        }
        cls = scale(cls, 1.0 / cfg.scene_batch);
        mask = scale(mask, 1.0 / cfg.scene_batch);
        break;
      }
      case Task::grounded_seg: {
        for (int b = 0; b < cfg.scene_batch; ++b) {
          PreparedScene& p = scene_at(base + b);
          Tensor l = grounded_seg_loss(model, p.grid, p.referrals, p.instances, rng);
          grd = grd.defined() ? add(grd, l) : l;
        }
        grd = scale(grd, 1.0 / cfg.scene_batch);
        break;
      }
      case Task::captioning: {
        for (int b = 0; b < cfg.scene_batch; ++b) {
          PreparedScene& p = scene_at(base + b);
          Tensor l = captioning_loss(model, p.grid, p.caption, rng);
          cap = cap.defined() ? add(cap, l) : l;
        }
        cap = scale(cap, 1.0 / cfg.scene_batch);
        break;
      }
      case Task::retrieval: {
        int pairs = std::min(cfg.pair_batch, n);
        std::vector<const VoxelGrid*> grids;
        std::vector<std::string> texts;
        int pbase = task_step * pairs;
        for (int b = 0; b < pairs; ++b) {
          PreparedScene& p = scene_at(pbase + b);
          grids.push_back(&p.grid);
          texts.push_back(p.caption);
        }
        ret = retrieval_loss(model, grids, texts, rng);
        break;
      }
      case Task::shape_classification: {
        for (int b = 0; b < cfg.scene_batch; ++b) {
          PreparedScene& p = scene_at(base + b);
          Tensor l = shape_classification_loss(model, p.grid, p.shape_class, rng);
          ret = ret.defined() ? add(ret, l) : l;
        }
        ret = scale(ret, 1.0 / cfg.scene_batch);
        break;
      }
    }

    Tensor total_t = total_loss({cls, mask, grd, cap, ret});
    double total_v = total_t.item();
    if (!std::isfinite(total_v))
      throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                         " (task " + task_name(task) + ")");
    backward(total_t);
    double lr = lr_at(cfg, step);
    opt.step(params, lr);

    auto val = [](const Tensor& t) { return t.defined() ? t.item() : 0.0; };
    log << step << "," << task_name(task) << "," << fmt17(lr) << "," << fmt17(val(cls))
        << "," << fmt17(val(mask)) << "," << fmt17(val(grd)) << "," << fmt17(val(cap))
        << "," << fmt17(val(ret)) << "," << fmt17(total_v) << "\n";

    if (step % cfg.steps_per_epoch == 0) {
      int epoch = step / cfg.steps_per_epoch;
      result.final_checkpoint = checkpoint_name(options.out_dir, epoch);
      save_checkpoint(result.final_checkpoint, model, &opt, &rng);
    }
    result.steps_run = step - start_step;
  }
  if (result.final_checkpoint.empty())
    result.final_checkpoint = checkpoint_name(options.out_dir, total / cfg.steps_per_epoch);
  return result;
}

}  // namespace uvl
