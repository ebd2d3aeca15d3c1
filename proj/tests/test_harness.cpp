// Configuration, synthetic data, checkpointing and the training loop.
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "uvl/checkpoint.hpp"
#include "uvl/config.hpp"
#include "uvl/data.hpp"
#include "uvl/model.hpp"
#include "uvl/train.hpp"

using namespace uvl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("uvl_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.steps_per_epoch = 6;
  cfg.scene_batch = 1;
  cfg.pair_batch = 2;
  return cfg;
}

std::vector<SceneSample> tiny_dataset(std::uint64_t seed = 7, int scenes = 3) {
  DatasetSpec spec;
  spec.num_scenes = scenes;
  spec.min_instances = 2;
  spec.max_instances = 2;
  spec.points_per_instance = 48;
  spec.referrals_per_scene = 1;
  return generate_dataset(spec, seed);
}

Vocabulary dataset_vocab(const std::vector<SceneSample>& scenes) {
  std::vector<std::string> corpus;
  for (const auto& s : scenes) {
    corpus.push_back(s.caption);
    for (const auto& r : s.referrals) corpus.push_back(r.sentence);
  }
  for (const auto& c : kShapeNames) corpus.push_back(c);
  corpus.push_back("background");
  return Vocabulary::build(corpus, 256);
}

bool all_zero(const Tensor& t) {
  Tensor tt = t;
  for (double g : tt.grad())
    if (g != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("config text round trip preserves every field") {
  TrainConfig cfg;
  cfg.dim = 48;
  cfg.heads = 6;
  cfg.decoder_layers = 3;
  cfg.object_queries = 5;
  cfg.sample_budget = 33;
  cfg.deep_supervision = false;
  cfg.text_layers = 4;
  cfg.max_text_len = 12;
  cfg.vocab_size = 123;
  cfg.unet_channels = {4, 8, 12, 16};
  cfg.residual_blocks = 2;
  cfg.voxel_size = 0.05;
  cfg.voxel_size_fine = 0.025;
  cfg.loss.cls = 1.5;
  cfg.loss.bg_weight = 0.2;
  cfg.lr = 3e-4;
  cfg.warmup_steps = 7;
  cfg.epochs = 4;
  cfg.steps_per_epoch = 11;
  cfg.scene_batch = 3;
  cfg.pair_batch = 5;
  cfg.seed = 99;
  cfg.tasks = "captioning,retrieval";
  cfg.top_k = 9;

  TrainConfig back = config_from_text(config_to_text(cfg), "test");
  CHECK(back.dim == cfg.dim);
  CHECK(back.heads == cfg.heads);
  CHECK(back.decoder_layers == cfg.decoder_layers);
  CHECK(back.object_queries == cfg.object_queries);
  CHECK(back.sample_budget == cfg.sample_budget);
  CHECK(back.deep_supervision == cfg.deep_supervision);
  CHECK(back.text_layers == cfg.text_layers);
  CHECK(back.max_text_len == cfg.max_text_len);
  CHECK(back.vocab_size == cfg.vocab_size);
  CHECK(back.unet_channels == cfg.unet_channels);
  CHECK(back.residual_blocks == cfg.residual_blocks);
  CHECK(back.voxel_size == cfg.voxel_size);
  CHECK(back.voxel_size_fine == cfg.voxel_size_fine);
  CHECK(back.loss.cls == cfg.loss.cls);
  CHECK(back.loss.bg_weight == cfg.loss.bg_weight);
  CHECK(back.lr == cfg.lr);
  CHECK(back.warmup_steps == cfg.warmup_steps);
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.steps_per_epoch == cfg.steps_per_epoch);
  CHECK(back.scene_batch == cfg.scene_batch);
  CHECK(back.pair_batch == cfg.pair_batch);
  CHECK(back.seed == cfg.seed);
  CHECK(back.tasks == cfg.tasks);
  CHECK(back.top_k == cfg.top_k);
}

TEST_CASE("config parsing rejects unknown keys and bad values") {
  CHECK_THROWS_AS(config_from_text("model.wat = 3\n", "t"), ParseError);
  CHECK_THROWS_AS(config_from_text("model.dim\n", "t"), ParseError);
  TrainConfig bad;
  bad.dim = 0;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad = TrainConfig{};
  bad.heads = 5;  // dim 32 not divisible
  CHECK_THROWS_AS(bad.validate(), InputError);
  CHECK_THROWS_AS(parse_task_list("instance_seg,flying"), InputError);
}

TEST_CASE("presets change scale and fine-tuning narrows the task list") {
  TrainConfig desk;
  apply_preset(desk, "desk");
  CHECK(desk.dim == 32);

  TrainConfig paper;
  apply_preset(paper, "paper");
  CHECK(paper.dim == 256);
  CHECK(paper.heads == 8);
  CHECK(paper.object_queries == 150);
  CHECK(paper.decoder_layers == 15);
  CHECK(paper.unet_channels == std::vector<int>{32, 64, 128, 256});

  TrainConfig ft;
  apply_preset(ft, "finetune_grounded_seg");
  CHECK(ft.tasks == "grounded_seg");
  CHECK(ft.lr == 1e-5);
  CHECK(ft.epochs == 20);

  TrainConfig junk;
  CHECK_THROWS_AS(apply_preset(junk, "galaxy"), InputError);
}

TEST_CASE("learning rate warms up linearly then steps down at 50% and 70%") {
  TrainConfig cfg;
  cfg.lr = 1.0;
  cfg.warmup_steps = 10;
  cfg.epochs = 10;
  cfg.steps_per_epoch = 10;  // 100 total
  CHECK(lr_at(cfg, 1) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(lr_at(cfg, 5) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(lr_at(cfg, 10) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lr_at(cfg, 49) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lr_at(cfg, 50) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(lr_at(cfg, 69) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(lr_at(cfg, 70) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(lr_at(cfg, 100) == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("dataset generation is deterministic per seed") {
  auto a = tiny_dataset(7);
  auto b = tiny_dataset(7);
  auto c = tiny_dataset(8);
  REQUIRE(a.size() == b.size());
  bool identical = true;
  for (size_t i = 0; i < a.size(); ++i) {
    std::ostringstream sa, sb;
    write_upc(a[i].cloud, sa);
    write_upc(b[i].cloud, sb);
    identical = identical && sa.str() == sb.str() && a[i].caption == b[i].caption;
  }
  CHECK(identical);
  bool differs = false;
  for (size_t i = 0; i < std::min(a.size(), c.size()); ++i) {
    std::ostringstream sa, sc;
    write_upc(a[i].cloud, sa);
    write_upc(c[i].cloud, sc);
    differs = differs || sa.str() != sc.str();
  }
  CHECK(differs);
}

TEST_CASE("generated scenes have sane labels and resolvable referrals") {
  auto scenes = tiny_dataset(11, 6);
  for (const auto& s : scenes) {
    REQUIRE(!s.cloud.positions.empty());
    std::map<int, int> per_instance;
    for (size_t i = 0; i < s.cloud.positions.size(); ++i) {
      int sem = s.cloud.semantic[i];
      CHECK(sem >= 0);
      CHECK(sem < static_cast<int>(kShapeNames.size()));
      per_instance[s.cloud.instance[i]]++;
    }
    for (const auto& [id, count] : per_instance) {
      CHECK(id >= 0);
      CHECK(count >= 20);
    }
    CHECK(!s.caption.empty());
    for (const auto& r : s.referrals) {
      CHECK(per_instance.count(r.instance_id) == 1);
      CHECK(!r.sentence.empty());
    }
  }
}

TEST_CASE("voxel ground truth masks partition the grid by instance") {
  auto scenes = tiny_dataset(3, 1);
  VoxelGrid grid = voxelize(scenes[0].cloud, 0.08);
  GroundTruthInstances gt = voxel_instances(grid);
  REQUIRE(!gt.classes.empty());
  std::vector<int> covered(grid.coords.size(), 0);
  for (size_t i = 0; i < gt.masks.size(); ++i) {
    REQUIRE(gt.masks[i].size() == grid.coords.size());
    for (size_t v = 0; v < gt.masks[i].size(); ++v)
      if (gt.masks[i][v] > 0.5) covered[v]++;
  }
  for (int c : covered) CHECK(c == 1);  // every voxel in exactly one instance

  GroundTruthInstances sem = semantic_instances(grid);
  std::set<int> classes(sem.classes.begin(), sem.classes.end());
  CHECK(classes.size() == sem.classes.size());  // one mask per class
}

TEST_CASE("dataset save/load round trip through the manifest") {
  fs::path dir = fresh_dir("dataset");
  auto scenes = tiny_dataset(5, 2);
  std::string manifest = save_dataset(scenes, dir.string(), "sc");
  auto back = load_dataset(manifest);
  REQUIRE(back.size() == scenes.size());
  for (size_t i = 0; i < scenes.size(); ++i) {
    CHECK(back[i].caption == scenes[i].caption);
    REQUIRE(back[i].referrals.size() == scenes[i].referrals.size());
    for (size_t r = 0; r < scenes[i].referrals.size(); ++r) {
      CHECK(back[i].referrals[r].sentence == scenes[i].referrals[r].sentence);
      CHECK(back[i].referrals[r].instance_id == scenes[i].referrals[r].instance_id);
    }
    REQUIRE(back[i].cloud.positions.size() == scenes[i].cloud.positions.size());
    std::ostringstream sa, sb;
    write_upc(scenes[i].cloud, sa);
    write_upc(back[i].cloud, sb);
    CHECK(sa.str() == sb.str());
  }
}

TEST_CASE("every task loss is finite and trains only its own heads") {
  auto scenes = tiny_dataset(21, 2);
  TrainConfig cfg = tiny_config();
  Model model(cfg, dataset_vocab(scenes), kShapeNames);
  std::mt19937_64 rng(5);
  VoxelGrid grid = voxelize(scenes[0].cloud, cfg.voxel_size);
  GroundTruthInstances inst = voxel_instances(grid);

  SUBCASE("instance segmentation skips text and retrieval heads") {
    model.store.zero_grad();
    SegLosses l = segmentation_loss(model, grid, inst, rng);
    Tensor total = add(l.cls, l.mask);
    CHECK(std::isfinite(total.item()));
    backward(total);
    CHECK(!all_zero(model.cls_head.w));
    CHECK(all_zero(model.cap_head.w));
    CHECK(all_zero(model.grounding_eta));
    CHECK(all_zero(model.shape_proj.w));
    CHECK(all_zero(model.log_inv_tau));
  }
  SUBCASE("captioning skips the object classification head") {
    model.store.zero_grad();
    Tensor l = captioning_loss(model, grid, scenes[0].caption, rng);
    CHECK(std::isfinite(l.item()));
    backward(l);
    CHECK(!all_zero(model.cap_head.w));
    CHECK(all_zero(model.cls_head.w));
    CHECK(all_zero(model.shape_proj.w));
  }
  SUBCASE("grounding trains the grounding head only") {
    model.store.zero_grad();
    Tensor l = grounded_seg_loss(model, grid, scenes[0].referrals, inst, rng);
    CHECK(std::isfinite(l.item()));
    backward(l);
    CHECK(!all_zero(model.grounding_eta));
    CHECK(!all_zero(model.tcls_head.w));
    CHECK(all_zero(model.cls_head.w));
    CHECK(all_zero(model.cap_head.w));
  }
  SUBCASE("retrieval and shape classification use the matching head") {
    model.store.zero_grad();
    std::vector<const VoxelGrid*> grids{&grid};
    VoxelGrid g1 = voxelize(scenes[1].cloud, cfg.voxel_size);
    grids.push_back(&g1);
    Tensor l = retrieval_loss(model, grids, {scenes[0].caption, scenes[1].caption}, rng);
    CHECK(std::isfinite(l.item()));
    backward(l);
    CHECK(!all_zero(model.shape_proj.w));
    CHECK(!all_zero(model.text_proj.w));
    CHECK(!all_zero(model.log_inv_tau));
    CHECK(all_zero(model.cls_head.w));

    model.store.zero_grad();
    Tensor sc = shape_classification_loss(model, grid, inst.classes[0], rng);
    CHECK(std::isfinite(sc.item()));
    backward(sc);
    CHECK(!all_zero(model.shape_proj.w));
    CHECK(all_zero(model.cap_head.w));
  }
}

TEST_CASE("head parameter groups are disjoint across distinct heads") {
  auto scenes = tiny_dataset(2, 1);
  Model model(tiny_config(), dataset_vocab(scenes), kShapeNames);
  auto ids = [&](const std::string& head) {
    std::set<const void*> s;
    for (const Tensor& t : model.head_params(head)) s.insert(t.node().get());
    CHECK(!s.empty());
    return s;
  };
  auto obj = ids("obj_cls"), msk = ids("mask"), grd = ids("grounding");
  auto txt = ids("text_gen"), mat = ids("matching");
  auto disjoint = [](const std::set<const void*>& a, const std::set<const void*>& b) {
    for (const void* p : a)
      if (b.count(p)) return false;
    return true;
  };
  CHECK(disjoint(obj, msk));
  CHECK(disjoint(obj, grd));
  CHECK(disjoint(txt, mat));
  CHECK(disjoint(grd, mat));
  CHECK_THROWS_AS(model.head_params("nope"), InputError);
}

TEST_CASE("checkpoint round trip reproduces the forward pass bit-exactly") {
  fs::path dir = fresh_dir("ckpt");
  auto scenes = tiny_dataset(31, 1);
  TrainConfig cfg = tiny_config();
  Model model(cfg, dataset_vocab(scenes), kShapeNames);
  VoxelGrid grid = voxelize(scenes[0].cloud, cfg.voxel_size);

  std::mt19937_64 rng(9);
  Tensor before = captioning_loss(model, grid, scenes[0].caption, rng);

  std::mt19937_64 saved_rng(12345);
  std::string path = (dir / "model.ckpt").string();
  save_checkpoint(path, model, nullptr, &saved_rng);

  CheckpointMeta meta = read_checkpoint_meta(path);
  CHECK(meta.version == 1);
  CHECK(!meta.has_optimizer);
  TrainConfig stored = config_from_text(meta.config_text, "meta");
  CHECK(stored.dim == cfg.dim);
  CHECK(stored.seed == cfg.seed);

  std::mt19937_64 restored_rng;
  auto loaded = load_model(path, nullptr, &restored_rng);
  CHECK(restored_rng == saved_rng);
  CHECK(loaded->class_names == model.class_names);
  CHECK(loaded->vocab.size() == model.vocab.size());

  std::mt19937_64 rng2(9);
  Tensor after = captioning_loss(*loaded, grid, scenes[0].caption, rng2);
  CHECK(before.item() == after.item());  // bit-exact

  // parameters are verified against the stored shapes
  TrainConfig other = cfg;
  other.dim = 16;
  other.heads = 2;
  Model mismatched(other, dataset_vocab(scenes), kShapeNames);
  CHECK_THROWS(load_checkpoint(path, mismatched, nullptr, nullptr));
}

TEST_CASE("training logs a consistent loss decomposition and checkpoints per epoch") {
  fs::path dir = fresh_dir("train");
  auto scenes = tiny_dataset(41, 2);
  TrainConfig cfg = tiny_config();
  Model model(cfg, dataset_vocab(scenes), kShapeNames);

  TrainOptions opts;
  opts.out_dir = (dir / "run").string();
  TrainResult res = train_model(model, scenes, opts);
  CHECK(res.steps_run == cfg.total_steps());
  CHECK(fs::exists(dir / "run" / "epoch_0000.ckpt"));
  CHECK(fs::exists(res.final_checkpoint));
  CHECK(res.final_checkpoint == (dir / "run" / "epoch_0001.ckpt").string());

  std::ifstream log(res.loss_log_path);
  REQUIRE(log.good());
  std::string line;
  REQUIRE(std::getline(log, line));
  CHECK(line == "step,task,lr,loss_cls,loss_mask,loss_grd,loss_cap,loss_ret,total");
  int rows = 0;
  while (std::getline(log, line)) {
    std::istringstream ss(line);
    std::string step, task;
    std::getline(ss, step, ',');
    std::getline(ss, task, ',');
    double vals[7];
    for (double& v : vals) {
      std::string f;
      REQUIRE(std::getline(ss, f, ','));
      v = std::stod(f);
    }
    double sum = vals[1] + vals[2] + vals[3] + vals[4] + vals[5];
    CHECK(std::abs(sum - vals[6]) < 1e-9);  // total = sum of components
    CHECK(std::isfinite(vals[6]));
    rows++;
  }
  CHECK(rows == cfg.total_steps());
}

TEST_CASE("zero-epoch training still writes the initial checkpoint") {
  fs::path dir = fresh_dir("train0");
  auto scenes = tiny_dataset(43, 1);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 0;
  Model model(cfg, dataset_vocab(scenes), kShapeNames);
  TrainOptions opts;
  opts.out_dir = (dir / "run").string();
  TrainResult res = train_model(model, scenes, opts);
  CHECK(res.steps_run == 0);
  CHECK(fs::exists(dir / "run" / "epoch_0000.ckpt"));
  CHECK(!fs::exists(dir / "run" / "epoch_0001.ckpt"));
}

TEST_CASE("identical runs are bit-identical and resume matches an unbroken run") {
  fs::path dir = fresh_dir("determinism");
  auto scenes = tiny_dataset(47, 2);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  cfg.steps_per_epoch = 4;

  auto run = [&](const std::string& name, const std::string& resume) {
    TrainOptions opts;
    opts.out_dir = (dir / name).string();
    opts.resume_path = resume;
    if (resume.empty()) {
      Model model(cfg, dataset_vocab(scenes), kShapeNames);
      return train_model(model, scenes, opts);
    }
    auto model = load_model(resume);
    return train_model(*model, scenes, opts);
  };

  TrainResult a = run("a", "");
  TrainResult b = run("b", "");
  CHECK(slurp(a.loss_log_path) == slurp(b.loss_log_path));
  CHECK(slurp(a.final_checkpoint) == slurp(b.final_checkpoint));

  // resume from the mid-run checkpoint of `a`; the tail must match exactly
  TrainResult c = run("c", (dir / "a" / "epoch_0001.ckpt").string());
  CHECK(c.steps_run == 4);
  CHECK(slurp(c.final_checkpoint) == slurp(a.final_checkpoint));
}

TEST_CASE("a diverging loss aborts with the offending step in the message") {
  fs::path dir = fresh_dir("diverge");
  auto scenes = tiny_dataset(53, 1);
  TrainConfig cfg = tiny_config();
  cfg.lr = 1e18;  // guaranteed blow-up
  cfg.warmup_steps = 1;
  Model model(cfg, dataset_vocab(scenes), kShapeNames);
  TrainOptions opts;
  opts.out_dir = (dir / "run").string();
  bool threw = false;
  try {
    train_model(model, scenes, opts);
  } catch (const NumericError&) {
    threw = true;
  }
  CHECK(threw);
}
