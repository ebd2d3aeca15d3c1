// Command-line frontend: synthetic data generation, training, evaluation and
// single-scene inference for the unified voxel-language model.
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "uvl/checkpoint.hpp"
#include "uvl/config.hpp"
#include "uvl/data.hpp"
#include "uvl/metrics.hpp"
#include "uvl/model.hpp"
#include "uvl/train.hpp"

namespace {

using namespace uvl;

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Vocabulary build_vocab(const std::vector<SceneSample>& scenes, int max_size) {
  std::vector<std::string> corpus;
  for (const auto& s : scenes) {
    corpus.push_back(s.caption);
    for (const auto& r : s.referrals) corpus.push_back(r.sentence);
  }
  for (const auto& c : kShapeNames) corpus.push_back(c);
  corpus.push_back("background");
  return Vocabulary::build(corpus, max_size);
}

void print_report(const EvalReport& report, bool json) {
  if (!json) {
    report.write(std::cout);
    return;
  }
  std::cout << "{";
  for (size_t i = 0; i < report.entries.size(); ++i) {
    if (i) std::cout << ",";
    std::cout << "\"" << report.entries[i].first
              << "\":" << fmt17(report.entries[i].second);
  }
  std::cout << "}\n";
}

std::vector<InstanceGt> instance_gts(const VoxelGrid& grid) {
  GroundTruthInstances gt = voxel_instances(grid);
  std::vector<InstanceGt> out;
  for (size_t i = 0; i < gt.classes.size(); ++i) {
    InstanceGt g;
    g.class_id = gt.classes[i];
    g.mask.reserve(gt.masks[i].size());
    for (double v : gt.masks[i]) g.mask.push_back(v > 0.5);
    out.push_back(std::move(g));
  }
  return out;
}

EvalReport evaluate_model(const Model& model, const std::vector<SceneSample>& scenes,
                          std::mt19937_64& rng) {
  EvalReport report;
  const int num_classes = static_cast<int>(model.class_names.size());

  // segmentation
  std::vector<std::vector<InstancePrediction>> preds;
  std::vector<std::vector<InstanceGt>> gts;
  std::vector<std::vector<std::array<int, 3>>> coords;
  double miou_sum = 0.0, macc_sum = 0.0;
  std::vector<std::vector<std::uint8_t>> ground_pred, ground_gt;
  double bleu_sum = 0.0, rouge_sum = 0.0;
  int correct_class = 0;

  for (const auto& s : scenes) {
    VoxelGrid grid = voxelize(s.cloud, model.cfg.voxel_size);
    preds.push_back(infer_scene_instances(model, grid, rng));
    gts.push_back(instance_gts(grid));
    std::vector<std::array<int, 3>> c;
    for (const auto& xyz : grid.coords)
      c.push_back({static_cast<int>(xyz[0]), static_cast<int>(xyz[1]),
                   static_cast<int>(xyz[2])});
    coords.push_back(std::move(c));

    auto [miou, macc] =
        miou_macc(infer_scene_semantic(model, grid, rng), grid.semantic, num_classes + 1);
    miou_sum += miou;
    macc_sum += macc;

    for (const auto& r : s.referrals) {
      ground_pred.push_back(infer_grounding(model, grid, r.sentence, rng));
      ground_gt.push_back(instance_voxel_mask(grid, r.instance_id));
    }

    std::vector<int> tokens = generate_caption_tokens(model, grid, rng);
    std::vector<std::string> cand = word_tokens(model.vocab.decode(tokens));
    std::vector<std::string> ref = word_tokens(s.caption);
    bleu_sum += bleu1(cand, ref);
    rouge_sum += rouge_l(cand, ref);

    GroundTruthInstances inst = voxel_instances(grid);
    int cls = inst.classes.empty() ? 0 : inst.classes.front();
    if (classify_shape(model, grid, rng) == cls) correct_class++;
  }

  double n = static_cast<double>(scenes.size());
  InstanceApResult ap = instance_ap(preds, gts);
  auto [bap50, bap25] = box_ap(preds, gts, coords);
  report.set("seg.miou", miou_sum / n);
  report.set("seg.macc", macc_sum / n);
  report.set("inst.map", ap.map);
  report.set("inst.ap50", ap.ap50);
  report.set("inst.ap25", ap.ap25);
  report.set("inst.bap50", bap50);
  report.set("inst.bap25", bap25);
  if (!ground_pred.empty()) {
    GroundingAcc g = grounding_acc(ground_pred, ground_gt);
    report.set("ground.miou", g.miou);
    report.set("ground.acc25", g.acc25);
    report.set("ground.acc50", g.acc50);
  }
  report.set("caption.bleu1", bleu_sum / n);
  report.set("caption.rougel", rouge_sum / n);
  report.set("class.accuracy", correct_class / n);

  // retrieval over the whole set
  if (scenes.size() > 1) {
    std::vector<Tensor> shape_rows;
    std::vector<std::string> texts;
    for (const auto& s : scenes) {
      VoxelGrid grid = voxelize(s.cloud, model.cfg.voxel_size);
      shape_rows.push_back(shape_embedding(model, grid, rng));
      texts.push_back(s.caption);
    }
    Tensor sim = matching_similarity(concat_rows(shape_rows),
                                     model.text_proj(embed_texts(
                                         model.text, model.vocab, texts)),
                                     model.log_inv_tau);
    report.set("retrieval.r1", recall_at_k(sim, 1));
    report.set("retrieval.r5", recall_at_k(sim, 5));
  }
  return report;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unified voxel-language model toolkit"};
  app.require_subcommand(1);
  app.fallthrough(true);  // let global flags appear after the subcommand

  std::string config_path, checkpoint_path, preset, data_path, out_dir, input_path;
  std::string sentence, resume_path, prefix = "scene", pred_path;
  std::uint64_t seed = 0;
  bool seed_set = false, json = false, single_shape = false;
  int scenes_n = 8, min_inst = 2, max_inst = 4, points = 96, referrals = 2;

  app.add_option("--config", config_path, "config file (key = value lines)");
  app.add_option("--checkpoint", checkpoint_path, "checkpoint to load");
  app.add_option("--preset", preset, "config preset: desk, paper, finetune_grounded_seg");
  app.add_option("--seed", seed, "RNG seed override")->each([&](const std::string&) {
    seed_set = true;
  });
  app.add_flag("--json", json, "machine-readable eval output");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--prefix", prefix, "file name prefix");
  gen->add_option("--scenes", scenes_n, "number of scenes");
  gen->add_option("--min-instances", min_inst, "minimum objects per scene");
  gen->add_option("--max-instances", max_inst, "maximum objects per scene");
  gen->add_option("--points", points, "points per object");
  gen->add_option("--referrals", referrals, "referring sentences per scene");
  gen->add_flag("--single-shape", single_shape, "one object per scene");

  auto* train_cmd = app.add_subcommand("train", "train on a dataset manifest");
  train_cmd->add_option("--data", data_path, "dataset manifest")->required();
  train_cmd->add_option("--out", out_dir, "run output directory")->required();
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or a dump");
  eval_cmd->add_option("--data", data_path, "dataset manifest");
  eval_cmd->add_option("--pred", pred_path, "prediction dump to score");
  eval_cmd->add_option("--input", input_path, "GT scene (with --pred)");

  auto* seg = app.add_subcommand("infer-seg", "per-voxel semantic classes");
  seg->add_option("--input", input_path, "scene UPC file")->required();
  auto* inst = app.add_subcommand("infer-inst", "instance prediction dump");
  inst->add_option("--input", input_path, "scene UPC file")->required();
  auto* ground = app.add_subcommand("ground", "segment the referred object");
  ground->add_option("--input", input_path, "scene UPC file")->required();
  ground->add_option("--sentence", sentence, "referring sentence")->required();
  auto* cap = app.add_subcommand("caption", "describe a scene");
  cap->add_option("--input", input_path, "scene UPC file")->required();
  auto* retr = app.add_subcommand("retrieve", "text-to-shape retrieval over a set");
  retr->add_option("--data", data_path, "dataset manifest")->required();
  auto* cls = app.add_subcommand("classify", "shape classification");
  cls->add_option("--input", input_path, "scene UPC file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    using namespace uvl;

    if (gen->parsed()) {
      DatasetSpec spec;
      spec.num_scenes = scenes_n;
      spec.min_instances = min_inst;
      spec.max_instances = max_inst;
      spec.points_per_instance = points;
      spec.referrals_per_scene = referrals;
      spec.single_shape = single_shape;
      auto samples = generate_dataset(spec, seed_set ? seed : 1);
      std::cout << save_dataset(samples, out_dir, prefix) << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      TrainConfig cfg;
      if (!preset.empty()) apply_preset(cfg, preset);
      if (!config_path.empty()) cfg = load_config(config_path);
      if (seed_set) cfg.seed = seed;
      auto scenes = load_dataset(data_path);

      TrainOptions opts;
      opts.out_dir = out_dir;
      opts.resume_path = resume_path;
      if (!resume_path.empty()) {
        auto model = load_model(resume_path);
        TrainResult r = train_model(*model, scenes, opts);
        std::cout << r.final_checkpoint << "\n";
        return 0;
      }
      Model model(cfg, build_vocab(scenes, cfg.vocab_size), kShapeNames);
      TrainResult r = train_model(model, scenes, opts);
      std::cout << r.final_checkpoint << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      if (!pred_path.empty()) {
        if (input_path.empty())
          throw InputError("eval --pred also needs --input with the GT scene");
        std::ifstream in(pred_path);
        if (!in) throw InputError("cannot open prediction dump: " + pred_path);
        auto dump = read_predictions(in, pred_path);
        PointCloud pc = load_pointcloud(input_path);
        // score the dump at the voxel size implied by its mask length
        TrainConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        VoxelGrid grid = voxelize(pc, cfg.voxel_size);
        InstanceApResult ap = instance_ap({dump}, {instance_gts(grid)});
        EvalReport report;
        report.set("inst.map", ap.map);
        report.set("inst.ap50", ap.ap50);
        report.set("inst.ap25", ap.ap25);
        print_report(report, json);
        return 0;
      }
      if (checkpoint_path.empty() || data_path.empty())
        throw InputError("eval needs --checkpoint and --data (or --pred/--input)");
      auto model = load_model(checkpoint_path);
      std::mt19937_64 rng(seed_set ? seed : model->cfg.seed);
      auto scenes = load_dataset(data_path);
      print_report(evaluate_model(*model, scenes, rng), json);
      return 0;
    }

    // all remaining commands run a checkpointed model on one scene
    if (checkpoint_path.empty()) throw InputError("--checkpoint is required");
    auto model = load_model(checkpoint_path);
    std::mt19937_64 rng(seed_set ? seed : model->cfg.seed);

    if (retr->parsed()) {
      auto scenes = load_dataset(data_path);
      std::vector<Tensor> rows;
      std::vector<std::string> texts;
      for (const auto& s : scenes) {
        VoxelGrid grid = voxelize(s.cloud, model->cfg.voxel_size);
        rows.push_back(shape_embedding(*model, grid, rng));
        texts.push_back(s.caption);
      }
      Tensor sim = matching_similarity(
          concat_rows(rows),
          model->text_proj(embed_texts(model->text, model->vocab, texts)),
          model->log_inv_tau);
      // ranked shape indices per text (columns are texts)
      for (size_t t = 0; t < texts.size(); ++t) {
        std::vector<int> order(texts.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
          return sim.at(x, static_cast<int>(t)) > sim.at(y, static_cast<int>(t));
        });
        std::cout << "text " << t << ":";
        for (int i : order) std::cout << " " << i;
        std::cout << "\n";
      }
      EvalReport report;
      report.set("retrieval.r1", recall_at_k(sim, 1));
      report.set("retrieval.r5", recall_at_k(sim, 5));
      print_report(report, json);
      return 0;
    }

    PointCloud pc = load_pointcloud(input_path);
    VoxelGrid grid = voxelize(pc, model->cfg.voxel_size);

    if (seg->parsed()) {
      for (int c : infer_scene_semantic(*model, grid, rng)) std::cout << c << "\n";
    } else if (inst->parsed()) {
      write_predictions(std::cout, infer_scene_instances(*model, grid, rng));
    } else if (ground->parsed()) {
      for (std::uint8_t v : infer_grounding(*model, grid, sentence, rng))
        std::cout << static_cast<int>(v) << "\n";
    } else if (cap->parsed()) {
      std::cout << model->vocab.decode(generate_caption_tokens(*model, grid, rng))
                << "\n";
    } else if (cls->parsed()) {
      std::cout << model->class_names[classify_shape(*model, grid, rng)] << "\n";
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
