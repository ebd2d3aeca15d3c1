#include "uvl/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace uvl {

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw InputError(std::string("config: ") + name + " must be positive");
  };
  positive(dim, "model.dim");
  positive(heads, "model.heads");
  if (dim % heads != 0) throw InputError("config: model.dim must divide by model.heads");
  positive(decoder_layers, "decoder.layers");
  positive(object_queries, "decoder.object_queries");
  positive(sample_budget, "decoder.sample_budget");
  positive(text_layers, "text.layers");
  positive(max_text_len, "text.max_len");
  positive(vocab_size, "text.vocab_size");
  if (unet_channels.empty()) throw InputError("config: unet.channels must be non-empty");
  for (int c : unet_channels) positive(c, "unet.channels");
  positive(residual_blocks, "unet.residual_blocks");
  positive(voxel_size, "voxel.size");
  positive(voxel_size_fine, "voxel.size_fine");
  positive(lr, "train.lr");
  positive(warmup_steps, "train.warmup_steps");
  if (epochs < 0) throw InputError("config: train.epochs must be >= 0");
  positive(steps_per_epoch, "train.steps_per_epoch");
  positive(scene_batch, "train.scene_batch");
  positive(pair_batch, "train.pair_batch");
  positive(top_k, "infer.top_k");
  for (double v : {loss.cls, loss.bce, loss.dice, loss.gc, loss.cap, loss.ret,
                   loss.bg_weight})
    if (v < 0) throw InputError("config: loss weights must be nonnegative");
  parse_task_list(tasks);
}

void apply_preset(TrainConfig& cfg, const std::string& name) {
  if (name == "desk") {
    cfg = TrainConfig{};
  } else if (name == "paper") {
    cfg = TrainConfig{};
    cfg.dim = 256;
    cfg.heads = 8;
    cfg.decoder_layers = 15;
    cfg.object_queries = 150;
    cfg.sample_budget = 1024;
    cfg.text_layers = 12;
    cfg.max_text_len = 64;
    cfg.vocab_size = 30522;
    cfg.unet_channels = {32, 64, 128, 256};
    cfg.residual_blocks = 2;
    cfg.voxel_size = 0.02;
    cfg.voxel_size_fine = 0.01;
    cfg.scene_batch = 8;
    cfg.pair_batch = 12;
    cfg.epochs = 100;
    cfg.steps_per_epoch = 1000;
    cfg.top_k = 500;
  } else if (name == "finetune_grounded_seg") {
    // task-specific finetuning on top of whatever is already configured
    cfg.epochs = 20;
    cfg.lr = 1e-5;
    cfg.tasks = "grounded_seg";
  } else {
    throw InputError("unknown preset: " + name);
  }
}

double lr_at(const TrainConfig& cfg, int step) {
  if (step < 1) throw InputError("lr_at: steps are 1-based");
  double base = cfg.lr;
  if (step <= cfg.warmup_steps)
    return base * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  int total = cfg.total_steps();
  if (total > 0) {
    if (2 * step >= total) base *= 0.1;       // 50% milestone
    if (10 * step >= 7 * total) base *= 0.1;  // 70% milestone
  }
  return base;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoi(item));
  }
  return out;
}

}  // namespace

std::string config_to_text(const TrainConfig& c) {
  std::ostringstream out;
  out << "model.dim = " << c.dim << "\n";
  out << "model.heads = " << c.heads << "\n";
  out << "decoder.layers = " << c.decoder_layers << "\n";
  out << "decoder.object_queries = " << c.object_queries << "\n";
  out << "decoder.sample_budget = " << c.sample_budget << "\n";
  out << "decoder.deep_supervision = " << (c.deep_supervision ? 1 : 0) << "\n";
  out << "text.layers = " << c.text_layers << "\n";
  out << "text.max_len = " << c.max_text_len << "\n";
  out << "text.vocab_size = " << c.vocab_size << "\n";
  out << "unet.channels = " << join_ints(c.unet_channels) << "\n";
  out << "unet.residual_blocks = " << c.residual_blocks << "\n";
  out << "voxel.size = " << fmt(c.voxel_size) << "\n";
  out << "voxel.size_fine = " << fmt(c.voxel_size_fine) << "\n";
  out << "loss.cls = " << fmt(c.loss.cls) << "\n";
  out << "loss.bce = " << fmt(c.loss.bce) << "\n";
  out << "loss.dice = " << fmt(c.loss.dice) << "\n";
  out << "loss.gc = " << fmt(c.loss.gc) << "\n";
  out << "loss.cap = " << fmt(c.loss.cap) << "\n";
  out << "loss.ret = " << fmt(c.loss.ret) << "\n";
  out << "loss.bg_weight = " << fmt(c.loss.bg_weight) << "\n";
  out << "train.lr = " << fmt(c.lr) << "\n";
  out << "train.warmup_steps = " << c.warmup_steps << "\n";
  out << "train.epochs = " << c.epochs << "\n";
  out << "train.steps_per_epoch = " << c.steps_per_epoch << "\n";
  out << "train.scene_batch = " << c.scene_batch << "\n";
  out << "train.pair_batch = " << c.pair_batch << "\n";
  out << "train.seed = " << c.seed << "\n";
  out << "train.tasks = " << c.tasks << "\n";
  out << "infer.top_k = " << c.top_k << "\n";
  return out.str();
}

TrainConfig config_from_text(const std::string& text, const std::string& origin) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto strip = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string{};
      size_t b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    std::string stripped = strip(line);
    if (stripped.empty()) continue;
    size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = strip(stripped.substr(0, eq));
    std::string val = strip(stripped.substr(eq + 1));
    try {
      if (key == "model.dim") c.dim = std::stoi(val);
      else if (key == "model.heads") c.heads = std::stoi(val);
      else if (key == "decoder.layers") c.decoder_layers = std::stoi(val);
      else if (key == "decoder.object_queries") c.object_queries = std::stoi(val);
      else if (key == "decoder.sample_budget") c.sample_budget = std::stoi(val);
      else if (key == "decoder.deep_supervision") c.deep_supervision = std::stoi(val) != 0;
      else if (key == "text.layers") c.text_layers = std::stoi(val);
      else if (key == "text.max_len") c.max_text_len = std::stoi(val);
      else if (key == "text.vocab_size") c.vocab_size = std::stoi(val);
      else if (key == "unet.channels") c.unet_channels = split_ints(val);
      else if (key == "unet.residual_blocks") c.residual_blocks = std::stoi(val);
      else if (key == "voxel.size") c.voxel_size = std::stod(val);
      else if (key == "voxel.size_fine") c.voxel_size_fine = std::stod(val);
      else if (key == "loss.cls") c.loss.cls = std::stod(val);
      else if (key == "loss.bce") c.loss.bce = std::stod(val);
      else if (key == "loss.dice") c.loss.dice = std::stod(val);
      else if (key == "loss.gc") c.loss.gc = std::stod(val);
      else if (key == "loss.cap") c.loss.cap = std::stod(val);
      else if (key == "loss.ret") c.loss.ret = std::stod(val);
      else if (key == "loss.bg_weight") c.loss.bg_weight = std::stod(val);
      else if (key == "train.lr") c.lr = std::stod(val);
      else if (key == "train.warmup_steps") c.warmup_steps = std::stoi(val);
      else if (key == "train.epochs") c.epochs = std::stoi(val);
      else if (key == "train.steps_per_epoch") c.steps_per_epoch = std::stoi(val);
      else if (key == "train.scene_batch") c.scene_batch = std::stoi(val);
      else if (key == "train.pair_batch") c.pair_batch = std::stoi(val);
      else if (key == "train.seed") c.seed = std::stoull(val);
      else if (key == "train.tasks") c.tasks = val;
      else if (key == "infer.top_k") c.top_k = std::stoi(val);
      else
        throw ParseError(origin + ":" + std::to_string(lineno) + ": unknown key " + key);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError(origin + ":" + std::to_string(lineno) + ": bad value for " + key);
    }
  }
  return c;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_text(ss.str(), path);
}

void save_config(const TrainConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write config file: " + path);
  out << config_to_text(cfg);
}

std::vector<Task> parse_task_list(const std::string& tasks) {
  std::vector<Task> out;
  std::stringstream ss(tasks);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t a = item.find_first_not_of(" \t");
    if (a == std::string::npos) continue;
    size_t b = item.find_last_not_of(" \t");
    out.push_back(task_from_name(item.substr(a, b - a + 1)));
  }
  if (out.empty()) throw InputError("config: train.tasks selects no tasks");
  return out;
}

}  // namespace uvl
