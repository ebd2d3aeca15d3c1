#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>

#include "uvl/model.hpp"

namespace uvl {

// Versioned little-endian binary: magic "U3DL", text blobs (config, vocab,
// class names, RNG state), a tensor directory (name, dtype, shape, byte
// offset), then raw float64 data. Optimizer moments ride along as
// "adam.m:<name>" / "adam.v:<name>" entries.
struct CheckpointMeta {
  std::uint32_t version = 0;
  std::string config_text;
  std::string vocab_text;
  std::string class_names_text;  // one per line
  std::string rng_text;
  std::uint64_t adam_steps = 0;
  bool has_optimizer = false;
};

CheckpointMeta read_checkpoint_meta(const std::string& path);

void save_checkpoint(const std::string& path, const Model& model, const AdamW* opt,
                     const std::mt19937_64* rng);

// Model must have been built with the same config; tensor names and shapes
// are verified. opt/rng may be null to skip restoring them.
void load_checkpoint(const std::string& path, Model& model, AdamW* opt,
                     std::mt19937_64* rng);

// Rebuilds the model from the stored config/vocab/class names, then loads
// parameters (and optionally optimizer and RNG state).
std::unique_ptr<Model> load_model(const std::string& path, AdamW* opt = nullptr,
                                  std::mt19937_64* rng = nullptr);

}  // namespace uvl
