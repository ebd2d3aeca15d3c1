#pragma once

#include <string>
#include <utility>
#include <vector>

#include "uvl/tensor.hpp"

namespace uvl {

// Ordered registry of named trainable tensors. Modules register their
// parameters at construction; the optimizer and checkpoints iterate in
// registration order, which is deterministic per config.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t) {
    items_.emplace_back(name, t);
    return t;
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& [name, t] : items_) out.push_back(t);
    return out;
  }

  Tensor find(const std::string& name) const {
    for (const auto& [n, t] : items_)
      if (n == name) return t;
    throw InputError("unknown parameter: " + name);
  }

  void zero_grad() const {
    for (const auto& [n, t] : items_) {
      Tensor tt = t;
      tt.zero_grad();
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// Linear layer y = x W + b.
struct Linear {
  Tensor w, b;
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int in, int out, std::mt19937_64& rng)
      : w(ps.add(name + ".w", Tensor::kaiming({in, out}, in, rng))),
        b(ps.add(name + ".b", Tensor::zeros({1, out}, true))) {}
  Tensor operator()(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }
};

// Per-row layer norm with learned affine.
struct LayerNorm {
  Tensor gain, bias;
  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, int dim)
      : gain(ps.add(name + ".gain", Tensor::full({1, dim}, 1.0, true))),
        bias(ps.add(name + ".bias", Tensor::zeros({1, dim}, true))) {}
  Tensor operator()(const Tensor& x) const { return layernorm_rows(x, gain, bias); }
};

}  // namespace uvl
