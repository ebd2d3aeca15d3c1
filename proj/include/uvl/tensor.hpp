#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace uvl {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};
struct InputError : std::runtime_error {
  explicit InputError(const std::string& m) : std::runtime_error(m) {}
};
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& m) : std::runtime_error(m) {}
};

using Shape = std::vector<int>;

// When enabled, every op output is scanned for NaN/Inf and a NumericError is
// thrown instead of letting bad values propagate. Tests keep this on; the
// training loop checks the loss scalar each step regardless.
bool debug_checks();
void set_debug_checks(bool on);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily, same length as value
  bool requires_grad = false;
  std::uint64_t seq = 0;  // creation order; parents always have smaller seq
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // accumulate this->grad into parents

  void ensure_grad();
};

using NodePtr = std::shared_ptr<TensorNode>;

// Value-semantic handle to a node in the computation graph. Row-major doubles.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor full(Shape s, double v, bool requires_grad = false);
  static Tensor from(Shape s, std::vector<double> vals, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor uniform(Shape s, double lo, double hi, std::mt19937_64& rng,
                        bool requires_grad = false);
  static Tensor randn(Shape s, double stdev, std::mt19937_64& rng,
                      bool requires_grad = false);
  // Kaiming-uniform with explicit fan-in (for conv kernels fan_in != cols).
  static Tensor kaiming(Shape s, int fan_in, std::mt19937_64& rng);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  int size() const { return static_cast<int>(n_->value.size()); }
  int rows() const;
  int cols() const;

  std::vector<double>& data() { return n_->value; }
  const std::vector<double>& data() const { return n_->value; }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  bool requires_grad() const { return n_->requires_grad; }
  void zero_grad();

  double item() const;
  double at(int r, int c) const;

  NodePtr node() const { return n_; }
  explicit Tensor(NodePtr n) : n_(std::move(n)) {}

 private:
  NodePtr n_;
};

// Reverse-mode pass from a scalar loss. Visits reachable nodes exactly once,
// newest first; leaf grads accumulate across calls until zero_grad().
void backward(const Tensor& loss);

// ---- primitive ops (all differentiable unless noted) ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor scale_by(const Tensor& a, const Tensor& scalar);  // broadcast scalar
Tensor add_rowvec(const Tensor& a, const Tensor& bias);  // bias: 1 x n
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor logsumexp_rows(const Tensor& a);  // n x 1
Tensor layernorm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias,
                      double eps = 1e-5);
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int start, int len);
Tensor slice_cols(const Tensor& a, int start, int len);
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
Tensor select_per_row(const Tensor& a, const std::vector<int>& col);  // n x 1
Tensor reduce_sum(const Tensor& a);   // 1 x 1
Tensor reduce_mean(const Tensor& a);  // 1 x 1
Tensor reshape(const Tensor& a, Shape s);
// Forward copy that blocks gradient flow.
Tensor detach(const Tensor& a);

// Hook for modules that define their own forward/backward pair (sparse conv).
// The backprop closure reads self.grad and accumulates into the inputs' grads.
Tensor make_custom_op(const char* name, Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs,
                      std::function<void(TensorNode&)> backprop);

// ---- composites ----
// Weighted mean cross-entropy over rows of `logits` against integer targets.
// weights may be empty (all ones).
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<double>& weights = {});
// Mean of elementwise binary cross-entropy with logits against 0/1 targets.
Tensor bce_with_logits_mean(const Tensor& logits, const std::vector<double>& targets);
// 1 - 2*sum(p*g) / (sum(p) + sum(g) + eps) with p = sigmoid(logits).
Tensor dice_loss(const Tensor& logits, const std::vector<double>& targets,
                 double eps = 1e-6);

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay; moments bias-corrected by step count.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  // Params must be passed in a stable order; state is positional.
  void step(const std::vector<Tensor>& params, double lr_override = -1.0);

  std::uint64_t steps() const { return t_; }
  AdamWConfig& config() { return cfg_; }

  // Positional moment access for checkpointing.
  std::vector<std::vector<double>>& m() { return m_; }
  std::vector<std::vector<double>>& v() { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  AdamWConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace uvl
