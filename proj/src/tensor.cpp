#include "uvl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace uvl {

namespace {

std::atomic<std::uint64_t> g_seq{1};
bool g_debug_checks = true;

int numel(const Shape& s) {
  int n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive extent in shape");
    n *= d;
  }
  return n;
}

NodePtr make_node(Shape shape, std::vector<double> value, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  if (static_cast<int>(value.size()) != numel(shape))
    throw ShapeError("value count does not match shape");
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->seq = g_seq.fetch_add(1);
  return n;
}

void check_finite(const TensorNode& n, const char* op) {
  if (!g_debug_checks) return;
  for (double v : n.value) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

bool any_grad(const std::vector<Tensor>& ts) {
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

// Builds the result node for an op: output requires grad iff any input does,
// in which case the backprop closure is attached.
Tensor make_op(const char* name, Shape shape, std::vector<double> value,
               std::vector<Tensor> inputs,
               std::function<void(TensorNode&)> backprop) {
  auto n = make_node(std::move(shape), std::move(value), false);
  check_finite(*n, name);
  if (any_grad(inputs)) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& t : inputs) n->parents.push_back(t.node());
    n->backprop = std::move(backprop);
  }
  return Tensor(n);
}

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor");
}

}  // namespace

bool debug_checks() { return g_debug_checks; }
void set_debug_checks(bool on) { g_debug_checks = on; }

void TensorNode::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

Tensor Tensor::zeros(Shape s, bool requires_grad) {
  int n = numel(s);
  return Tensor(make_node(std::move(s), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape s, double v, bool requires_grad) {
  int n = numel(s);
  return Tensor(make_node(std::move(s), std::vector<double>(n, v), requires_grad));
}

Tensor Tensor::from(Shape s, std::vector<double> vals, bool requires_grad) {
  return Tensor(make_node(std::move(s), std::move(vals), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(make_node({1, 1}, {v}, requires_grad));
}

Tensor Tensor::uniform(Shape s, double lo, double hi, std::mt19937_64& rng,
                       bool requires_grad) {
  int n = numel(s);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return Tensor(make_node(std::move(s), std::move(v), requires_grad));
}

Tensor Tensor::randn(Shape s, double stdev, std::mt19937_64& rng, bool requires_grad) {
  int n = numel(s);
  std::normal_distribution<double> d(0.0, stdev);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return Tensor(make_node(std::move(s), std::move(v), requires_grad));
}

Tensor Tensor::kaiming(Shape s, int fan_in, std::mt19937_64& rng) {
  double bound = std::sqrt(6.0 / std::max(1, fan_in));
  return uniform(std::move(s), -bound, bound, rng, true);
}

int Tensor::rows() const {
  require_2d(*this, "rows");
  return n_->shape[0];
}

int Tensor::cols() const {
  require_2d(*this, "cols");
  return n_->shape[1];
}

std::vector<double>& Tensor::grad() {
  n_->ensure_grad();
  return n_->grad;
}

const std::vector<double>& Tensor::grad() const {
  n_->ensure_grad();
  return n_->grad;
}

void Tensor::zero_grad() { n_->grad.assign(n_->value.size(), 0.0); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor");
  return n_->value[0];
}

double Tensor::at(int r, int c) const {
  require_2d(*this, "at");
  return n_->value[static_cast<size_t>(r) * n_->shape[1] + c];
}

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be scalar");
  if (!loss.requires_grad()) return;

  // Reachable subgraph, then reverse creation order = reverse topological.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<TensorNode*> stack{loss.node().get()};
  while (!stack.empty()) {
    TensorNode* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& p : n->parents) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](TensorNode* a, TensorNode* b) { return a->seq > b->seq; });

  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (TensorNode* n : order) {
    if (n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
    }
  }
}

// ---------------------------------------------------------------------------
// primitive ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) throw ShapeError("matmul: inner dimensions disagree");
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double aip = av[static_cast<size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[static_cast<size_t>(p) * n];
      double* orow = &out[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  auto an = a.node();
  auto bn = b.node();
  return make_op("matmul", {m, n}, std::move(out), {a, b},
                 [an, bn, m, k, n](TensorNode& self) {
                   const auto& g = self.grad;
                   if (an->requires_grad) {
                     an->ensure_grad();
                     // a.grad += g . b^T
                     for (int i = 0; i < m; ++i)
                       for (int p = 0; p < k; ++p) {
                         double s = 0.0;
                         const double* grow = &g[static_cast<size_t>(i) * n];
                         const double* brow = &bn->value[static_cast<size_t>(p) * n];
                         for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
                         an->grad[static_cast<size_t>(i) * k + p] += s;
                       }
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     // b.grad += a^T . g
                     for (int p = 0; p < k; ++p)
                       for (int i = 0; i < m; ++i) {
                         double aip = an->value[static_cast<size_t>(i) * k + p];
                         if (aip == 0.0) continue;
                         const double* grow = &g[static_cast<size_t>(i) * n];
                         double* brow = &bn->grad[static_cast<size_t>(p) * n];
                         for (int j = 0; j < n; ++j) brow[j] += aip * grow[j];
                       }
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(static_cast<size_t>(m) * n);
  const auto& av = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
  auto an = a.node();
  return make_op("transpose", {n, m}, std::move(out), {a},
                 [an, m, n](TensorNode& self) {
                   if (!an->requires_grad) return;
                   an->ensure_grad();
                   for (int i = 0; i < m; ++i)
                     for (int j = 0; j < n; ++j)
                       an->grad[static_cast<size_t>(i) * n + j] +=
                           self.grad[static_cast<size_t>(j) * m + i];
                 });
}

namespace {

Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b,
                          double (*fwd)(double, double),
                          void (*bwd)(double, double, double, double&, double&)) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(name) + ": shape mismatch");
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = fwd(a.data()[i], b.data()[i]);
  auto an = a.node();
  auto bn = b.node();
  return make_op(name, a.shape(), std::move(out), {a, b},
                 [an, bn, bwd](TensorNode& self) {
                   bool ga = an->requires_grad, gb = bn->requires_grad;
                   if (ga) an->ensure_grad();
                   if (gb) bn->ensure_grad();
                   double dummy = 0.0;
                   for (size_t i = 0; i < self.value.size(); ++i) {
                     double da = 0.0, db = 0.0;
                     bwd(an->value[i], bn->value[i], self.grad[i], da, db);
                     if (ga) an->grad[i] += da;
                     if (gb) bn->grad[i] += db;
                   }
                   (void)dummy;
                 });
}

Tensor unary_elementwise(const char* name, const Tensor& a, double (*fwd)(double),
                         double (*dydx_from)(double x, double y)) {
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = fwd(a.data()[i]);
  auto an = a.node();
  return make_op(name, a.shape(), std::move(out), {a},
                 [an, dydx_from](TensorNode& self) {
                   if (!an->requires_grad) return;
                   an->ensure_grad();
                   for (size_t i = 0; i < self.value.size(); ++i)
                     an->grad[i] += self.grad[i] * dydx_from(an->value[i], self.value[i]);
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.data()[i] * c;
  auto an = a.node();
  return make_op("scale", a.shape(), std::move(out), {a}, [an, c](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.value.size(); ++i) an->grad[i] += self.grad[i] * c;
  });
}

Tensor add_const(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.data()[i] + c;
  auto an = a.node();
  return make_op("add_const", a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.value.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor scale_by(const Tensor& a, const Tensor& scalar) {
  if (scalar.size() != 1) throw ShapeError("scale_by: scalar tensor expected");
  double s = scalar.data()[0];
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.data()[i] * s;
  auto an = a.node();
  auto sn = scalar.node();
  return make_op("scale_by", a.shape(), std::move(out), {a, scalar},
                 [an, sn](TensorNode& self) {
                   double s = sn->value[0];
                   if (an->requires_grad) {
                     an->ensure_grad();
                     for (size_t i = 0; i < self.value.size(); ++i)
                       an->grad[i] += self.grad[i] * s;
                   }
                   if (sn->requires_grad) {
                     sn->ensure_grad();
                     double acc = 0.0;
                     for (size_t i = 0; i < self.value.size(); ++i)
                       acc += self.grad[i] * an->value[i];
                     sn->grad[0] += acc;
                   }
                 });
}

Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
  require_2d(a, "add_rowvec");
  if (bias.size() != a.cols()) throw ShapeError("add_rowvec: bias width mismatch");
  int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(a.data());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += bias.data()[j];
  auto an = a.node();
  auto bn = bias.node();
  return make_op("add_rowvec", a.shape(), std::move(out), {a, bias},
                 [an, bn, m, n](TensorNode& self) {
                   if (an->requires_grad) {
                     an->ensure_grad();
                     for (size_t i = 0; i < self.value.size(); ++i)
                       an->grad[i] += self.grad[i];
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     for (int i = 0; i < m; ++i)
                       for (int j = 0; j < n; ++j)
                         bn->grad[j] += self.grad[static_cast<size_t>(i) * n + j];
                   }
                 });
}

Tensor sigmoid(const Tensor& a) {
  return unary_elementwise(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary_elementwise(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (int i = 0; i < a.size(); ++i)
    if (a.data()[i] <= 0.0) throw NumericError("log: non-positive input");
  return unary_elementwise(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor softplus(const Tensor& a) {
  return unary_elementwise(
      "softplus", a,
      [](double x) {
        if (x > 30.0) return x;
        if (x < -30.0) return std::exp(x);
        return std::log1p(std::exp(x));
      },
      [](double x, double) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Tensor softmax_rows(const Tensor& a) {
  require_2d(a, "softmax_rows");
  int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i) {
    const double* x = &a.data()[static_cast<size_t>(i) * n];
    double* y = &out[static_cast<size_t>(i) * n];
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (int j = 0; j < n; ++j) y[j] /= z;
  }
  auto an = a.node();
  return make_op("softmax_rows", a.shape(), std::move(out), {a},
                 [an, m, n](TensorNode& self) {
                   if (!an->requires_grad) return;
                   an->ensure_grad();
                   for (int i = 0; i < m; ++i) {
                     const double* p = &self.value[static_cast<size_t>(i) * n];
                     const double* g = &self.grad[static_cast<size_t>(i) * n];
                     double dot = 0.0;
                     for (int j = 0; j < n; ++j) dot += p[j] * g[j];
                     double* da = &an->grad[static_cast<size_t>(i) * n];
                     for (int j = 0; j < n; ++j) da[j] += p[j] * (g[j] - dot);
                   }
                 });
}

Tensor logsumexp_rows(const Tensor& a) {
  require_2d(a, "logsumexp_rows");
  int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m);
  for (int i = 0; i < m; ++i) {
    const double* x = &a.data()[static_cast<size_t>(i) * n];
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    out[i] = mx + std::log(z);
  }
  auto an = a.node();
  return make_op("logsumexp_rows", {m, 1}, std::move(out), {a},
                 [an, m, n](TensorNode& self) {
                   if (!an->requires_grad) return;
                   an->ensure_grad();
                   for (int i = 0; i < m; ++i) {
                     double y = self.value[i];
                     double g = self.grad[i];
                     const double* x = &an->value[static_cast<size_t>(i) * n];
                     double* da = &an->grad[static_cast<size_t>(i) * n];
                     for (int j = 0; j < n; ++j) da[j] += g * std::exp(x[j] - y);
                   }
                 });
}

Tensor layernorm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias,
                      double eps) {
  require_2d(a, "layernorm_rows");
  int m = a.shape()[0], n = a.shape()[1];
  if (gain.size() != n || bias.size() != n)
    throw ShapeError("layernorm_rows: affine parameter width mismatch");
  std::vector<double> out(a.size());
  std::vector<double> inv_sigma(m), mu(m);
  for (int i = 0; i < m; ++i) {
    const double* x = &a.data()[static_cast<size_t>(i) * n];
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += x[j];
    double mean = s / n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= n;
    double inv = 1.0 / std::sqrt(var + eps);
    mu[i] = mean;
    inv_sigma[i] = inv;
    double* y = &out[static_cast<size_t>(i) * n];
    for (int j = 0; j < n; ++j)
      y[j] = (x[j] - mean) * inv * gain.data()[j] + bias.data()[j];
  }
  auto an = a.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return make_op(
      "layernorm_rows", a.shape(), std::move(out), {a, gain, bias},
      [an, gn, bn, m, n, mu, inv_sigma](TensorNode& self) {
        for (int i = 0; i < m; ++i) {
          const double* x = &an->value[static_cast<size_t>(i) * n];
          const double* g = &self.grad[static_cast<size_t>(i) * n];
          double inv = inv_sigma[i];
          // xhat_j = (x_j - mu) * inv
          if (gn->requires_grad) {
            gn->ensure_grad();
            for (int j = 0; j < n; ++j)
              gn->grad[j] += g[j] * (x[j] - mu[i]) * inv;
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (int j = 0; j < n; ++j) bn->grad[j] += g[j];
          }
          if (an->requires_grad) {
            an->ensure_grad();
            double sum_gg = 0.0, sum_ggx = 0.0;
            for (int j = 0; j < n; ++j) {
              double gg = g[j] * gn->value[j];
              double xhat = (x[j] - mu[i]) * inv;
              sum_gg += gg;
              sum_ggx += gg * xhat;
            }
            double* da = &an->grad[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) {
              double gg = g[j] * gn->value[j];
              double xhat = (x[j] - mu[i]) * inv;
              da[j] += inv * (gg - sum_gg / n - xhat * sum_ggx / n);
            }
          }
        }
      });
}

Tensor l2_normalize_rows(const Tensor& a, double eps) {
  require_2d(a, "l2_normalize_rows");
  int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(a.size());
  std::vector<double> norms(m);
  for (int i = 0; i < m; ++i) {
    const double* x = &a.data()[static_cast<size_t>(i) * n];
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += x[j] * x[j];
    double norm = std::sqrt(s + eps);
    norms[i] = norm;
    double* y = &out[static_cast<size_t>(i) * n];
    for (int j = 0; j < n; ++j) y[j] = x[j] / norm;
  }
  auto an = a.node();
  return make_op("l2_normalize_rows", a.shape(), std::move(out), {a},
                 [an, m, n, norms](TensorNode& self) {
                   if (!an->requires_grad) return;
                   an->ensure_grad();
                   for (int i = 0; i < m; ++i) {
                     const double* y = &self.value[static_cast<size_t>(i) * n];
                     const double* g = &self.grad[static_cast<size_t>(i) * n];
                     double dot = 0.0;
                     for (int j = 0; j < n; ++j) dot += g[j] * y[j];
                     double* da = &an->grad[static_cast<size_t>(i) * n];
                     for (int j = 0; j < n; ++j)
                       da[j] += (g[j] - y[j] * dot) / norms[i];
                   }
                 });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  int n = parts[0].cols();
  int m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw ShapeError("concat_rows: column mismatch");
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(m) * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_op("concat_rows", {m, n}, std::move(out), parts,
                 [nodes](TensorNode& self) {
                   size_t off = 0;
                   for (auto& pn : nodes) {
                     size_t cnt = pn->value.size();
                     if (pn->requires_grad) {
                       pn->ensure_grad();
                       for (size_t i = 0; i < cnt; ++i)
                         pn->grad[i] += self.grad[off + i];
                     }
                     off += cnt;
                   }
                 });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  int m = parts[0].rows();
  int n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw ShapeError("concat_cols: row mismatch");
    n += p.cols();
  }
  std::vector<double> out(static_cast<size_t>(m) * n);
  int coff = 0;
  for (const auto& p : parts) {
    int pc = p.cols();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < pc; ++j)
        out[static_cast<size_t>(i) * n + coff + j] =
            p.data()[static_cast<size_t>(i) * pc + j];
    coff += pc;
  }
  std::vector<NodePtr> nodes;
  std::vector<int> widths;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.cols());
  }
  return make_op("concat_cols", {m, n}, std::move(out), parts,
                 [nodes, widths, m, n](TensorNode& self) {
                   int coff = 0;
                   for (size_t k = 0; k < nodes.size(); ++k) {
                     int pc = widths[k];
                     if (nodes[k]->requires_grad) {
                       nodes[k]->ensure_grad();
                       for (int i = 0; i < m; ++i)
                         for (int j = 0; j < pc; ++j)
                           nodes[k]->grad[static_cast<size_t>(i) * pc + j] +=
                               self.grad[static_cast<size_t>(i) * n + coff + j];
                     }
                     coff += pc;
                   }
                 });
}

Tensor slice_rows(const Tensor& a, int start, int len) {
  require_2d(a, "slice_rows");
  int m = a.shape()[0], n = a.shape()[1];
  if (start < 0 || len < 1 || start + len > m) throw ShapeError("slice_rows: out of range");
  std::vector<double> out(a.data().begin() + static_cast<size_t>(start) * n,
                          a.data().begin() + static_cast<size_t>(start + len) * n);
  auto an = a.node();
  return make_op("slice_rows", {len, n}, std::move(out), {a},
                 [an, start, n](TensorNode& self) {
                   if (!an->requires_grad) return;
                   an->ensure_grad();
                   size_t off = static_cast<size_t>(start) * n;
                   for (size_t i = 0; i < self.value.size(); ++i)
                     an->grad[off + i] += self.grad[i];
                 });
}

Tensor slice_cols(const Tensor& a, int start, int len) {
  require_2d(a, "slice_cols");
  int m = a.shape()[0], n = a.shape()[1];
  if (start < 0 || len < 1 || start + len > n) throw ShapeError("slice_cols: out of range");
  std::vector<double> out(static_cast<size_t>(m) * len);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < len; ++j)
      out[static_cast<size_t>(i) * len + j] =
          a.data()[static_cast<size_t>(i) * n + start + j];
  auto an = a.node();
  return make_op("slice_cols", {m, len}, std::move(out), {a},
                 [an, start, m, n, len](TensorNode& self) {
                   if (!an->requires_grad) return;
                   an->ensure_grad();
                   for (int i = 0; i < m; ++i)
                     for (int j = 0; j < len; ++j)
                       an->grad[static_cast<size_t>(i) * n + start + j] +=
                           self.grad[static_cast<size_t>(i) * len + j];
                 });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  require_2d(a, "gather_rows");
  int m = a.shape()[0], n = a.shape()[1];
  int k = static_cast<int>(idx.size());
  if (k == 0) throw ShapeError("gather_rows: empty index list");
  std::vector<double> out(static_cast<size_t>(k) * n);
  for (int i = 0; i < k; ++i) {
    if (idx[i] < 0 || idx[i] >= m) throw ShapeError("gather_rows: index out of range");
    std::copy_n(&a.data()[static_cast<size_t>(idx[i]) * n], n,
                &out[static_cast<size_t>(i) * n]);
  }
  auto an = a.node();
  auto indices = idx;
  return make_op("gather_rows", {k, n}, std::move(out), {a},
                 [an, indices, n](TensorNode& self) {
                   if (!an->requires_grad) return;
                   an->ensure_grad();
                   for (size_t i = 0; i < indices.size(); ++i)
                     for (int j = 0; j < n; ++j)
                       an->grad[static_cast<size_t>(indices[i]) * n + j] +=
                           self.grad[i * n + j];
                 });
}

Tensor select_per_row(const Tensor& a, const std::vector<int>& col) {
  require_2d(a, "select_per_row");
  int m = a.shape()[0], n = a.shape()[1];
  if (static_cast<int>(col.size()) != m)
    throw ShapeError("select_per_row: one column index per row required");
  std::vector<double> out(m);
  for (int i = 0; i < m; ++i) {
    if (col[i] < 0 || col[i] >= n) throw ShapeError("select_per_row: column out of range");
    out[i] = a.data()[static_cast<size_t>(i) * n + col[i]];
  }
  auto an = a.node();
  auto cols = col;
  return make_op("select_per_row", {m, 1}, std::move(out), {a},
                 [an, cols, n](TensorNode& self) {
                   if (!an->requires_grad) return;
                   an->ensure_grad();
                   for (size_t i = 0; i < cols.size(); ++i)
                     an->grad[i * n + cols[i]] += self.grad[i];
                 });
}

Tensor reduce_sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto an = a.node();
  return make_op("reduce_sum", {1, 1}, {s}, {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (double& g : an->grad) g += self.grad[0];
  });
}

Tensor reduce_mean(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  int n = a.size();
  auto an = a.node();
  return make_op("reduce_mean", {1, 1}, {s / n}, {a}, [an, n](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (double& g : an->grad) g += self.grad[0] / n;
  });
}

Tensor reshape(const Tensor& a, Shape s) {
  if (numel(s) != a.size()) throw ShapeError("reshape: element count mismatch");
  auto an = a.node();
  return make_op("reshape", std::move(s), a.data(), {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.value.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor detach(const Tensor& a) {
  return Tensor(make_node(a.shape(), a.data(), false));
}

Tensor make_custom_op(const char* name, Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs,
                      std::function<void(TensorNode&)> backprop) {
  return make_op(name, std::move(shape), std::move(value), std::move(inputs),
                 std::move(backprop));
}

// ---------------------------------------------------------------------------
// composites
// ---------------------------------------------------------------------------

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<double>& weights) {
  int m = logits.rows();
  if (static_cast<int>(targets.size()) != m)
    throw ShapeError("cross_entropy_rows: one target per row required");
  std::vector<double> w = weights.empty() ? std::vector<double>(m, 1.0) : weights;
  if (static_cast<int>(w.size()) != m)
    throw ShapeError("cross_entropy_rows: weight count mismatch");
  double wsum = 0.0;
  for (double x : w) wsum += x;
  if (wsum <= 0.0) throw InputError("cross_entropy_rows: weights sum to zero");
  Tensor per_row = sub(logsumexp_rows(logits), select_per_row(logits, targets));
  Tensor wrow = Tensor::from({1, m}, std::move(w));
  return scale(matmul(wrow, per_row), 1.0 / wsum);
}

Tensor bce_with_logits_mean(const Tensor& logits, const std::vector<double>& targets) {
  if (static_cast<int>(targets.size()) != logits.size())
    throw ShapeError("bce_with_logits_mean: target count mismatch");
  // log(1+e^x) - x*t, elementwise
  Tensor t = Tensor::from(logits.shape(), targets);
  return reduce_mean(sub(softplus(logits), mul(logits, t)));
}

Tensor dice_loss(const Tensor& logits, const std::vector<double>& targets, double eps) {
  if (static_cast<int>(targets.size()) != logits.size())
    throw ShapeError("dice_loss: target count mismatch");
  Tensor p = sigmoid(logits);
  Tensor g = Tensor::from(logits.shape(), targets);
  double gsum = 0.0;
  for (double v : targets) gsum += v;
  Tensor inter = reduce_sum(mul(p, g));
  Tensor denom = add_const(reduce_sum(p), gsum + eps);
  return add_const(scale(div(inter, denom), -2.0), 1.0);
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

void AdamW::step(const std::vector<Tensor>& params, double lr_override) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].size(), 0.0);
      v_[i].assign(params[i].size(), 0.0);
    }
  }
  if (m_.size() != params.size())
    throw InputError("AdamW: parameter count changed between steps");
  ++t_;
  double lr = lr_override >= 0.0 ? lr_override : cfg_.lr;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto& val = p.data();
    const auto& g = p.grad();
    auto& mi = m_[i];
    auto& vi = v_[i];
    if (mi.size() != val.size()) throw InputError("AdamW: state shape mismatch");
    for (size_t j = 0; j < val.size(); ++j) {
      mi[j] = cfg_.beta1 * mi[j] + (1.0 - cfg_.beta1) * g[j];
      vi[j] = cfg_.beta2 * vi[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      double mhat = mi[j] / bc1;
      double vhat = vi[j] / bc2;
      val[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * val[j]);
    }
  }
}

}  // namespace uvl
