#include <cmath>
#include <random>

#include "doctest.h"
#include "grad_check.hpp"
#include "uvl/tensor.hpp"

using namespace uvl;

TEST_CASE("matmul identity and orthogonal cases") {
  Tensor I = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor A = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor P = matmul(I, A);
  CHECK(P.data() == A.data());

  Tensor a = Tensor::from({1, 2}, {1, 0});
  Tensor b = Tensor::from({2, 1}, {0, 1});
  CHECK(matmul(a, b).item() == 0.0);

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("matmul gradient vs finite differences") {
  std::mt19937_64 rng(7);
  Tensor a = Tensor::randn({3, 4}, 1.0, rng, true);
  Tensor b = Tensor::randn({4, 2}, 1.0, rng, true);
  auto loss = [&] { return reduce_sum(matmul(a, b)); };
  CHECK(gradcheck::max_grad_error(loss, {a, b}, 1e-5) < 1e-5);
}

TEST_CASE("softmax values and stability") {
  Tensor u = softmax_rows(Tensor::from({1, 3}, {0, 0, 0}));
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor big = softmax_rows(Tensor::from({1, 2}, {1000, 0}));
  CHECK(big.data()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(big.data()[1] == doctest::Approx(0.0).epsilon(1e-12));

  Tensor s = softmax_rows(Tensor::from({1, 3}, {1, 2, 3}));
  CHECK(s.data()[0] == doctest::Approx(0.09003057).epsilon(1e-6));
  CHECK(s.data()[1] == doctest::Approx(0.24472847).epsilon(1e-6));
  CHECK(s.data()[2] == doctest::Approx(0.66524096).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one on random input") {
  std::mt19937_64 rng(3);
  Tensor x = Tensor::randn({5, 9}, 3.0, rng);
  Tensor p = softmax_rows(x);
  for (int i = 0; i < 5; ++i) {
    double s = 0;
    for (int j = 0; j < 9; ++j) s += p.at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("elementwise basics") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  std::mt19937_64 rng(1);
  Tensor x = Tensor::randn({2, 6}, 2.0, rng);
  Tensor s = sigmoid(x);
  for (double v : s.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  // layernorm of a constant row is zero before the affine shift
  Tensor c = Tensor::full({1, 4}, 3.7);
  Tensor g1 = Tensor::full({1, 4}, 1.0);
  Tensor b0 = Tensor::zeros({1, 4});
  Tensor ln = layernorm_rows(c, g1, b0);
  for (double v : ln.data()) CHECK(std::abs(v) < 1e-9);

  Tensor cc = concat_cols({Tensor::zeros({2, 3}), Tensor::zeros({2, 5})});
  CHECK(cc.shape() == Shape{2, 8});

  CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), NumericError);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  backward(reduce_sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor y = Tensor::from({1, 2}, {1, 2}, true);
  backward(reduce_sum(mul(y, y)));
  CHECK(y.grad()[0] == 2.0);
  CHECK(y.grad()[1] == 4.0);

  CHECK_THROWS_AS(backward(Tensor::zeros({2, 2}, true)), ShapeError);
}

TEST_CASE("gradient check across the op suite") {
  std::mt19937_64 rng(42);
  Tensor a = Tensor::randn({4, 5}, 1.0, rng, true);
  Tensor b = Tensor::randn({4, 5}, 1.0, rng, true);
  Tensor g = Tensor::randn({1, 5}, 0.3, rng, true);
  Tensor bias = Tensor::randn({1, 5}, 0.3, rng, true);
  Tensor eta = Tensor::scalar(0.4, true);

  SUBCASE("mixed elementwise + reductions") {
    auto loss = [&] {
      Tensor t = add(mul(a, b), scale(sigmoid(a), 0.5));
      t = sub(t, relu(b));
      t = add(t, softplus(scale(a, 0.3)));
      return reduce_mean(t);
    };
    CHECK(gradcheck::max_grad_error(loss, {a, b}) < 1e-4);
  }
  SUBCASE("softmax / logsumexp / layernorm") {
    auto loss = [&] {
      Tensor t = layernorm_rows(a, g, bias);
      Tensor p = softmax_rows(t);
      return add(reduce_sum(mul(p, b)), reduce_mean(logsumexp_rows(t)));
    };
    CHECK(gradcheck::max_grad_error(loss, {a, g, bias, b}) < 1e-4);
  }
  SUBCASE("slicing, concat, gather, transpose") {
    auto loss = [&] {
      Tensor t = concat_rows({slice_rows(a, 0, 2), slice_rows(b, 1, 3)});
      t = concat_cols({slice_cols(t, 0, 3), slice_cols(t, 2, 3)});
      t = gather_rows(t, {0, 0, 3, 2});
      return reduce_sum(matmul(t, transpose(t)));
    };
    CHECK(gradcheck::max_grad_error(loss, {a, b}, 1e-5) < 1e-4);
  }
  SUBCASE("scale_by, div, exp, log") {
    auto loss = [&] {
      Tensor t = scale_by(a, exp(eta));
      Tensor d = div(t, add_const(sigmoid(b), 1.0));
      return reduce_mean(log(add_const(mul(d, d), 0.1)));
    };
    CHECK(gradcheck::max_grad_error(loss, {a, b, eta}) < 1e-4);
  }
  SUBCASE("l2 normalize and select_per_row") {
    auto loss = [&] {
      Tensor t = l2_normalize_rows(a);
      return add(reduce_sum(select_per_row(t, {0, 3, 1, 2})),
                 reduce_mean(add_rowvec(t, bias)));
    };
    CHECK(gradcheck::max_grad_error(loss, {a, bias}) < 1e-4);
  }
}

TEST_CASE("composite losses match hand arithmetic") {
  // uniform logits over 3 classes -> CE = ln 3
  Tensor logits = Tensor::zeros({2, 3});
  CHECK(cross_entropy_rows(logits, {0, 2}).item() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));

  // saturated bce
  Tensor big = Tensor::from({1, 2}, {20.0, -20.0});
  CHECK(bce_with_logits_mean(big, {1.0, 0.0}).item() < 1e-6);

  // dice on p=(1,0) vs g=(1,1): 1 - 2/(1+2+eps) ~ 1/3
  Tensor dl = dice_loss(Tensor::from({1, 2}, {50.0, -50.0}), {1.0, 1.0});
  CHECK(dl.item() == doctest::Approx(1.0 / 3).epsilon(1e-6));
}

TEST_CASE("composite loss gradients") {
  std::mt19937_64 rng(11);
  Tensor x = Tensor::randn({3, 4}, 1.0, rng, true);
  auto ce = [&] { return cross_entropy_rows(x, {1, 0, 3}, {1.0, 0.1, 1.0}); };
  CHECK(gradcheck::max_grad_error(ce, {x}) < 1e-4);
  auto bce = [&] {
    return bce_with_logits_mean(x, {1, 0, 0, 1, 1, 1, 0, 0, 1, 0, 1, 0});
  };
  CHECK(gradcheck::max_grad_error(bce, {x}) < 1e-4);
  auto dice = [&] { return dice_loss(x, {1, 0, 0, 1, 1, 1, 0, 0, 1, 0, 1, 0}); };
  CHECK(gradcheck::max_grad_error(dice, {x}) < 1e-4);
}

TEST_CASE("determinism: same seed gives bit-identical forward and grads") {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tensor a = Tensor::randn({4, 4}, 1.0, rng, true);
    Tensor b = Tensor::randn({4, 4}, 1.0, rng, true);
    Tensor loss = reduce_sum(softmax_rows(matmul(a, sigmoid(b))));
    backward(loss);
    std::vector<double> out = loss.data();
    out.insert(out.end(), a.grad().begin(), a.grad().end());
    out.insert(out.end(), b.grad().begin(), b.grad().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("nan detection") {
  set_debug_checks(true);
  Tensor h = Tensor::from({1, 1}, {1e308});
  CHECK_THROWS_AS(mul(h, h), NumericError);
}

TEST_CASE("adamw") {
  // zero grad, zero weight decay -> unchanged
  Tensor w = Tensor::scalar(1.5, true);
  w.zero_grad();
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  opt.step({w});
  CHECK(w.item() == 1.5);

  // one step on f(w)=w^2 decreases w
  Tensor w2 = Tensor::scalar(1.0, true);
  AdamWConfig c2;
  c2.lr = 0.1;
  c2.weight_decay = 0.0;
  AdamW opt2(c2);
  w2.zero_grad();
  backward(mul(w2, w2));
  opt2.step({w2});
  CHECK(w2.item() < 1.0);

  // 200 steps on f(w)=(w-3)^2 converges near 3
  Tensor w3 = Tensor::scalar(0.0, true);
  AdamWConfig c3;
  c3.lr = 0.05;
  c3.weight_decay = 0.0;
  AdamW opt3(c3);
  for (int i = 0; i < 200; ++i) {
    w3.zero_grad();
    Tensor d = add_const(w3, -3.0);
    backward(mul(d, d));
    opt3.step({w3});
  }
  CHECK(std::abs(w3.item() - 3.0) < 1e-2);
}
