#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rapt/autodiff.hpp"
#include "rapt/rng.hpp"
#include "test_util.hpp"

using namespace rapt;

TEST_CASE("matmul identity and hand-checked products") {
  auto I = make_constant(Tensor({2, 2}, {1, 0, 0, 1}));
  auto v = make_constant(Tensor({2, 1}, {3, 4}));
  auto out = matmul(I, v);
  CHECK(out->value.at2(0, 0) == 3.0);
  CHECK(out->value.at2(1, 0) == 4.0);

  auto a = make_constant(Tensor({1, 2}, {1, 2}));
  auto b = make_constant(Tensor({2, 1}, {3, 4}));
  CHECK(matmul(a, b)->value.item() == 11.0);

  // matrix-vector form
  auto w = make_constant(Tensor({2, 2}, {1, 2, 3, 4}));
  auto x = make_constant(Tensor::vector({1, 1}));
  auto y = matmul(w, x);
  CHECK(y->value.shape() == std::vector<std::size_t>{2});
  CHECK(y->value[0] == 3.0);
  CHECK(y->value[1] == 7.0);
}

TEST_CASE("matmul rejects inner-dimension mismatch") {
  auto a = make_constant(Tensor({2, 3}));
  auto b = make_constant(Tensor({2, 2}));
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul gradients match finite differences") {
  Rng rng(11);
  ParamSet params;
  auto a = params.add("a", test::random_tensor({3, 4}, rng));
  auto b = params.add("b", test::random_tensor({4, 2}, rng));
  const Tensor weights = test::random_tensor({3, 2}, rng);
  auto loss_fn = [&] {
    return sum(mul(matmul(a, b), make_constant(weights)));
  };
  auto res = test::check_gradients(params, loss_fn);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("layer_norm constant input normalizes to beta") {
  auto x = make_constant(Tensor::vector({1, 1, 1}));
  auto gamma = make_constant(Tensor::full({3}, 1.0));
  auto beta = make_constant(Tensor::zeros({3}));
  auto out = layer_norm(x, gamma, beta);
  for (std::size_t i = 0; i < 3; ++i) CHECK(out->value[i] == doctest::Approx(0.0));
}

TEST_CASE("layer_norm leaves zero-mean unit-var input unchanged at eps=0") {
  auto x = make_constant(Tensor::vector({-1, 1}));
  auto gamma = make_constant(Tensor::full({2}, 1.0));
  auto beta = make_constant(Tensor::zeros({2}));
  auto out = layer_norm(x, gamma, beta, 0.0);
  CHECK(out->value[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(out->value[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("layer_norm gradients match finite differences") {
  Rng rng(23);
  ParamSet params;
  auto x = params.add("x", test::random_tensor({8}, rng));
  auto gamma = params.add("gamma", test::random_tensor({8}, rng));
  auto beta = params.add("beta", test::random_tensor({8}, rng));
  const Tensor weights = test::random_tensor({8}, rng);
  auto loss_fn = [&] {
    return sum(mul(layer_norm(x, gamma, beta), make_constant(weights)));
  };
  auto res = test::check_gradients(params, loss_fn);
  CHECK(res.max_rel_err < 1e-5);
}

namespace {

gru::Weights zero_gru(std::size_t d) {
  gru::Weights w;
  w.w_z = make_leaf(Tensor::zeros({d, d}));
  w.u_z = make_leaf(Tensor::zeros({d, d}));
  w.b_z = make_leaf(Tensor::zeros({d}));
  w.w_r = make_leaf(Tensor::zeros({d, d}));
  w.u_r = make_leaf(Tensor::zeros({d, d}));
  w.b_r = make_leaf(Tensor::zeros({d}));
  w.w_n = make_leaf(Tensor::zeros({d, d}));
  w.u_n = make_leaf(Tensor::zeros({d, d}));
  w.b_in = make_leaf(Tensor::zeros({d}));
  w.b_hn = make_leaf(Tensor::zeros({d}));
  return w;
}

}  // namespace

TEST_CASE("gru cell with zero weights halves the hidden state") {
  const std::size_t d = 4;
  gru::Weights w = zero_gru(d);
  auto e = make_constant(Tensor::zeros({d}));
  auto h_prev = make_constant(Tensor::full({d}, 1.0));
  gru::Out out = gru::cell(e, h_prev, w);
  // z = sigmoid(0) = 0.5, n = tanh(0) = 0 => h = 0.5 * h_prev
  for (std::size_t i = 0; i < d; ++i) CHECK(out.h->value[i] == doctest::Approx(0.5));
}

TEST_CASE("gru cell zero state is a fixed point under zero weights") {
  const std::size_t d = 3;
  gru::Weights w = zero_gru(d);
  auto e = make_constant(Tensor::zeros({d}));
  auto h_prev = make_constant(Tensor::zeros({d}));
  gru::Out out = gru::cell(e, h_prev, w);
  for (std::size_t i = 0; i < d; ++i) CHECK(out.h->value[i] == 0.0);
}

TEST_CASE("gru BPTT gradients match finite differences over 5 steps") {
  const std::size_t d = 8;
  Rng rng(37);
  ParamSet params;
  gru::Weights w;
  w.w_z = params.add("w_z", test::random_tensor({d, d}, rng, 0.4));
  w.u_z = params.add("u_z", test::random_tensor({d, d}, rng, 0.4));
  w.b_z = params.add("b_z", test::random_tensor({d}, rng, 0.2));
  w.w_r = params.add("w_r", test::random_tensor({d, d}, rng, 0.4));
  w.u_r = params.add("u_r", test::random_tensor({d, d}, rng, 0.4));
  w.b_r = params.add("b_r", test::random_tensor({d}, rng, 0.2));
  w.w_n = params.add("w_n", test::random_tensor({d, d}, rng, 0.4));
  w.u_n = params.add("u_n", test::random_tensor({d, d}, rng, 0.4));
  w.b_in = params.add("b_in", test::random_tensor({d}, rng, 0.2));
  w.b_hn = params.add("b_hn", test::random_tensor({d}, rng, 0.2));

  std::vector<Tensor> inputs;
  for (int t = 0; t < 5; ++t) inputs.push_back(test::random_tensor({d}, rng));
  const Tensor weights = test::random_tensor({d}, rng);

  auto loss_fn = [&] {
    NodePtr h = make_constant(Tensor::zeros({d}));
    for (const Tensor& in : inputs) {
      h = gru::cell(make_constant(in), h, w).h;
    }
    return sum(mul(h, make_constant(weights)));
  };
  auto res = test::check_gradients(params, loss_fn);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("BPTT unroll gradient agrees with finite differences at T in {1,2,5}") {
  const std::size_t d = 4;
  for (std::size_t T : {1u, 2u, 5u}) {
    Rng rng(1000 + T);
    ParamSet params;
    gru::Weights w = zero_gru(d);
    w.w_n = params.add("w_n", test::random_tensor({d, d}, rng, 0.5));
    w.u_n = params.add("u_n", test::random_tensor({d, d}, rng, 0.5));
    std::vector<Tensor> inputs;
    for (std::size_t t = 0; t < T; ++t) inputs.push_back(test::random_tensor({d}, rng));
    auto loss_fn = [&] {
      NodePtr h = make_constant(Tensor::zeros({d}));
      for (const Tensor& in : inputs) h = gru::cell(make_constant(in), h, w).h;
      return mean(h);
    };
    auto res = test::check_gradients(params, loss_fn);
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("backward of sum(w .* x) gives dx = w") {
  ParamSet params;
  auto x = params.add("x", Tensor::vector({1, 2, 3}));
  const Tensor w({3}, {5, -2, 0.5});
  auto loss = sum(mul(make_constant(w), x));
  backward(loss);
  for (std::size_t i = 0; i < 3; ++i) CHECK(x->grad[i] == w[i]);
}

TEST_CASE("gradients accumulate over multiple uses of one node") {
  ParamSet params;
  auto w = params.add("w", Tensor::vector({2, 3}));
  const Tensor a({2}, {1, 4});
  const Tensor b({2}, {10, 20});
  // loss = sum(w.*a) + sum(w.*b) => dw = a + b
  auto loss = add(sum(mul(w, make_constant(a))), sum(mul(w, make_constant(b))));
  backward(loss);
  CHECK(w->grad[0] == 11.0);
  CHECK(w->grad[1] == 24.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  auto x = make_leaf(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(backward(add(x, x)), std::invalid_argument);
}

TEST_CASE("unreachable parameters keep zero gradients") {
  ParamSet params;
  auto used = params.add("used", Tensor::vector({1, 2}));
  auto unused = params.add("unused", Tensor::vector({3, 4}));
  auto loss = sum(used);
  backward(loss);
  CHECK(used->grad[0] == 1.0);
  CHECK(unused->grad.empty());  // never touched
}

TEST_CASE("forward and gradients are deterministic for a fixed seed") {
  auto run = [] {
    Rng rng(99);
    ParamSet params;
    auto a = params.add("a", test::random_tensor({4, 4}, rng));
    auto x = params.add("x", test::random_tensor({4}, rng));
    auto loss = mean(relu(matmul(a, x)));
    backward(loss);
    std::vector<double> out;
    out.push_back(loss->value.item());
    for (std::size_t i = 0; i < 16; ++i) out.push_back(a->grad[i]);
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("elementwise op gradients match finite differences") {
  Rng rng(7);
  ParamSet params;
  auto x = params.add("x", test::random_tensor({6}, rng, 0.8));
  const Tensor w = test::random_tensor({6}, rng);
  auto loss_fn = [&] {
    NodePtr t = tanh_op(x);
    NodePtr s = sigmoid(x);
    NodePtr e = exp_op(scale(x, 0.3));
    NodePtr c = clamp(x, -0.5, 0.5);
    NodePtr mix = add(add(mul(t, s), e), c);
    return sum(mul(mix, make_constant(w)));
  };
  auto res = test::check_gradients(params, loss_fn);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("slice and concat route gradients to the right places") {
  ParamSet params;
  auto x = params.add("x", Tensor::vector({1, 2, 3, 4}));
  auto y = params.add("y", Tensor::vector({5, 6}));
  auto joined = concat1d(slice(x, 1, 2), y);  // [2,3,5,6]
  CHECK(joined->value.size() == 4);
  auto loss = sum(mul(joined, make_constant(Tensor::vector({1, 10, 100, 1000}))));
  backward(loss);
  CHECK(x->grad[0] == 0.0);
  CHECK(x->grad[1] == 1.0);
  CHECK(x->grad[2] == 10.0);
  CHECK(x->grad[3] == 0.0);
  CHECK(y->grad[0] == 100.0);
  CHECK(y->grad[1] == 1000.0);
}

TEST_CASE("gaussian_nll values match the closed form") {
  auto target = make_constant(Tensor::vector({1.0}));
  auto mu0 = make_constant(Tensor::vector({1.0}));
  auto lv0 = make_constant(Tensor::vector({0.0}));
  CHECK(gaussian_nll(target, mu0, lv0)->value[0] ==
        doctest::Approx(0.5 * std::log(2.0 * M_PI)).epsilon(1e-12));

  auto mu1 = make_constant(Tensor::vector({0.0}));
  CHECK(gaussian_nll(target, mu1, lv0)->value[0] ==
        doctest::Approx(0.5 * std::log(2.0 * M_PI) + 0.5).epsilon(1e-12));

  auto target2 = make_constant(Tensor::vector({2.0}));
  auto mu2 = make_constant(Tensor::vector({0.0}));
  auto lv2 = make_constant(Tensor::vector({std::log(4.0)}));
  CHECK(gaussian_nll(target2, mu2, lv2)->value[0] ==
        doctest::Approx(0.5 * (std::log(2.0 * M_PI) + std::log(4.0) + 1.0)).epsilon(1e-12));
}

TEST_CASE("ParamSet iterates sorted and rejects duplicates") {
  ParamSet p;
  p.add("b.w", Tensor::vector({1}));
  p.add("a.w", Tensor::vector({1}));
  p.add("c.w", Tensor::vector({1}));
  std::vector<std::string> names;
  for (const auto& [name, node] : p) names.push_back(name);
  CHECK(names == std::vector<std::string>{"a.w", "b.w", "c.w"});
  CHECK_THROWS_AS(p.add("a.w", Tensor::vector({1})), std::invalid_argument);
}
