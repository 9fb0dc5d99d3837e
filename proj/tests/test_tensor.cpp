// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "avp/gradcheck.hpp"
#include "avp/rng.hpp"
#include "avp/tensor.hpp"

using namespace avp;

namespace {

Tensor t2(std::vector<std::size_t> shape, std::vector<double> v) {
  return Tensor::from_data(std::move(shape), std::move(v));
}

void check_close(const Tensor& t, const std::vector<double>& want, double tol = 1e-12) {
  REQUIRE(t.data().size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(std::abs(t.data()[i] - want[i]) <= tol);
  }
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul identity and small products") {
  Tensor eye = t2({2, 2}, {1, 0, 0, 1});
  Tensor col = t2({2, 1}, {3, 4});
  check_close(matmul(eye, col), {3, 4});
  check_close(matmul(t2({1, 2}, {1, 2}), col), {11});
  CHECK_THROWS_AS(matmul(t2({2, 3}, {1, 2, 3, 4, 5, 6}), col), std::invalid_argument);
}

TEST_CASE("matmul gradient of sum equals ones times b^T") {
  auto eng = make_engine(11, "matmul-grad");
  Tensor a = Tensor::randn({3, 4}, eng);
  Tensor b = Tensor::randn({4, 2}, eng);

  auto f = [](const std::vector<Tensor>& xs) { return sum_all(matmul(xs[0], xs[1])); };
  auto rep = check_gradients(f, {a, b});
  CHECK(rep.max_rel_err < 1e-6);

  // closed form: d sum(AB) / dA = ones(3,2) . B^T
  GradTape tape;
  Tensor al = Tensor::from_data(a.shape(), a.data(), true);
  Tensor bl = Tensor::from_data(b.shape(), b.data(), true);
  {
    TapeScope scope(tape);
    tape.backward(sum_all(matmul(al, bl)));
  }
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double want = 0.0;
      for (std::size_t k = 0; k < 2; ++k) want += b.data()[j * 2 + k];
      CHECK(al.grad()[i * 4 + j] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("concat_lastdim values, shape arithmetic, gradient split") {
  check_close(concat_lastdim(t2({2}, {1, 2}), t2({1}, {3})), {1, 2, 3});

  auto eng = make_engine(3, "concat");
  Tensor a = Tensor::randn({2, 5, 7}, eng);
  Tensor b = Tensor::randn({2, 5, 9}, eng);
  Tensor c = concat_lastdim(a, b);
  CHECK(c.shape() == std::vector<std::size_t>{2, 5, 16});

  auto f = [](const std::vector<Tensor>& xs) {
    Tensor y = concat_lastdim(xs[0], xs[1]);
    return sum_all(mul(y, y));
  };
  CHECK(check_gradients(f, {Tensor::randn({2, 3}, eng), Tensor::randn({2, 2}, eng)}).max_rel_err <
        1e-6);

  CHECK_THROWS_AS(concat_lastdim(t2({2, 2}, {1, 2, 3, 4}), t2({3, 1}, {1, 2, 3})),
                  std::invalid_argument);
}

TEST_CASE("softmax_masked examples") {
  check_close(softmax_masked(t2({1, 2}, {0, 0}), t2({1, 2}, {1, 1}), 1), {0.5, 0.5});
  Tensor s = softmax_masked(t2({1, 3}, {10, 0, 10}), t2({1, 3}, {1, 0, 1}), 1);
  check_close(s, {0.5, 0.0, 0.5});
  CHECK(s.data()[1] == 0.0);  // exact zero at the masked slot

  const double e = std::exp(1.0);
  check_close(softmax(t2({1, 2}, {1, 2}), 1), {1.0 / (1.0 + e), e / (1.0 + e)}, 1e-15);

  CHECK_THROWS_AS(softmax_masked(t2({1, 2}, {1, 2}), t2({1, 2}, {0, 0}), 1),
                  std::invalid_argument);
}

TEST_CASE("softmax rows sum to one and gradients pass") {
  auto eng = make_engine(5, "softmax");
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = Tensor::randn({4, 6}, eng, 2.0);
    std::vector<double> mask(24, 0.0);
    for (std::size_t r = 0; r < 4; ++r) {
      mask[r * 6 + bounded(eng, 6)] = 1.0;  // at least one live entry per row
      for (std::size_t c = 0; c < 6; ++c) {
        if (uniform_unit(eng) < 0.6) mask[r * 6 + c] = 1.0;
      }
    }
    Tensor m = t2({4, 6}, mask);
    Tensor y = softmax_masked(x, m, 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        sum += y.data()[r * 6 + c];
        if (mask[r * 6 + c] == 0.0) CHECK(y.data()[r * 6 + c] == 0.0);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    auto f = [m](const std::vector<Tensor>& xs) {
      Tensor sm = softmax_masked(xs[0], m, 1);
      return sum_all(mul(sm, sm));
    };
    CHECK(check_gradients(f, {x}).max_rel_err < 1e-4);
  }
}

TEST_CASE("activations") {
  check_close(relu(t2({2}, {-1, 2})), {0, 2});
  check_close(leaky_relu(t2({1}, {-10}), 0.2), {-2});
  check_close(elu(t2({1}, {0})), {0});
  check_close(elu(t2({1}, {-1})), {std::expm1(-1.0)});
  check_close(sigmoid(t2({1}, {0})), {0.5});

  auto eng = make_engine(7, "acts");
  // points away from the relu/leaky kinks by construction
  std::vector<double> vals(12);
  for (double& v : vals) {
    v = normal(eng);
    if (std::abs(v) < 0.05) v = 0.1;
  }
  Tensor x = t2({3, 4}, vals);
  for (auto fn : {+[](const Tensor& t) { return relu(t); },
                  +[](const Tensor& t) { return leaky_relu(t, 0.2); },
                  +[](const Tensor& t) { return elu(t, 1.0); },
                  +[](const Tensor& t) { return sigmoid(t); }}) {
    auto f = [fn](const std::vector<Tensor>& xs) { return sum_all(mul(fn(xs[0]), fn(xs[0]))); };
    CHECK(check_gradients(f, {x}).max_rel_err < 1e-4);
  }
}

TEST_CASE("layer_norm examples and invariance to constant shifts") {
  Tensor gain = Tensor::ones({2});
  Tensor bias = Tensor::zeros({2});
  Tensor y = layer_norm(t2({1, 2}, {1, 3}), gain, bias);
  CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-4));

  Tensor g3 = Tensor::ones({3}), b3 = Tensor::zeros({3});
  check_close(layer_norm(t2({1, 3}, {5, 5, 5}), g3, b3), {0, 0, 0}, 1e-9);

  auto eng = make_engine(13, "ln");
  Tensor x = Tensor::randn({1, 64}, eng);
  Tensor out = layer_norm(x, Tensor::ones({64}), Tensor::zeros({64}));
  double mean = 0.0, var = 0.0;
  for (double v : out.data()) mean += v;
  mean /= 64.0;
  for (double v : out.data()) var += (v - mean) * (v - mean);
  var /= 64.0;
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(var - 1.0) < 1e-3);

  // shifting the input by a constant leaves the output unchanged
  std::vector<double> shifted = x.data();
  for (double& v : shifted) v += 3.25;
  Tensor out2 = layer_norm(t2({1, 64}, shifted), Tensor::ones({64}), Tensor::zeros({64}));
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(std::abs(out.data()[i] - out2.data()[i]) < 1e-6);
  }

  auto f = [](const std::vector<Tensor>& xs) {
    Tensor o = layer_norm(xs[0], xs[1], xs[2]);
    return sum_all(mul(o, o));
  };
  CHECK(check_gradients(f, {Tensor::randn({3, 5}, eng), Tensor::randn({5}, eng),
                            Tensor::randn({5}, eng)})
            .max_rel_err < 1e-4);
}

TEST_CASE("batch_norm_1d train/eval behaviour") {
  Tensor gamma = Tensor::ones({1}), beta = Tensor::zeros({1});
  BatchNormState st(1);
  Tensor y = batch_norm_1d(t2({2, 1}, {0, 2}), gamma, beta, st, Mode::Train);
  CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-4));

  BatchNormState fresh(1);  // running mean 0, var 1: eval is the identity up to eps
  check_close(batch_norm_1d(t2({3, 1}, {0.5, -2, 7}), gamma, beta, fresh, Mode::Eval),
              {0.5 / std::sqrt(1.0 + 1e-5), -2 / std::sqrt(1.0 + 1e-5), 7 / std::sqrt(1.0 + 1e-5)},
              1e-9);

  BatchNormState st1(1);
  CHECK_THROWS_AS(batch_norm_1d(t2({1, 1}, {1}), gamma, beta, st1, Mode::Train),
                  std::invalid_argument);

  // after enough training batches the running stats track the data
  auto eng = make_engine(17, "bn");
  BatchNormState st2(3);
  Tensor g3 = Tensor::ones({3}), b3 = Tensor::zeros({3});
  Tensor batch = Tensor::randn({64, 3}, eng);
  for (int i = 0; i < 50; ++i) batch_norm_1d(batch, g3, b3, st2, Mode::Train);
  Tensor out = batch_norm_1d(batch, g3, b3, st2, Mode::Eval);
  for (std::size_t jf = 0; jf < 3; ++jf) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 64; ++i) mean += out.data()[i * 3 + jf];
    CHECK(std::abs(mean / 64.0) < 0.1);
  }

  auto f = [](const std::vector<Tensor>& xs) {
    BatchNormState local(4);
    Tensor o = batch_norm_1d(xs[0], xs[1], xs[2], local, Mode::Train);
    return sum_all(mul(o, o));
  };
  CHECK(check_gradients(f, {Tensor::randn({6, 4}, eng), Tensor::randn({4}, eng),
                            Tensor::randn({4}, eng)})
            .max_rel_err < 1e-4);
}

TEST_CASE("dropout identities and statistics") {
  auto eng = make_engine(23, "dropout");
  Tensor x = Tensor::randn({5, 5}, eng);

  Tensor same = dropout(x, 0.0, Mode::Train, eng);
  CHECK(same.node().get() == x.node().get());
  Tensor same2 = dropout(x, 0.7, Mode::Eval, eng);
  CHECK(same2.node().get() == x.node().get());
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::Train, eng), std::invalid_argument);

  Tensor big = Tensor::ones({100000});
  Tensor dropped = dropout(big, 0.5, Mode::Train, eng);
  double mean = 0.0;
  for (double v : dropped.data()) mean += v;
  mean /= 1e5;
  CHECK(std::abs(mean - 1.0) < 3.0 / std::sqrt(1e5));  // 3 sigma

  auto f = [](const std::vector<Tensor>& xs) {
    auto local = make_engine(99, "dropout-grad");
    Tensor o = dropout(xs[0], 0.3, Mode::Train, local);
    return sum_all(mul(o, o));
  };
  CHECK(check_gradients(f, {x}).max_rel_err < 1e-4);
}

TEST_CASE("mean/sum reductions") {
  check_close(mean_axis(t2({2, 1}, {1, 3}), 0), {2});
  Tensor one = t2({1, 4}, {1, 2, 3, 4});
  check_close(mean_axis(one, 0), {1, 2, 3, 4});  // single-entry axis is the identity

  auto eng = make_engine(29, "reduce");
  Tensor x = Tensor::randn({3, 4, 2}, eng);
  auto f = [](const std::vector<Tensor>& xs) {
    return sum_all(mul(mean_axis(xs[0], 1), mean_axis(xs[0], 1)));
  };
  auto rep = check_gradients(f, {x});
  CHECK(rep.max_rel_err < 1e-4);

  // gradient of mean over an axis broadcasts 1/len
  GradTape tape;
  Tensor xl = Tensor::from_data(x.shape(), x.data(), true);
  {
    TapeScope scope(tape);
    tape.backward(sum_all(mean_axis(xl, 1)));
  }
  for (double g : xl.grad()) CHECK(g == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("slice/stack/index round trips") {
  auto eng = make_engine(31, "slice");
  Tensor x = Tensor::randn({2, 3, 4}, eng);
  Tensor i1 = index_axis(x, 1, 2);
  CHECK(i1.shape() == std::vector<std::size_t>{2, 4});
  CHECK(i1.at({1, 3}) == x.at({1, 2, 3}));

  Tensor s = slice_axis(x, 2, 1, 2);
  CHECK(s.shape() == std::vector<std::size_t>{2, 3, 2});
  CHECK(s.at({1, 2, 0}) == x.at({1, 2, 1}));

  std::vector<Tensor> items = {index_axis(x, 0, 0), index_axis(x, 0, 1)};
  Tensor back = stack(items, 0);
  CHECK(back.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(back.data()[i] == x.data()[i]);

  auto f = [](const std::vector<Tensor>& xs) {
    Tensor y = stack({index_axis(xs[0], 0, 1), slice_axis(index_axis(xs[0], 0, 0), 1, 0, 4)}, 0);
    return sum_all(mul(y, y));
  };
  CHECK(check_gradients(f, {x}).max_rel_err < 1e-4);
}

TEST_CASE("check_gradients on sum of squares") {
  auto f = [](const std::vector<Tensor>& xs) { return sum_all(mul(xs[0], xs[0])); };
  std::vector<Tensor> point = {t2({2}, {1, 2})};

  GradTape tape;
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  {
    TapeScope scope(tape);
    tape.backward(f({x}));
  }
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
  CHECK(check_gradients(f, point).max_rel_err < 1e-6);
}

TEST_CASE("tape accumulates reused tensors once per use") {
  GradTape tape;
  Tensor x = Tensor::from_data({1}, {3.0}, true);
  Tensor y = Tensor::from_data({1}, {5.0}, true);
  {
    TapeScope scope(tape);
    Tensor z = add(mul(x, y), x);  // z = xy + x, dz/dx = y + 1
    tape.backward(z);
  }
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(y.grad()[0] == doctest::Approx(3.0));
}

TEST_CASE("scalar ops and clamp/log") {
  Tensor x = t2({3}, {0.2, 0.5, 0.9});
  check_close(sub_from_scalar(1.0, x), {0.8, 0.5, 0.1}, 1e-15);
  check_close(clamp(t2({3}, {-1, 0.5, 2}), 0.0, 1.0), {0, 0.5, 1});
  CHECK_THROWS_AS(log(t2({1}, {-1})), std::invalid_argument);

  auto f = [](const std::vector<Tensor>& xs) {
    return mean_all(log(clamp(xs[0], 1e-7, 1.0 - 1e-7)));
  };
  CHECK(check_gradients(f, {x}).max_rel_err < 1e-4);
}

TEST_SUITE_END();
