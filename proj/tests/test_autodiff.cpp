#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "oracles.hpp"
#include "surfpool/autodiff.hpp"

using namespace surfpool;
using ad::Tape;
using ad::Tensor;
using ad::Value;

namespace {

Tensor make_tensor(std::vector<std::size_t> shape, std::initializer_list<double> values) {
  Tensor t(std::move(shape));
  REQUIRE(t.numel() == values.size());
  std::copy(values.begin(), values.end(), t.data.begin());
  return t;
}

}  // namespace

TEST_CASE("row_softmax of zeros is uniform with the textbook jacobian") {
  Tape tape;
  Value x = tape.input(make_tensor({1, 2}, {0.0, 0.0}), true);
  Value s = ad::row_softmax(x);
  CHECK(s.tensor().data[0] == doctest::Approx(0.5));
  CHECK(s.tensor().data[1] == doctest::Approx(0.5));

  // Backward with upstream [1, -1]; the 2x2 jacobian is
  // [[s1(1-s1), -s1 s2], [-s1 s2, s2(1-s2)]].
  Value weighted = ad::mul(s, tape.input(make_tensor({1, 2}, {1.0, -1.0}), false));
  Value out = ad::reduce_sum(weighted);
  tape.backward(out);
  const double s1 = 0.5, s2 = 0.5;
  const double expected0 = s1 * (1 - s1) * 1.0 + (-s1 * s2) * (-1.0);
  const double expected1 = (-s1 * s2) * 1.0 + s2 * (1 - s2) * (-1.0);
  CHECK(x.grad().data[0] == doctest::Approx(expected0).epsilon(1e-12));
  CHECK(x.grad().data[1] == doctest::Approx(expected1).epsilon(1e-12));
}

TEST_CASE("leaky relu value and gradient") {
  Tape tape;
  Value x = tape.input(make_tensor({1, 1}, {-1.0}), true);
  Value y = ad::leaky_relu(x, 0.01);
  CHECK(y.tensor().data[0] == doctest::Approx(-0.01));
  Value out = ad::reduce_sum(y);
  tape.backward(out);
  CHECK(x.grad().data[0] == doctest::Approx(0.01));
}

TEST_CASE("matmul gradients match finite differences") {
  std::mt19937_64 rng(1);
  Tape tape;
  Value a = tape.input(oracles::random_tensor({3, 2}, rng), true);
  Value b = tape.input(oracles::random_tensor({2, 4}, rng), true);
  Value out = ad::reduce_sum(ad::square(ad::matmul(a, b)));
  auto report = ad::grad_check(tape, out, {{"a", a}, {"b", b}}, 1e-5);
  CHECK(report.max_rel_err <= 1e-6);
}

TEST_CASE("quadratic gradient is 2x") {
  Tape tape;
  Value x = tape.input(make_tensor({1, 3}, {1.0, 2.0, 3.0}), true);
  Value out = ad::reduce_sum(ad::square(x));
  tape.backward(out);
  CHECK(x.grad().data[0] == doctest::Approx(2.0));
  CHECK(x.grad().data[1] == doctest::Approx(4.0));
  CHECK(x.grad().data[2] == doctest::Approx(6.0));
  auto report = ad::grad_check(tape, out, {{"x", x}}, 1e-5);
  CHECK(report.max_rel_err <= 1e-9);
}

TEST_CASE("every core op matches finite differences on random shapes") {
  std::mt19937_64 rng(7);
  // Each op is checked through a random linear functional of its output so
  // every input entry receives a healthy gradient.
  auto check_op = [&rng](const char* name,
                         const std::function<Value(Tape&, std::vector<Value>&)>& build) {
    Tape tape;
    std::vector<Value> inputs;
    Value out = build(tape, inputs);
    Value weighted =
        ad::mul(out, tape.input(oracles::random_tensor(out.tensor().shape, rng), false));
    Value total = ad::reduce_sum(weighted);
    std::vector<std::pair<std::string, Value>> params;
    for (std::size_t i = 0; i < inputs.size(); ++i)
      params.emplace_back(std::string(name) + "#" + std::to_string(i), inputs[i]);
    auto report = ad::grad_check(tape, total, params, 1e-5);
    INFO(name);
    CHECK(report.max_rel_err <= 1e-6);
  };

  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> dim(2, 5);
    const std::size_t n = dim(rng), m = dim(rng), k = dim(rng);
    auto leaf = [&](Tape& t, std::vector<Value>& ins, std::vector<std::size_t> shape) {
      ins.push_back(t.input(oracles::random_tensor(std::move(shape), rng), true));
      return ins.back();
    };

    check_op("matmul", [&](Tape& t, std::vector<Value>& ins) {
      return ad::matmul(leaf(t, ins, {n, m}), leaf(t, ins, {m, k}));
    });
    check_op("matmul_tn", [&](Tape& t, std::vector<Value>& ins) {
      return ad::matmul_tn(leaf(t, ins, {k, n}), leaf(t, ins, {k, m}));
    });
    check_op("matmul_nt", [&](Tape& t, std::vector<Value>& ins) {
      return ad::matmul_nt(leaf(t, ins, {n, k}), leaf(t, ins, {m, k}));
    });
    check_op("add", [&](Tape& t, std::vector<Value>& ins) {
      return ad::add(leaf(t, ins, {n, m}), leaf(t, ins, {n, m}));
    });
    check_op("add_broadcast", [&](Tape& t, std::vector<Value>& ins) {
      return ad::add(leaf(t, ins, {n, m}), leaf(t, ins, {1, m}));
    });
    check_op("sub", [&](Tape& t, std::vector<Value>& ins) {
      return ad::sub(leaf(t, ins, {n, m}), leaf(t, ins, {n, m}));
    });
    check_op("mul", [&](Tape& t, std::vector<Value>& ins) {
      return ad::mul(leaf(t, ins, {n, m}), leaf(t, ins, {n, m}));
    });
    check_op("mul_broadcast", [&](Tape& t, std::vector<Value>& ins) {
      return ad::mul(leaf(t, ins, {n, m}), leaf(t, ins, {1, m}));
    });
    check_op("scalar_mul", [&](Tape& t, std::vector<Value>& ins) {
      return ad::scalar_mul(leaf(t, ins, {n, m}), -1.37);
    });
    check_op("neg", [&](Tape& t, std::vector<Value>& ins) {
      return ad::neg(leaf(t, ins, {n, m}));
    });
    check_op("exp", [&](Tape& t, std::vector<Value>& ins) {
      return ad::exp_(leaf(t, ins, {n, m}));
    });
    check_op("square", [&](Tape& t, std::vector<Value>& ins) {
      return ad::square(leaf(t, ins, {n, m}));
    });
    check_op("leaky_relu", [&](Tape& t, std::vector<Value>& ins) {
      // Keep inputs off the kink so central differences stay valid.
      Tensor lk_t = oracles::random_tensor({n, m}, rng);
      for (double& v : lk_t.data) v = (v >= 0 ? 1.0 : -1.0) * (0.2 + std::abs(v));
      ins.push_back(t.input(std::move(lk_t), true));
      return ad::leaky_relu(ins.back(), 0.01);
    });
    check_op("reduce_sum", [&](Tape& t, std::vector<Value>& ins) {
      return ad::reduce_sum(leaf(t, ins, {n, m}));
    });
    check_op("mean_rows", [&](Tape& t, std::vector<Value>& ins) {
      return ad::mean_rows(leaf(t, ins, {n, m}));
    });
    check_op("gather_rows", [&](Tape& t, std::vector<Value>& ins) {
      return ad::gather_rows(leaf(t, ins, {n, m}), {0, static_cast<int>(n) - 1, 0});
    });
    check_op("segment_sum", [&](Tape& t, std::vector<Value>& ins) {
      std::vector<int> seg(n);
      for (std::size_t i = 0; i < n; ++i) seg[i] = static_cast<int>(i % 2);
      return ad::segment_sum(leaf(t, ins, {n, m}), seg, 2);
    });
    check_op("segment_mean", [&](Tape& t, std::vector<Value>& ins) {
      std::vector<int> seg(n);
      for (std::size_t i = 0; i < n; ++i) seg[i] = static_cast<int>(i % 2);
      return ad::segment_mean(leaf(t, ins, {n, m}), seg, 2);
    });
    check_op("row_softmax", [&](Tape& t, std::vector<Value>& ins) {
      return ad::row_softmax(leaf(t, ins, {n, m}));
    });
    check_op("reshape", [&](Tape& t, std::vector<Value>& ins) {
      return ad::reshape(leaf(t, ins, {n, m}), {m, n});
    });
  }
}

TEST_CASE("cross entropy with logits") {
  Tape tape;
  Value logits = tape.input(make_tensor({1, 2}, {0.3, 0.3}), true);
  Value loss = ad::cross_entropy_with_logits(logits, 0);
  CHECK(loss.tensor().data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  auto report = ad::grad_check(tape, loss, {{"logits", logits}}, 1e-6);
  CHECK(report.max_rel_err <= 1e-8);
  CHECK_THROWS_AS(ad::cross_entropy_with_logits(logits, 2), ArgumentError);
  CHECK_THROWS_AS(ad::cross_entropy_with_logits(logits, -1), ArgumentError);
}

TEST_CASE("forward determinism: same inputs give bit-identical outputs") {
  std::mt19937_64 rng(9);
  const Tensor a = oracles::random_tensor({6, 5}, rng);
  const Tensor b = oracles::random_tensor({5, 4}, rng);
  auto run = [&] {
    Tape tape;
    Value out = ad::reduce_sum(
        ad::row_softmax(ad::matmul(tape.input(a, false), tape.input(b, false))));
    return out.tensor().data[0];
  };
  const double r1 = run(), r2 = run();
  CHECK(r1 == r2);
}

TEST_CASE("backward linearity") {
  std::mt19937_64 rng(11);
  const Tensor xt = oracles::random_tensor({4, 3}, rng);
  const double ca = 1.7, cb = -0.6;

  auto gradient_of = [&](double wa, double wb) {
    Tape tape;
    Value x = tape.input(xt, true);
    Value f = ad::reduce_sum(ad::square(x));
    Value g = ad::reduce_sum(ad::exp_(ad::scalar_mul(x, 0.5)));
    Value combo = ad::add(ad::scalar_mul(f, wa), ad::scalar_mul(g, wb));
    tape.backward(combo);
    return x.grad();
  };
  const Tensor ga = gradient_of(1.0, 0.0);
  const Tensor gb = gradient_of(0.0, 1.0);
  const Tensor combo = gradient_of(ca, cb);
  for (std::size_t e = 0; e < combo.numel(); ++e)
    CHECK(combo.data[e] ==
          doctest::Approx(ca * ga.data[e] + cb * gb.data[e]).epsilon(1e-12));
}

TEST_CASE("no gradient leakage to requires_grad=false inputs") {
  std::mt19937_64 rng(13);
  Tape tape;
  Value a = tape.input(oracles::random_tensor({3, 3}, rng), true);
  Value frozen = tape.input(oracles::random_tensor({3, 3}, rng), false);
  Value out = ad::reduce_sum(ad::mul(a, frozen));
  tape.backward(out);
  CHECK_NOTHROW(a.grad());
  CHECK_THROWS_AS(frozen.grad(), StateError);
}

TEST_CASE("gradient accumulation across multiple uses") {
  Tape tape;
  Value x = tape.input(make_tensor({1, 1}, {3.0}), true);
  // f = x*x + x -> f' = 2x + 1 = 7
  Value out = ad::reduce_sum(ad::add(ad::mul(x, x), x));
  tape.backward(out);
  CHECK(x.grad().data[0] == doctest::Approx(7.0));
}

TEST_CASE("shape mismatch names both shapes") {
  Tape tape;
  Value a = tape.input(Tensor({2, 3}), false);
  Value b = tape.input(Tensor({4, 5}), false);
  try {
    ad::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("backward before forward raises StateError") {
  Tape tape;
  Value empty;
  CHECK_THROWS_AS(tape.backward(empty), StateError);
  Value x = tape.input(make_tensor({1, 1}, {1.0}), true);
  Value y = ad::square(x);
  Tape other;
  CHECK_THROWS_AS(other.backward(y), StateError);  // value from another tape
}

TEST_CASE("backward requires a scalar output") {
  Tape tape;
  Value x = tape.input(Tensor({2, 2}), true);
  Value y = ad::square(x);
  CHECK_THROWS_AS(tape.backward(y), StateError);
}

TEST_CASE("grad_check raises NumericalError on non-finite objectives") {
  Tape tape;
  Value x = tape.input(make_tensor({1, 1}, {710.0}), true);  // exp overflows
  Value out = ad::reduce_sum(ad::exp_(x));
  CHECK_THROWS_AS(ad::grad_check(tape, out, {{"x", x}}, 1e-3), NumericalError);
}

TEST_CASE("reduce_sum accumulates left to right") {
  // With a fixed order, the result is bit-reproducible against a manual loop.
  std::mt19937_64 rng(15);
  Tensor t = oracles::random_tensor({7, 3}, rng);
  double manual = 0.0;
  for (double v : t.data) manual += v;
  Tape tape;
  Value out = ad::reduce_sum(tape.input(t, false));
  CHECK(out.tensor().data[0] == manual);
}

TEST_CASE("gather and segment ops validate indices") {
  Tape tape;
  Value x = tape.input(Tensor({3, 2}), false);
  CHECK_THROWS_AS(ad::gather_rows(x, {0, 3}), ArgumentError);
  CHECK_THROWS_AS(ad::segment_sum(x, {0, 1}, 2), ShapeError);   // wrong id count
  CHECK_THROWS_AS(ad::segment_sum(x, {0, 1, 5}, 2), ArgumentError);
}
