#include <doctest.h>

#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "dgf/diffmath.hpp"
#include "dgf/errors.hpp"
#include "dgf/rng.hpp"
#include "fd_check.hpp"

using namespace dgf::diffmath;
using dgf::testutil::fd_max_rel_err;

namespace {

Tensor rand_t(dgf::Rng& rng, Shape s, double lo = -2.0, double hi = 2.0) {
  Tensor t = Tensor::zeros(std::move(s));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Dot the op output against fixed random weights so any op becomes a scalar
// and the full Jacobian is exercised. Seeded per call site: the FD harness
// re-evaluates the build function, which must be a fixed function of its
// leaves.
Var weigh(Tape& t, Var y, std::uint64_t seed) {
  dgf::Rng rng(seed);
  Tensor w = Tensor::zeros(y.shape());
  for (double& v : w.data) v = rng.uniform(-1.0, 1.0);
  return reduce_sum(mul(y, t.leaf(std::move(w))));
}

constexpr double kOpTol = 1e-6;  // per-op gradient check bound

}  // namespace

TEST_SUITE_BEGIN("diffmath");

TEST_CASE("elementwise binary op gradients") {
  dgf::Rng rng(21);
  auto a = rand_t(rng, {3, 4});
  auto b = rand_t(rng, {3, 4});
  for (double& v : b.data)
    if (std::fabs(v) < 0.3) v += 0.7;  // safe divisors

  auto mk = [&](auto op) {
    return fd_max_rel_err(
        [&, op](Tape& t, const std::vector<Var>& vs) {
          return weigh(t, op(vs[0], vs[1]), 101);
        },
        {a, b});
  };
  CHECK(mk([](Var x, Var y) { return add(x, y); }) < kOpTol);
  CHECK(mk([](Var x, Var y) { return sub(x, y); }) < kOpTol);
  CHECK(mk([](Var x, Var y) { return mul(x, y); }) < kOpTol);
  CHECK(mk([](Var x, Var y) { return div(x, y); }) < kOpTol);
}

TEST_CASE("elementwise unary and scalar op gradients") {
  dgf::Rng rng(23);
  auto a = rand_t(rng, {2, 5}, 0.4, 1.8);  // positive, away from kinks
  auto b = rand_t(rng, {2, 5}, -2.0, 2.0);
  for (double& v : b.data)
    if (std::fabs(v) < 0.1) v += 0.3;  // keep relu/abs off their corner

  auto chk = [&](const Tensor& in, auto op) {
    return fd_max_rel_err(
        [&, op](Tape& t, const std::vector<Var>& vs) {
          return weigh(t, op(vs[0]), 102);
        },
        {in});
  };
  CHECK(chk(a, [](Var x) { return vexp(x); }) < kOpTol);
  CHECK(chk(a, [](Var x) { return vlog(x); }) < kOpTol);
  CHECK(chk(a, [](Var x) { return vsqrt(x); }) < kOpTol);
  CHECK(chk(b, [](Var x) { return vabs(x); }) < kOpTol);
  CHECK(chk(b, [](Var x) { return relu(x); }) < kOpTol);
  CHECK(chk(b, [](Var x) { return clamp(x, -1.3, 1.3); }) < kOpTol);
  CHECK(chk(b, [](Var x) { return adds(x, 0.9); }) < kOpTol);
  CHECK(chk(b, [](Var x) { return muls(x, -2.4); }) < kOpTol);
  CHECK(chk(b, [](Var x) { return rsubs(x, 1.1); }) < kOpTol);
  CHECK(chk(a, [](Var x) { return rdivs(x, 2.0); }) < kOpTol);
  CHECK(chk(b, [](Var x) { return neg(x); }) < kOpTol);
}

TEST_CASE("matmul value and gradients") {
  Tape t;
  Var a = t.leaf({2, 2}, {1, 2, 3, 4});
  Var b = t.leaf({2, 2}, {5, 6, 7, 8});
  Var c = matmul(a, b);
  CHECK(c.data() == std::vector<double>{19, 22, 43, 50});

  dgf::Rng rng(25);
  auto ta = rand_t(rng, {3, 4});
  auto tb = rand_t(rng, {4, 5});
  CHECK(fd_max_rel_err(
            [&](Tape& tp, const std::vector<Var>& vs) {
              return weigh(tp, matmul(vs[0], vs[1]), 103);
            },
            {ta, tb}) < kOpTol);

  CHECK_THROWS_AS(matmul(t.leaf({2, 3}, std::vector<double>(6)),
                         t.leaf({2, 3}, std::vector<double>(6))),
                  dgf::ContractViolation);
}

TEST_CASE("transpose gradients") {
  dgf::Rng rng(27);
  CHECK(fd_max_rel_err(
            [&](Tape& tp, const std::vector<Var>& vs) {
              return weigh(tp, transpose2d(vs[0]), 104);
            },
            {rand_t(rng, {3, 5})}) < kOpTol);
}

TEST_CASE("conv2d known values") {
  Tape t;
  // 1x1 identity kernel passes input through
  Var x = t.leaf({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Var w1 = t.leaf({1, 1, 1, 1}, {1.0});
  CHECK(conv2d_valid(x, w1, 1).data() == x.data());

  // 3x3 ones kernel on a constant input sums the window
  Var c = t.leaf(Tensor::full({1, 4, 4}, 2.0));
  Var w3 = t.leaf(Tensor::full({1, 1, 3, 3}, 1.0));
  Var y = conv2d_valid(c, w3, 1);
  CHECK(y.shape() == Shape{1, 2, 2});
  for (double v : y.data()) CHECK(v == doctest::Approx(18.0));
}

TEST_CASE("conv2d gradients: strides and pad modes") {
  dgf::Rng rng(29);
  auto x = rand_t(rng, {2, 6, 6});
  auto w = rand_t(rng, {3, 2, 3, 3});

  for (int stride : {1, 3}) {  // (6-3)%3==0
    CHECK(fd_max_rel_err(
              [&, stride](Tape& tp, const std::vector<Var>& vs) {
                return weigh(tp, conv2d_valid(vs[0], vs[1], stride), 105);
              },
              {x, w}) < kOpTol);
  }
  for (PadMode mode : {PadMode::zero, PadMode::reflect}) {
    CHECK(fd_max_rel_err(
              [&, mode](Tape& tp, const std::vector<Var>& vs) {
                return weigh(tp, conv2d(vs[0], vs[1], 1, mode, 1), 106);
              },
              {x, w}) < kOpTol);
  }
  // reflect pad wider than the input (tiny maps under a big window)
  {
    auto tiny = rand_t(rng, {1, 2, 2});
    auto wt = rand_t(rng, {1, 1, 3, 3});
    CHECK(fd_max_rel_err(
              [&](Tape& tp, const std::vector<Var>& vs) {
                return weigh(tp, conv2d(vs[0], vs[1], 1, PadMode::reflect, 3), 107);
              },
              {tiny, wt}) < kOpTol);
  }

  Tape t;
  CHECK_THROWS_AS(
      conv2d_valid(t.leaf(Tensor::zeros({1, 6, 6})),
                   t.leaf(Tensor::zeros({1, 1, 3, 3})), 2),
      dgf::ContractViolation);  // (6-3)%2 != 0
}

TEST_CASE("gather handles duplicate indices") {
  dgf::Rng rng(33);
  auto x = rand_t(rng, {6});
  auto idx = std::make_shared<std::vector<std::int64_t>>(
      std::vector<std::int64_t>{0, 2, 2, 5, 1, 2});
  CHECK(fd_max_rel_err(
            [&](Tape& tp, const std::vector<Var>& vs) {
              return weigh(tp, gather(vs[0], idx, {6}), 108);
            },
            {x}) < kOpTol);

  Tape t;
  auto bad = std::make_shared<std::vector<std::int64_t>>(
      std::vector<std::int64_t>{0, 6});
  CHECK_THROWS_AS(gather(t.leaf(x), bad, {2}), dgf::ContractViolation);
}

TEST_CASE("concat gradients on both axes") {
  dgf::Rng rng(35);
  auto a = rand_t(rng, {2, 3});
  auto b = rand_t(rng, {4, 3});
  auto c = rand_t(rng, {2, 5});
  {
    CHECK(fd_max_rel_err(
              [&](Tape& tp, const std::vector<Var>& vs) {
                return weigh(tp, concat({vs[0], vs[1]}, 0), 109);
              },
              {a, b}) < kOpTol);
  }
  {
    CHECK(fd_max_rel_err(
              [&](Tape& tp, const std::vector<Var>& vs) {
                return weigh(tp, concat({vs[0], vs[1]}, 1), 110);
              },
              {a, c}) < kOpTol);
  }
}

TEST_CASE("softmax rows sum to one and gradients check out") {
  dgf::Rng rng(38);
  auto x = rand_t(rng, {3, 4});
  Tape t;
  Var s = softmax(t.leaf(x), 1);
  for (int i = 0; i < 3; ++i) {
    double z = 0.0;
    for (int j = 0; j < 4; ++j) z += s.data()[i * 4 + j];
    CHECK(z == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (int axis : {0, 1}) {
    CHECK(fd_max_rel_err(
              [&, axis](Tape& tp, const std::vector<Var>& vs) {
                return weigh(tp, softmax(vs[0], axis), 111);
              },
              {x}) < kOpTol);
  }
}

TEST_CASE("reduction gradients") {
  dgf::Rng rng(40);
  auto x = rand_t(rng, {4, 5});
  auto chk = [&](auto op) {
    return fd_max_rel_err(
        [&, op](Tape& tp, const std::vector<Var>& vs) {
          return weigh(tp, op(vs[0]), 112);
        },
        {x});
  };
  CHECK(chk([](Var v) { return reduce_sum(v); }) < kOpTol);
  CHECK(chk([](Var v) { return reduce_mean(v); }) < kOpTol);
  CHECK(chk([](Var v) { return reduce_max(v); }) < kOpTol);
  CHECK(chk([](Var v) { return reduce_sum(v, 0); }) < kOpTol);
  CHECK(chk([](Var v) { return reduce_sum(v, 1); }) < kOpTol);
  CHECK(chk([](Var v) { return reduce_mean(v, 0); }) < kOpTol);
  CHECK(chk([](Var v) { return reduce_max(v, 1); }) < kOpTol);
}

TEST_CASE("reduce_max ties resolve to the first maximizer") {
  Tape t;
  Var x = t.leaf({4}, {1.0, 3.0, 3.0, 2.0}, true);
  Var m = reduce_max(x);
  CHECK(m.item() == 3.0);
  t.backward(m);
  CHECK(t.grad(x.id) == std::vector<double>{0, 1, 0, 0});
}

TEST_CASE("bcast gradients for every kind and axis") {
  dgf::Rng rng(42);
  auto x = rand_t(rng, {3, 4});
  auto v0 = rand_t(rng, {3}, 0.5, 2.0);
  auto v1 = rand_t(rng, {4}, 0.5, 2.0);
  for (auto kind : {BcastKind::add, BcastKind::sub, BcastKind::mul,
                    BcastKind::div}) {
    for (int axis : {0, 1}) {
      CHECK(fd_max_rel_err(
                [&, kind, axis](Tape& tp, const std::vector<Var>& vs) {
                  return weigh(tp, bcast(kind, vs[0], vs[1], axis), 113);
                },
                {x, axis == 0 ? v0 : v1}) < kOpTol);
    }
  }
}

TEST_CASE("bilinear upsample preserves constants and passes FD") {
  Tape t;
  Var c = t.leaf(Tensor::full({2, 3, 4}, 1.25));
  Var u = upsample2x_bilinear(c);
  CHECK(u.shape() == Shape{2, 6, 8});
  for (double v : u.data()) CHECK(v == 1.25);

  dgf::Rng rng(44);
  CHECK(fd_max_rel_err(
            [&](Tape& tp, const std::vector<Var>& vs) {
              return weigh(tp, upsample2x_bilinear(vs[0]), 114);
            },
            {rand_t(rng, {2, 3, 4})}) < kOpTol);
}

TEST_CASE("space_to_depth2 is a pure permutation") {
  Tape t;
  Var x = t.leaf({1, 2, 2}, {1, 2, 3, 4}, true);
  Var y = space_to_depth2(x);
  CHECK(y.shape() == Shape{4, 1, 1});
  CHECK(y.data() == std::vector<double>{1, 2, 3, 4});
  t.backward(reduce_sum(y));
  CHECK(t.grad(x.id) == std::vector<double>(4, 1.0));
}

TEST_CASE("reshape and detach") {
  dgf::Rng rng(46);
  CHECK(fd_max_rel_err(
            [&](Tape& tp, const std::vector<Var>& vs) {
              return weigh(tp, reshape(vs[0], {6, 2}), 115);
            },
            {rand_t(rng, {3, 4})}) < kOpTol);

  Tape t;
  Var x = t.leaf({2}, {1.0, 2.0}, true);
  Var d = detach(x);
  CHECK_FALSE(d.t().requires_grad);
  Var loss = reduce_sum(mul(x, d));
  t.backward(loss);
  // d carries the values but no gradient path
  CHECK(t.grad(x.id) == std::vector<double>{1.0, 2.0});
}

TEST_CASE("backward accumulates additively across calls") {
  Tape t;
  Var x = t.leaf({3}, {1.0, -2.0, 0.5}, true);
  Var loss = reduce_sum(x);
  t.backward(loss);
  const std::vector<double> g1 = t.grad(x.id);
  t.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) CHECK(t.grad(x.id)[i] == 2.0 * g1[i]);
}

TEST_CASE("identical graphs produce bit-identical gradients") {
  auto grads = [] {
    dgf::Rng rng(48);
    Tape t;
    Tensor ta = rand_t(rng, {8, 8}, -1, 1);
    Tensor tb = rand_t(rng, {8, 8}, -1, 1);
    ta.requires_grad = true;
    tb.requires_grad = true;
    Var a = t.leaf(ta), b = t.leaf(tb);
    Var loss = reduce_sum(mul(softmax(matmul(a, b), 1), vexp(muls(a, 0.1))));
    t.backward(loss);
    auto g = t.grad(a.id);
    auto g2 = t.grad(b.id);
    g.insert(g.end(), g2.begin(), g2.end());
    return g;
  };
  const auto g1 = grads();
  const auto g2 = grads();
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("domain and contract errors") {
  Tape t;
  Var a = t.leaf({2}, {1.0, 2.0});
  Var z = t.leaf({2}, {1.0, 0.0});
  CHECK_THROWS_AS(div(a, z), dgf::DomainError);
  CHECK_THROWS_AS(vlog(t.leaf({1}, {-1.0})), dgf::DomainError);
  CHECK_THROWS_AS(vsqrt(t.leaf({1}, {-1.0})), dgf::DomainError);
  CHECK_THROWS_AS(add(a, t.leaf({3}, {1, 2, 3})), dgf::ContractViolation);

  // non-finite outputs must throw, never propagate
  Var big = t.leaf({1}, {1e308});
  CHECK_THROWS_AS(mul(big, big), dgf::DomainError);
  Var nan_leaf = t.leaf({1}, {std::nan("")});
  CHECK_THROWS_AS(adds(nan_leaf, 1.0), dgf::DomainError);

  // backward needs a scalar root with a grad path
  Var rg = t.leaf({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(t.backward(add(rg, rg)), dgf::ContractViolation);
  Var konst = t.leaf({1}, {3.0});
  CHECK_THROWS_AS(t.backward(konst), dgf::ContractViolation);
}

TEST_CASE("gradient of unused leaf stays absent") {
  Tape t;
  Var used = t.leaf({1}, {2.0}, true);
  Var unused = t.leaf({1}, {5.0}, true);
  t.backward(muls(used, 3.0));
  CHECK(t.has_grad(used.id));
  CHECK_FALSE(t.has_grad(unused.id));
  CHECK_THROWS_AS(t.grad(unused.id), dgf::ContractViolation);
}

TEST_SUITE_END();
