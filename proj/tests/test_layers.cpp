#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "surfpool/layers.hpp"
#include "surfpool/spectral.hpp"

using namespace surfpool;
using ad::Tape;
using ad::Tensor;
using ad::Value;

namespace {

CoordNormalizer fit_norm(const Eigen::MatrixXd& edge_u) {
  CoordNormalizer n;
  n.lo = edge_u.colwise().minCoeff();
  n.hi = edge_u.colwise().maxCoeff();
  return n;
}

struct ConvFixture {
  std::shared_ptr<ConvGeometry> geom;
  Eigen::MatrixXd coords;
  std::vector<std::vector<int>> neighbors;
  CoordNormalizer norm;
};

ConvFixture ring_fixture(int n, int k, std::mt19937_64& rng) {
  ConvFixture f;
  f.coords = oracles::random_matrix(n, 3, rng);
  std::vector<std::pair<double, int>> cand;
  f.neighbors.resize(n);
  for (int i = 0; i < n; ++i) {
    cand.clear();
    for (int j = 0; j < n; ++j)
      if (j != i) cand.emplace_back((f.coords.row(i) - f.coords.row(j)).squaredNorm(), j);
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (int t = 0; t < k; ++t) f.neighbors[i].push_back(cand[t].second);
    f.neighbors[i].push_back(i);
  }
  f.geom = make_conv_geometry(f.neighbors, f.coords);
  f.norm = fit_norm(f.geom->edge_u);
  return f;
}

}  // namespace

TEST_CASE("gaussian kernel values") {
  Eigen::VectorXd u(3), mu(3), lv(3);
  u << 0.3, -0.2, 0.9;
  mu = u;
  lv.setZero();
  CHECK(gaussian_kernel(u, mu, lv) == 1.0);

  mu << -0.7, -0.2, 0.9;  // u - mu = (1, 0, 0), var = 1
  CHECK(gaussian_kernel(u, mu, lv) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd ru = oracles::random_matrix(3, 1, rng);
    Eigen::VectorXd rmu = oracles::random_matrix(3, 1, rng);
    Eigen::VectorXd rlv = oracles::random_matrix(3, 1, rng);
    const double phi = gaussian_kernel(ru, rmu, rlv);
    CHECK(phi > 0.0);
    CHECK(phi <= 1.0);
  }
}

TEST_CASE("gaussian kernel parameter gradients match finite differences") {
  // z reduces to phi(u; mu, log_var) for a single self edge with unit weight.
  // Offsets |t - mu| are kept in [0.1, 1.2] per dimension so every kernel
  // parameter carries a generic, non-vanishing gradient.
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> mag(0.1, 1.2);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    auto geom = std::make_shared<ConvGeometry>();
    geom->n_nodes = 1;
    geom->offsets = {0, 1};
    geom->nbr = {0};
    geom->edge_u = oracles::random_matrix(1, 3, rng, 0.5);
    KernelSpec spec;
    spec.type = KernelSpec::Type::gaussian;
    spec.gaussian_kernels = 1;
    CoordNormalizer norm = CoordNormalizer::identity(3);

    Tensor mut({1, 3});
    for (int c = 0; c < 3; ++c)
      mut.data[c] = geom->edge_u(0, c) + (coin(rng) ? 1.0 : -1.0) * mag(rng);
    Tape tape;
    Tensor one({1, 1});
    one.data[0] = 1.0;
    Tensor wt({1, 1, 1});
    wt.data[0] = 1.0;
    Value y = tape.input(one, false);
    Value w = tape.input(wt, false);
    Value b = tape.input(Tensor({1, 1}), false);
    Value mu = tape.input(mut, true);
    Value lv = tape.input(oracles::random_tensor({1, 3}, rng, 0.3), true);
    GeometricConvInputs in{y, w, b, &mu, &lv, nullptr};
    Value z = geometric_conv(tape, in, geom, spec, norm);  // z == phi
    Value out = ad::reduce_sum(z);
    auto report = ad::grad_check(tape, out, {{"mu", mu}, {"lv", lv}}, 1e-5);
    CHECK(report.max_rel_err <= 1e-7);
  }
}

TEST_CASE("bspline basis at a grid corner is an exact impulse") {
  Eigen::VectorXd u(3);
  u << 0.0, 0.0, 0.0;
  auto eval = bspline_kernel(u, 2);
  REQUIRE(eval.index.size() == 8);
  double total = 0.0;
  int ones = 0, zeros = 0;
  for (double w : eval.weight) {
    total += w;
    if (w == 1.0) ++ones;
    if (w == 0.0) ++zeros;
  }
  CHECK(ones == 1);
  CHECK(zeros == 7);
  CHECK(total == 1.0);
  // The active kernel is the corner control (flat index 0).
  for (std::size_t p = 0; p < eval.weight.size(); ++p)
    if (eval.weight[p] == 1.0) CHECK(eval.index[p] == 0);
}

TEST_CASE("bspline partition of unity") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uu(-0.5, 1.5);  // includes out-of-domain points
  for (int grid : {2, 3, 5}) {
    for (int trial = 0; trial < 200; ++trial) {
      Eigen::VectorXd u(3);
      for (int c = 0; c < 3; ++c) u[c] = uu(rng);
      auto eval = bspline_kernel(u, grid);
      double total = 0.0;
      for (double w : eval.weight) {
        total += w;
        CHECK(w >= 0.0);
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("bspline 1d slice equals textbook hat functions") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> uu(0.0, 1.0);
  const int grid = 10;
  for (int trial = 0; trial < 10; ++trial) {
    const double t = uu(rng);
    Eigen::VectorXd u(1);
    u << t;
    auto eval = bspline_kernel(u, grid);
    std::vector<double> dense(grid, 0.0);
    for (std::size_t p = 0; p < eval.index.size(); ++p) dense[eval.index[p]] += eval.weight[p];
    for (int c = 0; c < grid; ++c)
      CHECK(dense[c] == doctest::Approx(oracles::hat_basis(t, c, grid)).epsilon(1e-12));
  }
}

TEST_CASE("bspline saturation counter") {
  Eigen::VectorXd u(3);
  u << 2.0, 0.5, -1.0;
  auto eval = bspline_kernel(u, 5);
  CHECK(eval.saturated == 2);
}

TEST_CASE("conv with a single self edge and gaussian peak reduces to a dense layer") {
  std::mt19937_64 rng(9);
  auto geom = std::make_shared<ConvGeometry>();
  geom->n_nodes = 1;
  geom->offsets = {0, 1};
  geom->nbr = {0};
  geom->edge_u = Eigen::MatrixXd::Zero(1, 3);  // u_ii = 0
  KernelSpec spec;
  spec.type = KernelSpec::Type::gaussian;
  spec.gaussian_kernels = 1;
  // Identity normalization maps u=0 to t=0, so set mu = 0 there.
  CoordNormalizer norm;
  norm.lo = Eigen::VectorXd::Constant(3, 0.0);
  norm.hi = Eigen::VectorXd::Constant(3, 1.0);

  Tape tape;
  Tensor yt = oracles::random_tensor({1, 4}, rng);
  Tensor wt = oracles::random_tensor({1, 4, 3}, rng);
  Tensor bt = oracles::random_tensor({1, 3}, rng);
  Value y = tape.input(yt, false);
  Value w = tape.input(wt, false);
  Value b = tape.input(bt, false);
  Value mu = tape.input(Tensor({1, 3}), false);       // zeros -> phi(0) = 1
  Value lv = tape.input(Tensor({1, 3}), false);
  GeometricConvInputs in{y, w, b, &mu, &lv, nullptr};
  Value z = geometric_conv(tape, in, geom, spec, norm);
  for (int p = 0; p < 3; ++p) {
    double expected = bt.data[p];
    for (int q = 0; q < 4; ++q) expected += wt.data[q * 3 + p] * yt.data[q];
    CHECK(z.tensor().data[p] == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("conv with zero weights returns the bias at every node") {
  std::mt19937_64 rng(10);
  auto fix = ring_fixture(8, 3, rng);
  for (auto type : {KernelSpec::Type::bspline, KernelSpec::Type::gaussian}) {
    KernelSpec spec;
    spec.type = type;
    spec.bspline_grid = 3;
    spec.gaussian_kernels = 4;
    Tape tape;
    const int k = spec.kernel_count();
    Value y = tape.input(oracles::random_tensor({8, 2}, rng), false);
    Value w = tape.input(Tensor({static_cast<std::size_t>(k), 2, 3}), false);
    Tensor bt = oracles::random_tensor({1, 3}, rng);
    Value b = tape.input(bt, false);
    Value mu = tape.input(oracles::random_tensor({static_cast<std::size_t>(k), 3}, rng), false);
    Value lv = tape.input(Tensor({static_cast<std::size_t>(k), 3}), false);
    GeometricConvInputs in{y, w, b,
                           type == KernelSpec::Type::gaussian ? &mu : nullptr,
                           type == KernelSpec::Type::gaussian ? &lv : nullptr, nullptr};
    Value z = geometric_conv(tape, in, fix.geom, spec, fix.norm);
    for (int i = 0; i < 8; ++i)
      for (int p = 0; p < 3; ++p) CHECK(z.tensor().at(i, p) == bt.data[p]);
  }
}

TEST_CASE("conv matches the naive triple-loop oracle for both kernels") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> un(8, 20);
    const int n = un(rng);
    auto fix = ring_fixture(n, 3, rng);
    for (auto type : {KernelSpec::Type::bspline, KernelSpec::Type::gaussian}) {
      KernelSpec spec;
      spec.type = type;
      spec.bspline_grid = 4;
      spec.gaussian_kernels = 5;
      const int k = spec.kernel_count();
      Tape tape;
      Tensor yt = oracles::random_tensor({static_cast<std::size_t>(n), 3}, rng);
      Tensor wt = oracles::random_tensor({static_cast<std::size_t>(k), 3, 2}, rng);
      Tensor bt = oracles::random_tensor({1, 2}, rng);
      Tensor mut = oracles::random_tensor({static_cast<std::size_t>(k), 3}, rng, 0.4);
      Tensor lvt = oracles::random_tensor({static_cast<std::size_t>(k), 3}, rng, 0.4);
      Value y = tape.input(yt, false);
      Value w = tape.input(wt, false);
      Value b = tape.input(bt, false);
      Value mu = tape.input(mut, false);
      Value lv = tape.input(lvt, false);
      GeometricConvInputs in{y, w, b,
                             type == KernelSpec::Type::gaussian ? &mu : nullptr,
                             type == KernelSpec::Type::gaussian ? &lv : nullptr, nullptr};
      Value z = geometric_conv(tape, in, fix.geom, spec, fix.norm);

      Eigen::MatrixXd ym(n, 3);
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) ym(i, c) = yt.at(i, c);
      Eigen::MatrixXd expected = oracles::naive_geometric_conv(
          ym, fix.neighbors, fix.coords, wt, bt, spec, fix.norm,
          type == KernelSpec::Type::gaussian ? &mut : nullptr,
          type == KernelSpec::Type::gaussian ? &lvt : nullptr);
      for (int i = 0; i < n; ++i)
        for (int p = 0; p < 2; ++p)
          CHECK(std::abs(z.tensor().at(i, p) - expected(i, p)) < 1e-12);
    }
  }
}

TEST_CASE("bspline conv gradients match finite differences") {
  std::mt19937_64 rng(12);
  auto fix = ring_fixture(8, 3, rng);
  KernelSpec spec;
  spec.type = KernelSpec::Type::bspline;
  spec.bspline_grid = 3;
  Tape tape;
  Value y = tape.input(oracles::random_tensor({8, 2}, rng), true);
  Value w = tape.input(oracles::random_tensor({27, 2, 3}, rng), true);
  Value b = tape.input(oracles::random_tensor({1, 3}, rng), true);
  GeometricConvInputs in{y, w, b, nullptr, nullptr, nullptr};
  Value z = geometric_conv(tape, in, fix.geom, spec, fix.norm);
  Value out = ad::reduce_sum(ad::square(z));
  auto report = ad::grad_check(tape, out, {{"y", y}, {"w", w}, {"b", b}}, 1e-5);
  CHECK(report.max_rel_err <= 1e-5);
}

TEST_CASE("standard grid convolution is a special case (unit impulse kernels)") {
  // 1-D grid of nodes; kernels are near-zero-variance Gaussians placed at the
  // grid offsets, which reproduces the plain convolution exactly.
  std::mt19937_64 rng(13);
  const int n = 12;
  Eigen::MatrixXd coords = Eigen::MatrixXd::Zero(n, 3);
  for (int i = 0; i < n; ++i) coords(i, 0) = i;
  std::vector<std::vector<int>> neighbors(n);
  for (int i = 1; i + 1 < n; ++i) neighbors[i] = {i - 1, i + 1, i};
  neighbors[0] = {1, 0};
  neighbors[n - 1] = {n - 2, n - 1};
  auto geom = make_conv_geometry(neighbors, coords);
  CoordNormalizer norm;
  norm.lo = Eigen::VectorXd::Constant(3, -1.0);
  norm.hi = Eigen::VectorXd::Constant(3, 1.0);
  norm.lo[1] = norm.lo[2] = 0.0;
  norm.hi[1] = norm.hi[2] = 0.0;  // degenerate dims pin t = 0.5

  KernelSpec spec;
  spec.type = KernelSpec::Type::gaussian;
  spec.gaussian_kernels = 3;  // offsets -1, 0, +1 -> t = 0, 0.5, 1
  Tensor mut({3, 3});
  for (int k = 0; k < 3; ++k) {
    mut.at(k, 0) = 0.5 * k;
    mut.at(k, 1) = 0.5;
    mut.at(k, 2) = 0.5;
  }
  Tensor lvt({3, 3});
  for (double& v : lvt.data) v = std::log(1e-6);  // unit impulses

  Tensor yt = oracles::random_tensor({static_cast<std::size_t>(n), 2}, rng);
  Tensor wt = oracles::random_tensor({3, 2, 2}, rng);
  Tensor bt = oracles::random_tensor({1, 2}, rng);

  Tape tape;
  Value y = tape.input(yt, false);
  Value w = tape.input(wt, false);
  Value b = tape.input(bt, false);
  Value mu = tape.input(mut, false);
  Value lv = tape.input(lvt, false);
  GeometricConvInputs in{y, w, b, &mu, &lv, nullptr};
  Value z = geometric_conv(tape, in, geom, spec, norm);

  // Plain 1-D convolution (kernel index k maps to offset k-1).
  for (int i = 1; i + 1 < n; ++i)
    for (int p = 0; p < 2; ++p) {
      double expected = bt.data[p];
      for (int q = 0; q < 2; ++q)
        for (int k = 0; k < 3; ++k) expected += wt.at(static_cast<std::size_t>(k) * 2 + q, p) *
                                                 yt.at(i + k - 1, q);
      CHECK(z.tensor().at(i, p) == doctest::Approx(expected).epsilon(1e-14));
    }
}

TEST_CASE("pool_features identity and single-cluster cases") {
  std::mt19937_64 rng(14);
  Eigen::MatrixXd y = oracles::random_matrix(5, 4, rng);
  ClusterAssignment identity{Eigen::MatrixXd::Identity(5, 5)};
  CHECK((pool_features(identity, y) - y).cwiseAbs().maxCoeff() == 0.0);

  ClusterAssignment ones{Eigen::MatrixXd::Ones(5, 1)};
  Eigen::MatrixXd pooled = pool_features(ones, y);
  // Eq. (6) is a sum, not a mean.
  CHECK((pooled - y.colwise().sum()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pool_features matches the double-loop oracle") {
  std::mt19937_64 rng(15);
  ClusterAssignment s{oracles::random_row_stochastic(7, 3, rng)};
  Eigen::MatrixXd y = oracles::random_matrix(7, 4, rng);
  Eigen::MatrixXd pooled = pool_features(s, y);
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < 4; ++p) {
      double expected = 0.0;
      for (int i = 0; i < 7; ++i) expected += s.s(i, c) * y(i, p);
      CHECK(pooled(c, p) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("pool_adjacency identity, single cluster, and mass conservation") {
  std::mt19937_64 rng(16);
  auto g = oracles::random_connected_graph(10, rng);
  Eigen::MatrixXd a = dense_adjacency(g);

  ClusterAssignment identity{Eigen::MatrixXd::Identity(10, 10)};
  CHECK((pool_adjacency(identity, a) - a).cwiseAbs().maxCoeff() == 0.0);

  ClusterAssignment ones{Eigen::MatrixXd::Ones(10, 1)};
  CHECK(pool_adjacency(ones, a)(0, 0) == doctest::Approx(a.sum()).epsilon(1e-12));

  for (int trial = 0; trial < 10; ++trial) {
    ClusterAssignment s{oracles::random_row_stochastic(10, 4, rng)};
    Eigen::MatrixXd pooled = pool_adjacency(s, a);
    CHECK((pooled - pooled.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(std::abs(pooled.sum() - a.sum()) < 1e-9);
  }
}

TEST_CASE("pooling is permutation invariant") {
  std::mt19937_64 rng(17);
  // Exact equality with one-hot assignments and small-integer features.
  const int n = 9, c = 3, m = 2;
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, c);
  Eigen::MatrixXd y(n, m);
  std::uniform_int_distribution<int> ui(0, 5);
  for (int i = 0; i < n; ++i) {
    s(i, ui(rng) % c) = 1.0;
    for (int j = 0; j < m; ++j) y(i, j) = ui(rng);
  }
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd ps = Eigen::MatrixXd::Zero(n, c);
  Eigen::MatrixXd py(n, m);
  for (int i = 0; i < n; ++i) {
    ps.row(i) = s.row(perm[i]);
    py.row(i) = y.row(perm[i]);
  }
  CHECK((pool_features({ps}, py) - pool_features({s}, y)).cwiseAbs().maxCoeff() == 0.0);

  // Random continuous case to summation tolerance, including adjacency.
  ClusterAssignment rs{oracles::random_row_stochastic(n, c, rng)};
  Eigen::MatrixXd ry = oracles::random_matrix(n, m, rng);
  auto rg = oracles::random_connected_graph(n, rng);
  Eigen::MatrixXd ra = dense_adjacency(rg);
  Eigen::MatrixXd prs(n, c), pry(n, m), pra(n, n);
  for (int i = 0; i < n; ++i) {
    prs.row(i) = rs.s.row(perm[i]);
    pry.row(i) = ry.row(perm[i]);
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) pra(i, j) = ra(perm[i], perm[j]);
  CHECK((pool_features({prs}, pry) - pool_features({rs.s}, ry)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((pool_adjacency({prs}, pra) - pool_adjacency({rs.s}, ra)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pool_coords cases") {
  std::mt19937_64 rng(18);
  const int n = 8;
  Eigen::MatrixXd coords = oracles::random_matrix(n, 3, rng);

  // One-hot: cluster coordinate equals the member mean.
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, 2);
  for (int i = 0; i < n; ++i) onehot(i, i % 2) = 1.0;
  Eigen::MatrixXd pc = pool_coords({onehot}, coords);
  for (int c = 0; c < 2; ++c) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(3);
    int count = 0;
    for (int i = c; i < n; i += 2) {
      mean += coords.row(i);
      ++count;
    }
    mean /= count;
    CHECK((pc.row(c) - mean).cwiseAbs().maxCoeff() < 1e-12);
  }

  // Uniform rows: every cluster at the global mean.
  Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(n, 4, 0.25);
  Eigen::MatrixXd pu = pool_coords({uniform}, coords);
  for (int c = 0; c < 4; ++c)
    CHECK((pu.row(c) - coords.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);

  // Random: weighted-mean oracle.
  ClusterAssignment s{oracles::random_row_stochastic(n, 3, rng)};
  Eigen::MatrixXd pr = pool_coords(s, coords);
  for (int c = 0; c < 3; ++c) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(3);
    double mass = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += s.s(i, c) * coords.row(i);
      mass += s.s(i, c);
    }
    CHECK((pr.row(c) - acc / mass).cwiseAbs().maxCoeff() < 1e-12);
  }

  // Empty cluster yields a zero row and a warning.
  Eigen::MatrixXd with_empty = Eigen::MatrixXd::Zero(n, 2);
  with_empty.col(0).setOnes();
  int warnings = 0;
  Eigen::MatrixXd pe = pool_coords({with_empty}, coords, &warnings);
  CHECK(warnings == 1);
  CHECK(pe.row(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cluster assignment validation") {
  std::mt19937_64 rng(19);
  ClusterAssignment good{oracles::random_row_stochastic(5, 3, rng)};
  CHECK_NOTHROW(good.validate());
  ClusterAssignment bad{Eigen::MatrixXd::Constant(4, 3, 0.5)};
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("softmax produces row-stochastic assignments") {
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    Value z = tape.input(oracles::random_tensor({30, 16}, rng, 3.0), false);
    Value s = ad::row_softmax(z);
    for (std::size_t i = 0; i < 30; ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 16; ++c) sum += s.tensor().at(i, c);
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("laplacian regularization examples") {
  // All rows identical -> zero.
  std::mt19937_64 rng(21);
  auto g = oracles::random_connected_graph(6, rng);
  Eigen::MatrixXd same = Eigen::MatrixXd::Zero(6, 3);
  same.col(1).setOnes();
  CHECK(laplacian_reg_value({same}, g) == 0.0);

  // Two nodes, unit weight, opposite one-hot rows -> 4.
  WeightedGraph pair;
  pair.n = 2;
  pair.edges = {{0, 1, 1.0}};
  pair.degrees = {1.0, 1.0};
  Eigen::MatrixXd s(2, 2);
  s << 1, 0, 0, 1;
  CHECK(laplacian_reg_value({s}, pair) == doctest::Approx(4.0));
}

TEST_CASE("laplacian regularization equals 2 tr(S^T (D - A) S)") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    auto g = oracles::random_connected_graph(10, rng);
    ClusterAssignment s{oracles::random_row_stochastic(10, 4, rng)};
    Eigen::MatrixXd a = dense_adjacency(g);
    Eigen::MatrixXd dmat = a.rowwise().sum().asDiagonal();
    const double trace_form = 2.0 * (s.s.transpose() * (dmat - a) * s.s).trace();
    CHECK(std::abs(laplacian_reg_value(s, g) - trace_form) < 1e-10);
  }
}

TEST_CASE("laplacian regularization op gradients") {
  std::mt19937_64 rng(23);
  auto g = oracles::random_connected_graph(8, rng);
  auto edges = std::make_shared<std::vector<WeightedGraph::Edge>>(g.edges);
  Tape tape;
  Value s_logits = tape.input(oracles::random_tensor({8, 3}, rng), true);
  Value s = ad::row_softmax(s_logits);
  Value reg = laplacian_reg_op(tape, s, edges);
  // Value agrees with the plain form.
  Eigen::MatrixXd sd(8, 3);
  for (int i = 0; i < 8; ++i)
    for (int c = 0; c < 3; ++c) sd(i, c) = s.tensor().at(i, c);
  CHECK(reg.tensor().data[0] == doctest::Approx(laplacian_reg_value({sd}, g)).epsilon(1e-12));
  auto report = ad::grad_check(tape, reg, {{"logits", s_logits}}, 1e-5);
  CHECK(report.max_rel_err <= 1e-6);
}

TEST_CASE("pool_coords and edge_diff ops are differentiable") {
  std::mt19937_64 rng(24);
  Eigen::MatrixXd coords = oracles::random_matrix(10, 3, rng);
  auto pairs = std::make_shared<std::vector<std::pair<int, int>>>();
  for (int c = 0; c < 4; ++c)
    for (int d = 0; d < 4; ++d) pairs->emplace_back(c, d);

  Tape tape;
  Value logits = tape.input(oracles::random_tensor({10, 4}, rng), true);
  Value s = ad::row_softmax(logits);
  Value pc = pool_coords_op(tape, s, coords);
  Value ue = edge_diff_op(tape, pc, pairs);
  Value out = ad::reduce_sum(ad::square(ue));
  auto report = ad::grad_check(tape, out, {{"logits", logits}}, 1e-5);
  CHECK(report.max_rel_err <= 1e-6);

  // Values match the plain pooled coordinates.
  Eigen::MatrixXd sd(10, 4);
  for (int i = 0; i < 10; ++i)
    for (int c = 0; c < 4; ++c) sd(i, c) = s.tensor().at(i, c);
  Eigen::MatrixXd expected = pool_coords({sd}, coords);
  for (int c = 0; c < 4; ++c)
    for (int k = 0; k < 3; ++k)
      CHECK(pc.tensor().at(c, k) == doctest::Approx(expected(c, k)).epsilon(1e-12));
}

TEST_CASE("gaussian conv through tape-valued edge coordinates is differentiable") {
  std::mt19937_64 rng(25);
  Eigen::MatrixXd coords = oracles::random_matrix(9, 3, rng);
  auto pairs = std::make_shared<std::vector<std::pair<int, int>>>();
  auto geom = std::make_shared<ConvGeometry>();
  geom->n_nodes = 3;
  geom->offsets = {0};
  for (int c = 0; c < 3; ++c) {
    for (int d = 0; d < 3; ++d) {
      geom->nbr.push_back(d);
      pairs->emplace_back(c, d);
    }
    geom->offsets.push_back(static_cast<int>(geom->nbr.size()));
  }
  KernelSpec spec;
  spec.type = KernelSpec::Type::gaussian;
  spec.gaussian_kernels = 3;
  CoordNormalizer norm;
  norm.lo = Eigen::VectorXd::Constant(3, -3.0);
  norm.hi = Eigen::VectorXd::Constant(3, 3.0);

  Tape tape;
  Value logits = tape.input(oracles::random_tensor({9, 3}, rng), true);
  Value s = ad::row_softmax(logits);
  Value pc = pool_coords_op(tape, s, coords);
  Value ue = edge_diff_op(tape, pc, pairs);
  Value y = tape.input(oracles::random_tensor({3, 2}, rng), true);
  Value w = tape.input(oracles::random_tensor({3, 2, 2}, rng), true);
  Value b = tape.input(oracles::random_tensor({1, 2}, rng), true);
  Value mu = tape.input(oracles::random_tensor({3, 3}, rng, 0.3), true);
  Value lv = tape.input(oracles::random_tensor({3, 3}, rng, 0.3), true);
  GeometricConvInputs in{y, w, b, &mu, &lv, &ue};
  Value z = geometric_conv(tape, in, geom, spec, norm);
  Value out = ad::reduce_sum(ad::square(z));
  auto report = ad::grad_check(
      tape, out, {{"logits", logits}, {"y", y}, {"w", w}, {"b", b}, {"mu", mu}, {"lv", lv}},
      1e-5);
  CHECK(report.max_rel_err <= 1e-6);
}

TEST_CASE("conv input validation") {
  std::mt19937_64 rng(26);
  auto fix = ring_fixture(6, 2, rng);
  KernelSpec spec;  // bspline grid 5 -> K = 125
  Tape tape;
  Value y = tape.input(Tensor({6, 2}), false);
  Value w_bad = tape.input(Tensor({10, 2, 3}), false);
  Value b = tape.input(Tensor({1, 3}), false);
  GeometricConvInputs in{y, w_bad, b, nullptr, nullptr, nullptr};
  CHECK_THROWS_AS(geometric_conv(tape, in, fix.geom, spec, fix.norm), ShapeError);

  KernelSpec gspec;
  gspec.type = KernelSpec::Type::gaussian;
  gspec.gaussian_kernels = 2;
  Value w = tape.input(Tensor({2, 2, 3}), false);
  GeometricConvInputs gin{y, w, b, nullptr, nullptr, nullptr};  // missing mu/log_var
  CHECK_THROWS_AS(geometric_conv(tape, gin, fix.geom, gspec, fix.norm), ArgumentError);
}
