#pragma once

// Independent reference implementations used to cross-check the library.
// Everything here is deliberately written from the definitions (dense loops,
// brute force, exhaustive enumeration) and shares no code with the
// implementation paths it verifies.

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "surfpool/autodiff.hpp"
#include "surfpool/layers.hpp"
#include "surfpool/mesh.hpp"

namespace oracles {

// Union-find connectivity over an explicit edge list.
bool union_find_connected(int n, const std::vector<std::pair<int, int>>& edges);

// Naive triple-loop geometric convolution:
//   z_ip = sum_{j in N_i} sum_q sum_k w_pqk * y_jq * phi_ij(theta_k) + b_p
// with every kernel evaluated independently from its closed form.
Eigen::MatrixXd naive_geometric_conv(const Eigen::MatrixXd& y,
                                     const std::vector<std::vector<int>>& neighbors,
                                     const Eigen::MatrixXd& coords,
                                     const surfpool::ad::Tensor& w,  // (K, Q, P)
                                     const surfpool::ad::Tensor& b,  // (1, P)
                                     const surfpool::KernelSpec& spec,
                                     const surfpool::CoordNormalizer& norm,
                                     const surfpool::ad::Tensor* mu = nullptr,
                                     const surfpool::ad::Tensor* log_var = nullptr);

// Textbook linear hat function on the [0,1] grid with `grid` control points.
double hat_basis(double t_unit, int control, int grid);

// Mutual information and entropies computed directly from definitions.
double plain_mutual_information(const std::vector<int>& a, const std::vector<int>& b);
double plain_entropy(const std::vector<int>& a);

// Exhaustive AMI for small N: E[MI] averaged over all N! label permutations.
double exhaustive_ami(const std::vector<int>& a, const std::vector<int>& b);

// Scalar reference Adam (one parameter).
struct ScalarAdam {
  double m = 0.0, v = 0.0;
  long t = 0;
  double step(double param, double grad, double lr, double beta1, double beta2, double eps);
};

// Random helpers (seeded, test-local).
Eigen::MatrixXd random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0);
surfpool::ad::Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                                   double scale = 1.0);
Eigen::MatrixXd random_row_stochastic(int rows, int cols, std::mt19937_64& rng);

// Small connected random graph (ring plus random chords) with positive weights.
surfpool::WeightedGraph random_connected_graph(int n, std::mt19937_64& rng);

}  // namespace oracles
