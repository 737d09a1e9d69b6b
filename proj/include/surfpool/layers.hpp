#pragma once

#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "surfpool/autodiff.hpp"
#include "surfpool/mesh.hpp"

namespace surfpool {

/// Convolution kernel family. B-spline kernels are open-uniform of degree 1
/// on a per-dimension grid over [0,1]^d; their kernel count is grid^dim and
/// the learnable parameters are the control weights themselves. Gaussian
/// kernels carry learnable means and diagonal log-variances.
struct KernelSpec {
  enum class Type { bspline, gaussian };
  Type type = Type::bspline;
  int bspline_grid = 5;
  int gaussian_kernels = 6;
  int dim = 3;

  int kernel_count() const {
    if (type == Type::bspline) {
      int k = 1;
      for (int c = 0; c < dim; ++c) k *= bspline_grid;
      return k;
    }
    return gaussian_kernels;
  }
};

/// Per-dimension affine map of relative spectral coordinates onto the kernel
/// domain [0,1]; fitted on the training split.
struct CoordNormalizer {
  Eigen::VectorXd lo, hi;

  int dim() const { return static_cast<int>(lo.size()); }
  double inv_range(int c) const { return hi[c] > lo[c] ? 1.0 / (hi[c] - lo[c]) : 0.0; }
  double unit(double u, int c) const {
    const double ir = inv_range(c);
    return ir == 0.0 ? 0.5 : (u - lo[c]) * ir;
  }
  static CoordNormalizer identity(int dim);
};

/// Neighborhood structure for one convolution: CSR neighbor lists plus the
/// raw relative coordinate of every (node, neighbor) edge.
struct ConvGeometry {
  int n_nodes = 0;
  std::vector<int> offsets;  // n_nodes + 1
  std::vector<int> nbr;      // edge count entries
  Eigen::MatrixXd edge_u;    // edges x dim; ignored when the conv gets tape-valued coords

  int n_edges() const { return static_cast<int>(nbr.size()); }
};

/// Builds geometry from neighbor lists (self included) and node coordinates;
/// edge coordinates are u_ij = coords[j] - coords[i].
std::shared_ptr<ConvGeometry> make_conv_geometry(
    const std::vector<std::vector<int>>& neighbor_lists, const Eigen::MatrixXd& coords);

// --- Kernel functions --------------------------------------------------------

/// phi(u) = exp(-1/2 sum_c (u_c - mu_c)^2 / exp(log_var_c)), in (0, 1].
double gaussian_kernel(const Eigen::VectorXd& u, const Eigen::VectorXd& mu,
                       const Eigen::VectorXd& log_var);

struct BSplineEval {
  std::vector<int> index;     // 2^d flat kernel indices
  std::vector<double> weight; // matching basis products, summing to 1
  int saturated = 0;          // clamped coordinate count
};

/// Degree-1 open-uniform B-spline basis at a point of [0,1]^d (coordinates
/// outside are clamped). Exactly 2^d basis products are returned; they sum
/// to 1.
BSplineEval bspline_kernel(const Eigen::VectorXd& u_unit, int grid);

// --- Geometric convolution ----------------------------------------------------

/// Inputs of one geometric convolution. `w` has shape (K, Q, P): kernel x
/// in-channel x out-channel; `b` is 1 x P. Gaussian kernels additionally take
/// `mu` and `log_var` (K x d). When `edge_u` is set the edge pseudo-coordinates
/// are tape values (pooled-graph convolutions) and receive gradients;
/// otherwise the geometry's constant edge_u is used.
struct GeometricConvInputs {
  ad::Value y;
  ad::Value w;
  ad::Value b;
  const ad::Value* mu = nullptr;
  const ad::Value* log_var = nullptr;
  const ad::Value* edge_u = nullptr;
};

/// z_ip = sum_{j in N_i} sum_q sum_k w_pqk y_jq phi_ij(theta_k) + b_p,
/// differentiable in y, w, b, the Gaussian kernel parameters and (when
/// tape-valued) the edge coordinates.
ad::Value geometric_conv(ad::Tape& tape, const GeometricConvInputs& in,
                         std::shared_ptr<const ConvGeometry> geom, const KernelSpec& spec,
                         const CoordNormalizer& norm, long* saturation_counter = nullptr);

// --- Pooling -------------------------------------------------------------------

/// Row-stochastic soft cluster assignment (N x C).
struct ClusterAssignment {
  Eigen::MatrixXd s;

  int n() const { return static_cast<int>(s.rows()); }
  int clusters() const { return static_cast<int>(s.cols()); }
  void validate() const;  // rows sum to 1 within 1e-12, entries in [0,1]
};

Eigen::MatrixXd dense_adjacency(const WeightedGraph& graph);

/// Y_pool = S^T Y (expected per-cluster feature sums).
Eigen::MatrixXd pool_features(const ClusterAssignment& s, const Eigen::MatrixXd& y);

/// A_pool = S^T A S (expected connections between clusters).
Eigen::MatrixXd pool_adjacency(const ClusterAssignment& s, const Eigen::MatrixXd& a);

/// Mass-weighted mean coordinates per cluster; clusters with mass below
/// 1e-12 yield a zero row and bump *empty_warnings.
Eigen::MatrixXd pool_coords(const ClusterAssignment& s, const Eigen::MatrixXd& coords,
                            int* empty_warnings = nullptr);

/// sum_i sum_j a_ij ||s_i - s_j||^2 over the double-counted edge set;
/// equals 2 tr(S^T (D - A) S).
double laplacian_reg_value(const ClusterAssignment& s, const WeightedGraph& graph);

// Tape-op counterparts used inside the network.
ad::Value pool_coords_op(ad::Tape& tape, const ad::Value& s, const Eigen::MatrixXd& coords,
                         int* empty_warnings = nullptr);
ad::Value edge_diff_op(ad::Tape& tape, const ad::Value& coords,
                       std::shared_ptr<const std::vector<std::pair<int, int>>> edges);
ad::Value laplacian_reg_op(ad::Tape& tape, const ad::Value& s,
                           std::shared_ptr<const std::vector<WeightedGraph::Edge>> edges);

}  // namespace surfpool
