#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "surfpool/errors.hpp"
#include "surfpool/mesh.hpp"

namespace surfpool {

/// Normalized graph Laplacian L = I - D^{-1/2} A D^{-1/2}.
struct Laplacian {
  int n = 0;
  Eigen::SparseMatrix<double> matrix;  // symmetric, both triangles stored
};

Laplacian build_laplacian(const WeightedGraph& graph);

/// Eigenvalue-normalized spectral node coordinates.
///
/// Before alignment, column c of `coords` is the unit eigenvector of the
/// c-th smallest non-zero eigenvalue scaled by lambda_c^{-1/2}; `transform`
/// is the d x d map applied by alignment (identity while unaligned).
struct SpectralEmbedding {
  Eigen::MatrixXd coords;       // N x d
  Eigen::VectorXd eigenvalues;  // d, ascending, strictly positive
  int d = 0;
  bool aligned = false;
  Eigen::MatrixXd transform;

  int n_nodes() const { return static_cast<int>(coords.rows()); }
};

struct EigsOptions {
  double zero_tol = 1e-8;      // relative to the largest computed eigenvalue
  int dense_threshold = 3000;  // above this an iterative solver is used
  int max_iters = 500;         // iterative path budget
};

/// Smallest d non-zero eigenpairs of the normalized Laplacian, returned as an
/// unaligned embedding. Eigenvector signs follow a fixed convention (largest
/// magnitude entry positive). Residuals are verified to 1e-8 per pair.
SpectralEmbedding smallest_eigenpairs(const Laplacian& lap, int d,
                                      const EigsOptions& opts = {});

/// Node correspondence produced by alignment.
struct Correspondence {
  std::vector<int> pi;      // per-node index into the reference node set
  double residual = 0.0;    // mean squared alignment error
  int iterations = 0;
};

struct AlignOptions {
  int max_iters = 50;
  double tol = 1e-9;        // absolute residual improvement stop
  bool orthogonal = false;  // project R to the nearest orthogonal matrix
};

/// Iterative closest point alignment of `emb` onto `ref`: alternates nearest
/// reference-node correspondence with the least-squares transform, starting
/// from the best of all 2^d sign-flip initializations. The returned embedding
/// carries coords * R and aligned = true.
std::pair<SpectralEmbedding, Correspondence> align_to_reference(
    const SpectralEmbedding& emb, const SpectralEmbedding& ref,
    const AlignOptions& opts = {});

/// For each node, the k nearest distinct nodes by embedding distance
/// (ties broken by smaller index), with the node itself appended last.
std::vector<std::vector<int>> knn_in_embedding(const SpectralEmbedding& emb, int k);

/// u_ij = u_j - u_i in the aligned embedding. Throws StateError if unaligned.
Eigen::VectorXd relative_coords(const SpectralEmbedding& emb, int i, int j);

/// Exact nearest neighbor search over low-dimensional points; brute force
/// below 1000 points, kd-tree above.
class NearestNeighborIndex {
 public:
  explicit NearestNeighborIndex(const Eigen::MatrixXd& points);
  int nearest(const Eigen::RowVectorXd& query) const;

 private:
  struct Node {
    int axis = -1;
    double split = 0.0;
    int point = -1;  // leaf payload
    int left = -1, right = -1;
  };
  int build(std::vector<int>& idx, int lo, int hi, int depth);
  void search(int node, const Eigen::RowVectorXd& q, int& best, double& best_d2) const;

  Eigen::MatrixXd pts_;
  std::vector<Node> nodes_;
  int root_ = -1;
  bool brute_ = true;
};

// Embedding file: one "# {json}" header line (d, eigenvalues, aligned,
// reference id, transform), a column-name row, then N coordinate rows.
void save_embedding(const SpectralEmbedding& emb, const std::filesystem::path& path,
                    const std::string& reference_id = "");
SpectralEmbedding load_embedding(const std::filesystem::path& path,
                                 std::string* reference_id = nullptr);

}  // namespace surfpool
