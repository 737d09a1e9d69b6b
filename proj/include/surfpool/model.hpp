#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "surfpool/autodiff.hpp"
#include "surfpool/layers.hpp"
#include "surfpool/mesh.hpp"
#include "surfpool/spectral.hpp"

namespace surfpool {

/// Architecture and task configuration. The default widths follow the
/// two-block layout: block 1 produces an N x 8 feature map and an N x 16
/// assignment, block 2 a 16 x 16 map pooled into a single cluster, then
/// 16 -> 8 -> n_outputs fully connected.
struct ModelConfig {
  enum class Task { classify, regress };
  enum class Pooling { learnable, global_average, fixed_parcellation, spectral_kmeans };

  int input_channels = 5;  // 3 spectral coordinates + thickness + depth
  int block1_features = 8;
  int block1_clusters = 16;
  int block2_features = 16;
  int block2_clusters = 1;
  int fc1_width = 8;
  int n_outputs = 2;
  int k_neighbors = 5;
  int embedding_dim = 3;
  double alpha = 1e-3;  // Laplacian regularization weight
  double leaky_slope = 0.01;
  KernelSpec kernel;
  Task task = Task::classify;
  Pooling pooling = Pooling::learnable;
  int n_parcels = 0;             // fixed_parcellation pooling only
  std::uint64_t kmeans_seed = 17;  // spectral_kmeans pooling determinism

  void validate() const;
};

std::string pooling_name(ModelConfig::Pooling p);
ModelConfig::Pooling pooling_from_name(const std::string& name);
std::string task_name(ModelConfig::Task t);
ModelConfig::Task task_from_name(const std::string& name);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

/// Named parameter tensors plus non-trainable buffers (the two coordinate
/// normalizers). The name set is a function of the config alone.
struct ModelState {
  std::map<std::string, ad::Tensor> params;
  std::map<std::string, ad::Tensor> buffers;
};

/// Seeded initialization: conv/fc weights uniform in [-s, s] with
/// s = (fan_in * K)^{-1/2}, biases zero, Gaussian kernel means uniform in
/// the unit domain and log-variances at log(0.25^2).
ModelState init_model_state(const ModelConfig& cfg, std::uint64_t seed);

void set_normalizers(ModelState& state, const CoordNormalizer& mesh_level,
                     const CoordNormalizer& pooled_level);
CoordNormalizer mesh_normalizer(const ModelState& state);
CoordNormalizer pooled_normalizer(const ModelState& state);

/// One mesh readied for the network: input features (spectral coordinates
/// prepended to the manifest-ordered scalar fields), aligned embedding
/// coordinates, weighted graph and the k-NN convolution geometry.
struct PreparedMesh {
  std::string id;
  ad::Tensor features;     // N x input_channels
  Eigen::MatrixXd coords;  // N x d, aligned
  WeightedGraph graph;
  std::shared_ptr<ConvGeometry> geometry;
  std::shared_ptr<std::vector<WeightedGraph::Edge>> reg_edges;
  std::vector<double> target;
  std::vector<int> parcels;

  int n() const { return static_cast<int>(features.rows()); }
};

PreparedMesh prepare_mesh(const SurfaceMesh& mesh, const SpectralEmbedding& embedding,
                          const std::vector<std::string>& field_order, const ModelConfig& cfg,
                          std::vector<double> target = {}, std::string id = {});

/// Fits the mesh-level normalizer on all training edge coordinates and the
/// pooled-level normalizer on per-dimension coordinate ranges. For odd
/// B-spline grids the pooled domain is shifted so that u = 0 (where pooled
/// relative coordinates concentrate at initialization) falls on a cell
/// center rather than a knot, keeping the network differentiable there.
std::pair<CoordNormalizer, CoordNormalizer> fit_normalizers(
    const std::vector<PreparedMesh>& meshes, const std::vector<int>& train_indices,
    const ModelConfig& cfg);

struct Diagnostics {
  long saturated = 0;
  int empty_clusters = 0;
  double adjacency_mass_in = 0.0;
  double adjacency_mass_pooled = 0.0;
};

struct ForwardResult {
  ad::Value output;          // 1 x n_outputs
  ad::Value s1;              // tape assignment (learnable pooling only)
  ad::Value s2;
  Eigen::MatrixXd s1_dense;  // first-level assignment actually applied
  Diagnostics diag;
  std::map<std::string, ad::Value> bound;  // parameter tape bindings
};

ForwardResult model_forward(ad::Tape& tape, const PreparedMesh& pm, const ModelConfig& cfg,
                            const ModelState& state, bool with_grad);

/// Prediction loss plus alpha * Laplacian regularization of the first-block
/// assignment (learnable pooling only): cross-entropy for classification,
/// mean squared error for regression.
ad::Value model_loss(ad::Tape& tape, const ForwardResult& fwd, const PreparedMesh& pm,
                     const ModelConfig& cfg);

// --- Baseline pooling operations (standalone forms) -------------------------

/// Column means (replaces both pooling steps).
Eigen::MatrixXd baseline_global_average(const Eigen::MatrixXd& features);

/// Per-parcel feature means; parcels must cover [0, P).
Eigen::MatrixXd baseline_fixed_parcellation(const Eigen::MatrixXd& features,
                                            const std::vector<int>& parcels, int n_parcels);

struct SpectralKMeansPooling {
  Eigen::MatrixXd pooled;  // C x M cluster feature means
  std::vector<int> labels;
};

/// Seeded k-means on embedding coordinates; hard assignments pooled as means.
SpectralKMeansPooling baseline_spectral_kmeans(const Eigen::MatrixXd& embedding_coords,
                                               const Eigen::MatrixXd& features, int clusters,
                                               std::uint64_t seed);

// --- Full-network gradient verification ----------------------------------------

struct NetGradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t n_entries = 0;
  double loss = 0.0;
};

/// Finite-difference check of the whole forward+loss gradient at a seeded
/// random initialization. Entries whose primary-step agreement exceeds
/// retry_threshold are re-checked at a smaller and a larger step and keep
/// their best agreement: the piecewise-linear activations make single-step
/// central differences falsely fail when the step crosses a kink, while
/// near-inactive kernel weights fail small steps on round-off alone. A wrong
/// analytic gradient disagrees at every step size.
NetGradCheckResult full_network_grad_check(const PreparedMesh& pm, const ModelConfig& cfg,
                                           std::uint64_t seed, double h = 3e-4,
                                           double retry_threshold = 5e-5);

// --- Checkpoints -------------------------------------------------------------

/// Binary named-tensor container with a JSON config header; round-trips are
/// bit-exact.
void save_checkpoint(const ModelConfig& cfg, const ModelState& state,
                     const std::filesystem::path& path);
std::pair<ModelConfig, ModelState> load_checkpoint(const std::filesystem::path& path);

}  // namespace surfpool
