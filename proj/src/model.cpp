#include "surfpool/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <fstream>
#include <random>

#include <json.hpp>

#include "surfpool/kmeans.hpp"

namespace surfpool {

void ModelConfig::validate() const {
  if (input_channels < 1 || block1_features < 1 || block1_clusters < 1 || block2_features < 1 ||
      block2_clusters < 1 || fc1_width < 1 || n_outputs < 1)
    throw ArgumentError("ModelConfig: all widths must be >= 1");
  if (alpha < 0.0) throw ArgumentError("ModelConfig: alpha must be >= 0");
  if (k_neighbors < 1) throw ArgumentError("ModelConfig: k_neighbors must be >= 1");
  if (kernel.type == KernelSpec::Type::bspline && kernel.bspline_grid < 2)
    throw ArgumentError("ModelConfig: bspline grid must be >= 2");
  if (kernel.dim != embedding_dim)
    throw ArgumentError("ModelConfig: kernel dimension must match embedding dimension");
  if (pooling == Pooling::fixed_parcellation && n_parcels < 1)
    throw ArgumentError("ModelConfig: fixed_parcellation pooling needs n_parcels >= 1");
}

std::string pooling_name(ModelConfig::Pooling p) {
  switch (p) {
    case ModelConfig::Pooling::learnable: return "learnable";
    case ModelConfig::Pooling::global_average: return "global_average";
    case ModelConfig::Pooling::fixed_parcellation: return "fixed_parcellation";
    case ModelConfig::Pooling::spectral_kmeans: return "spectral_kmeans";
  }
  return "learnable";
}

ModelConfig::Pooling pooling_from_name(const std::string& name) {
  if (name == "learnable") return ModelConfig::Pooling::learnable;
  if (name == "global_average") return ModelConfig::Pooling::global_average;
  if (name == "fixed_parcellation") return ModelConfig::Pooling::fixed_parcellation;
  if (name == "spectral_kmeans") return ModelConfig::Pooling::spectral_kmeans;
  throw ArgumentError("unknown pooling mode '" + name + "'");
}

std::string task_name(ModelConfig::Task t) {
  return t == ModelConfig::Task::classify ? "classify" : "regress";
}

ModelConfig::Task task_from_name(const std::string& name) {
  if (name == "classify") return ModelConfig::Task::classify;
  if (name == "regress") return ModelConfig::Task::regress;
  throw ArgumentError("unknown task '" + name + "'");
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["input_channels"] = cfg.input_channels;
  j["block1_features"] = cfg.block1_features;
  j["block1_clusters"] = cfg.block1_clusters;
  j["block2_features"] = cfg.block2_features;
  j["block2_clusters"] = cfg.block2_clusters;
  j["fc1_width"] = cfg.fc1_width;
  j["n_outputs"] = cfg.n_outputs;
  j["k_neighbors"] = cfg.k_neighbors;
  j["embedding_dim"] = cfg.embedding_dim;
  j["alpha"] = cfg.alpha;
  j["leaky_slope"] = cfg.leaky_slope;
  j["kernel"] = cfg.kernel.type == KernelSpec::Type::bspline ? "bspline" : "gaussian";
  j["bspline_grid"] = cfg.kernel.bspline_grid;
  j["gaussian_kernels"] = cfg.kernel.gaussian_kernels;
  j["task"] = task_name(cfg.task);
  j["pooling"] = pooling_name(cfg.pooling);
  j["n_parcels"] = cfg.n_parcels;
  j["kmeans_seed"] = cfg.kmeans_seed;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  ModelConfig cfg;
  cfg.input_channels = j.value("input_channels", cfg.input_channels);
  cfg.block1_features = j.value("block1_features", cfg.block1_features);
  cfg.block1_clusters = j.value("block1_clusters", cfg.block1_clusters);
  cfg.block2_features = j.value("block2_features", cfg.block2_features);
  cfg.block2_clusters = j.value("block2_clusters", cfg.block2_clusters);
  cfg.fc1_width = j.value("fc1_width", cfg.fc1_width);
  cfg.n_outputs = j.value("n_outputs", cfg.n_outputs);
  cfg.k_neighbors = j.value("k_neighbors", cfg.k_neighbors);
  cfg.embedding_dim = j.value("embedding_dim", cfg.embedding_dim);
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.leaky_slope = j.value("leaky_slope", cfg.leaky_slope);
  cfg.kernel.type = j.value("kernel", std::string("bspline")) == "gaussian"
                        ? KernelSpec::Type::gaussian
                        : KernelSpec::Type::bspline;
  cfg.kernel.bspline_grid = j.value("bspline_grid", cfg.kernel.bspline_grid);
  cfg.kernel.gaussian_kernels = j.value("gaussian_kernels", cfg.kernel.gaussian_kernels);
  cfg.kernel.dim = cfg.embedding_dim;
  cfg.task = task_from_name(j.value("task", std::string("classify")));
  cfg.pooling = pooling_from_name(j.value("pooling", std::string("learnable")));
  cfg.n_parcels = j.value("n_parcels", cfg.n_parcels);
  cfg.kmeans_seed = j.value("kmeans_seed", cfg.kmeans_seed);
  return cfg;
}

// --- State initialization ------------------------------------------------------

namespace {

ad::Tensor uniform_tensor(std::vector<std::size_t> shape, double scale, std::mt19937_64& rng) {
  ad::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-scale, scale);
  for (double& v : t.data) v = u(rng);
  return t;
}

void init_conv(ModelState& state, const std::string& prefix, int q, int p,
               const KernelSpec& spec, std::mt19937_64& rng) {
  const int k = spec.kernel_count();
  const double s = 1.0 / std::sqrt(static_cast<double>(q) * k);
  state.params[prefix + ".w"] = uniform_tensor({static_cast<std::size_t>(k),
                                                static_cast<std::size_t>(q),
                                                static_cast<std::size_t>(p)},
                                               s, rng);
  state.params[prefix + ".b"] = ad::Tensor({1, static_cast<std::size_t>(p)});
  if (spec.type == KernelSpec::Type::gaussian) {
    ad::Tensor mu({static_cast<std::size_t>(k), static_cast<std::size_t>(spec.dim)});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : mu.data) v = u(rng);
    state.params[prefix + ".mu"] = std::move(mu);
    ad::Tensor lv({static_cast<std::size_t>(k), static_cast<std::size_t>(spec.dim)});
    for (double& v : lv.data) v = 2.0 * std::log(0.25);
    state.params[prefix + ".log_var"] = std::move(lv);
  }
}

void init_fc(ModelState& state, const std::string& prefix, int in, int out,
             std::mt19937_64& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(in));
  state.params[prefix + ".w"] =
      uniform_tensor({static_cast<std::size_t>(in), static_cast<std::size_t>(out)}, s, rng);
  state.params[prefix + ".b"] = ad::Tensor({1, static_cast<std::size_t>(out)});
}

Eigen::MatrixXd tensor_to_eigen(const ad::Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t.at(i, j);
  return m;
}

}  // namespace

ModelState init_model_state(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelState state;
  std::mt19937_64 rng(seed);
  const int f = cfg.input_channels;
  switch (cfg.pooling) {
    case ModelConfig::Pooling::learnable:
      init_conv(state, "block1.feat", f, cfg.block1_features, cfg.kernel, rng);
      init_conv(state, "block1.clus", f, cfg.block1_clusters, cfg.kernel, rng);
      init_conv(state, "block2.feat", cfg.block1_features, cfg.block2_features, cfg.kernel, rng);
      init_conv(state, "block2.clus", cfg.block1_features, cfg.block2_clusters, cfg.kernel, rng);
      init_fc(state, "fc1", cfg.block2_features, cfg.fc1_width, rng);
      break;
    case ModelConfig::Pooling::global_average:
    case ModelConfig::Pooling::spectral_kmeans:
      init_conv(state, "conv1", f, cfg.block1_features, cfg.kernel, rng);
      init_conv(state, "conv2", cfg.block1_features, cfg.block2_features, cfg.kernel, rng);
      init_fc(state, "fc1", cfg.block2_features, cfg.fc1_width, rng);
      break;
    case ModelConfig::Pooling::fixed_parcellation:
      init_conv(state, "conv1", f, cfg.block1_features, cfg.kernel, rng);
      init_conv(state, "conv2", cfg.block1_features, cfg.block2_features, cfg.kernel, rng);
      init_fc(state, "fc1", cfg.block2_features * cfg.n_parcels, cfg.fc1_width, rng);
      break;
  }
  init_fc(state, "fc2", cfg.fc1_width, cfg.n_outputs, rng);

  // Identity normalizers until fitted.
  set_normalizers(state, CoordNormalizer::identity(cfg.embedding_dim),
                  CoordNormalizer::identity(cfg.embedding_dim));
  return state;
}

void set_normalizers(ModelState& state, const CoordNormalizer& mesh_level,
                     const CoordNormalizer& pooled_level) {
  auto store = [&state](const std::string& name, const Eigen::VectorXd& v) {
    ad::Tensor t({1, static_cast<std::size_t>(v.size())});
    for (int c = 0; c < v.size(); ++c) t.data[c] = v[c];
    state.buffers[name] = std::move(t);
  };
  store("norm1.lo", mesh_level.lo);
  store("norm1.hi", mesh_level.hi);
  store("norm2.lo", pooled_level.lo);
  store("norm2.hi", pooled_level.hi);
}

namespace {

CoordNormalizer load_normalizer(const ModelState& state, const std::string& prefix) {
  CoordNormalizer n;
  const auto& lo = state.buffers.at(prefix + ".lo");
  const auto& hi = state.buffers.at(prefix + ".hi");
  n.lo = Eigen::Map<const Eigen::VectorXd>(lo.data.data(), lo.numel());
  n.hi = Eigen::Map<const Eigen::VectorXd>(hi.data.data(), hi.numel());
  return n;
}

}  // namespace

CoordNormalizer mesh_normalizer(const ModelState& state) { return load_normalizer(state, "norm1"); }
CoordNormalizer pooled_normalizer(const ModelState& state) { return load_normalizer(state, "norm2"); }

// --- Mesh preparation -------------------------------------------------------------

PreparedMesh prepare_mesh(const SurfaceMesh& mesh, const SpectralEmbedding& embedding,
                          const std::vector<std::string>& field_order, const ModelConfig& cfg,
                          std::vector<double> target, std::string id) {
  if (!embedding.aligned) throw StateError("prepare_mesh: embedding is not aligned");
  const int n = mesh.n_vertices();
  if (embedding.n_nodes() != n)
    throw ArgumentError("prepare_mesh: embedding has " + std::to_string(embedding.n_nodes()) +
                        " rows for a mesh with " + std::to_string(n) + " vertices");
  if (n < cfg.k_neighbors + 1)
    throw ArgumentError("prepare_mesh: mesh has " + std::to_string(n) +
                        " vertices, need at least k_neighbors+1 = " +
                        std::to_string(cfg.k_neighbors + 1));
  const int d = embedding.d;
  const int f = d + static_cast<int>(field_order.size());
  if (f != cfg.input_channels)
    throw ArgumentError("prepare_mesh: input channels " + std::to_string(f) +
                        " do not match config (" + std::to_string(cfg.input_channels) + ")");

  PreparedMesh pm;
  pm.id = std::move(id);
  pm.coords = embedding.coords;
  pm.features = ad::Tensor({static_cast<std::size_t>(n), static_cast<std::size_t>(f)});
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) pm.features.at(i, c) = embedding.coords(i, c);
  for (std::size_t col = 0; col < field_order.size(); ++col) {
    const auto* values = mesh.field(field_order[col]);
    if (!values) throw ArgumentError("prepare_mesh: mesh lacks field '" + field_order[col] + "'");
    for (int i = 0; i < n; ++i) pm.features.at(i, d + col) = (*values)[i];
  }
  pm.graph = build_weighted_graph(mesh);
  pm.geometry = make_conv_geometry(knn_in_embedding(embedding, cfg.k_neighbors), embedding.coords);
  pm.reg_edges = std::make_shared<std::vector<WeightedGraph::Edge>>(pm.graph.edges);
  pm.target = std::move(target);
  pm.parcels = mesh.parcels;
  return pm;
}

std::pair<CoordNormalizer, CoordNormalizer> fit_normalizers(
    const std::vector<PreparedMesh>& meshes, const std::vector<int>& train_indices,
    const ModelConfig& cfg) {
  const int dim = cfg.embedding_dim;
  CoordNormalizer mesh_level, pooled_level;
  mesh_level.lo = Eigen::VectorXd::Constant(dim, std::numeric_limits<double>::max());
  mesh_level.hi = Eigen::VectorXd::Constant(dim, std::numeric_limits<double>::lowest());
  Eigen::VectorXd range = Eigen::VectorXd::Zero(dim);
  for (int idx : train_indices) {
    const auto& pm = meshes[idx];
    for (int c = 0; c < dim; ++c) {
      mesh_level.lo[c] = std::min(mesh_level.lo[c], pm.geometry->edge_u.col(c).minCoeff());
      mesh_level.hi[c] = std::max(mesh_level.hi[c], pm.geometry->edge_u.col(c).maxCoeff());
      range[c] = std::max(range[c],
                          pm.coords.col(c).maxCoeff() - pm.coords.col(c).minCoeff());
    }
  }
  pooled_level.lo = -range;
  pooled_level.hi = range;
  const int grid = cfg.kernel.bspline_grid;
  if (cfg.kernel.type == KernelSpec::Type::bspline && grid % 2 == 1) {
    // Pooled relative coordinates concentrate at u = 0 (near-uniform
    // assignments average every cluster to the same point); with an odd grid
    // the symmetric domain would put that exactly on a knot of the
    // piecewise-linear basis. Shift so u = 0 maps to a cell center.
    const double c0 = 0.5 - 0.5 / (grid - 1);
    pooled_level.hi = range * ((1.0 - c0) / c0);
  }
  return {mesh_level, pooled_level};
}

// --- Forward ----------------------------------------------------------------------

namespace {

Eigen::MatrixXd pooled_adjacency_sparse(const Eigen::MatrixXd& s, const WeightedGraph& graph) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(s.rows(), s.cols());
  for (const auto& e : graph.edges) {
    m.row(e.i) += e.w * s.row(e.j);
    m.row(e.j) += e.w * s.row(e.i);
  }
  return s.transpose() * m;
}

}  // namespace

ForwardResult model_forward(ad::Tape& tape, const PreparedMesh& pm, const ModelConfig& cfg,
                            const ModelState& state, bool with_grad) {
  cfg.validate();
  const int n = pm.n();
  ForwardResult res;

  for (const auto& [name, tensor] : state.params)
    res.bound.emplace(name, tape.input(tensor, with_grad));
  ad::Value x = tape.input(pm.features, false);

  const CoordNormalizer norm1 = mesh_normalizer(state);
  const CoordNormalizer norm2 = pooled_normalizer(state);
  const bool gaussian = cfg.kernel.type == KernelSpec::Type::gaussian;

  auto conv = [&](const std::string& prefix, const ad::Value& y,
                  std::shared_ptr<const ConvGeometry> geom, const CoordNormalizer& nrm,
                  const ad::Value* edge_u) {
    GeometricConvInputs in;
    in.y = y;
    in.w = res.bound.at(prefix + ".w");
    in.b = res.bound.at(prefix + ".b");
    if (gaussian) {
      in.mu = &res.bound.at(prefix + ".mu");
      in.log_var = &res.bound.at(prefix + ".log_var");
    }
    in.edge_u = edge_u;
    return geometric_conv(tape, in, std::move(geom), cfg.kernel, nrm, &res.diag.saturated);
  };
  auto fc_stack = [&](const ad::Value& pooled) {
    ad::Value h = ad::leaky_relu(
        ad::add(ad::matmul(pooled, res.bound.at("fc1.w")), res.bound.at("fc1.b")),
        cfg.leaky_slope);
    res.output = ad::add(ad::matmul(h, res.bound.at("fc2.w")), res.bound.at("fc2.b"));
  };

  switch (cfg.pooling) {
    case ModelConfig::Pooling::learnable: {
      ad::Value y1 = ad::leaky_relu(conv("block1.feat", x, pm.geometry, norm1, nullptr),
                                    cfg.leaky_slope);
      res.s1 = ad::row_softmax(conv("block1.clus", x, pm.geometry, norm1, nullptr));
      ad::Value y1p = ad::matmul_tn(res.s1, y1);
      ad::Value pc = pool_coords_op(tape, res.s1, pm.coords, &res.diag.empty_clusters);

      res.s1_dense = tensor_to_eigen(res.s1.tensor());
      const int c1 = cfg.block1_clusters;
      // Pooled-graph neighborhoods: every non-empty cluster plus the node
      // itself; structure frozen for this tape.
      std::vector<char> nonempty(c1, 1);
      for (int c = 0; c < c1; ++c)
        if (res.s1_dense.col(c).sum() < 1e-12) nonempty[c] = 0;
      auto geom2 = std::make_shared<ConvGeometry>();
      auto pairs = std::make_shared<std::vector<std::pair<int, int>>>();
      geom2->n_nodes = c1;
      geom2->offsets.push_back(0);
      for (int c = 0; c < c1; ++c) {
        for (int dd = 0; dd < c1; ++dd)
          if (dd != c && nonempty[dd]) {
            geom2->nbr.push_back(dd);
            pairs->emplace_back(c, dd);
          }
        geom2->nbr.push_back(c);
        pairs->emplace_back(c, c);
        geom2->offsets.push_back(static_cast<int>(geom2->nbr.size()));
      }
      ad::Value ue = edge_diff_op(tape, pc, pairs);

      ad::Value y2 = ad::leaky_relu(conv("block2.feat", y1p, geom2, norm2, &ue),
                                    cfg.leaky_slope);
      res.s2 = ad::row_softmax(conv("block2.clus", y1p, geom2, norm2, &ue));
      ad::Value y2p = ad::matmul_tn(res.s2, y2);
      fc_stack(y2p);

      res.diag.adjacency_mass_in = pm.graph.total_weight();
      res.diag.adjacency_mass_pooled = pooled_adjacency_sparse(res.s1_dense, pm.graph).sum();
      break;
    }
    case ModelConfig::Pooling::global_average: {
      ad::Value y1 = ad::leaky_relu(conv("conv1", x, pm.geometry, norm1, nullptr),
                                    cfg.leaky_slope);
      ad::Value y2 = ad::leaky_relu(conv("conv2", y1, pm.geometry, norm1, nullptr),
                                    cfg.leaky_slope);
      fc_stack(ad::mean_rows(y2));
      res.s1_dense = Eigen::MatrixXd::Ones(n, 1);
      break;
    }
    case ModelConfig::Pooling::fixed_parcellation: {
      if (pm.parcels.empty())
        throw ArgumentError("model_forward: fixed_parcellation pooling needs parcels");
      for (int p : pm.parcels)
        if (p < 0 || p >= cfg.n_parcels)
          throw ArgumentError("model_forward: parcel label out of range");
      ad::Value y1 = ad::leaky_relu(conv("conv1", x, pm.geometry, norm1, nullptr),
                                    cfg.leaky_slope);
      ad::Value y2 = ad::leaky_relu(conv("conv2", y1, pm.geometry, norm1, nullptr),
                                    cfg.leaky_slope);
      ad::Value pooled = ad::segment_mean(y2, pm.parcels, cfg.n_parcels);
      fc_stack(ad::reshape(pooled, {1, static_cast<std::size_t>(cfg.n_parcels) *
                                           static_cast<std::size_t>(cfg.block2_features)}));
      res.s1_dense = Eigen::MatrixXd::Zero(n, cfg.n_parcels);
      for (int i = 0; i < n; ++i) res.s1_dense(i, pm.parcels[i]) = 1.0;
      break;
    }
    case ModelConfig::Pooling::spectral_kmeans: {
      const int c1 = cfg.block1_clusters;
      std::vector<std::vector<double>> pts(n, std::vector<double>(pm.coords.cols()));
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < pm.coords.cols(); ++c) pts[i][c] = pm.coords(i, c);
      auto km = kmeans(pts, c1, cfg.kmeans_seed);
      ad::Value y1 = ad::leaky_relu(conv("conv1", x, pm.geometry, norm1, nullptr),
                                    cfg.leaky_slope);
      ad::Value pooled1 = ad::segment_mean(y1, km.labels, c1);

      // Static pooled graph on hard cluster means (dense connectivity).
      Eigen::MatrixXd ccoords = Eigen::MatrixXd::Zero(c1, pm.coords.cols());
      std::vector<int> counts(c1, 0);
      for (int i = 0; i < n; ++i) {
        ccoords.row(km.labels[i]) += pm.coords.row(i);
        counts[km.labels[i]]++;
      }
      for (int c = 0; c < c1; ++c)
        if (counts[c] > 0) ccoords.row(c) /= counts[c];
      std::vector<std::vector<int>> lists(c1);
      for (int c = 0; c < c1; ++c) {
        for (int dd = 0; dd < c1; ++dd)
          if (dd != c && counts[dd] > 0) lists[c].push_back(dd);
        lists[c].push_back(c);
      }
      auto geom2 = make_conv_geometry(lists, ccoords);
      ad::Value y2 = ad::leaky_relu(conv("conv2", pooled1, geom2, norm2, nullptr),
                                    cfg.leaky_slope);
      fc_stack(ad::mean_rows(y2));  // second-level pooling into one cluster
      res.s1_dense = Eigen::MatrixXd::Zero(n, c1);
      for (int i = 0; i < n; ++i) res.s1_dense(i, km.labels[i]) = 1.0;
      break;
    }
  }
  return res;
}

ad::Value model_loss(ad::Tape& tape, const ForwardResult& fwd, const PreparedMesh& pm,
                     const ModelConfig& cfg) {
  if (pm.target.empty()) throw ArgumentError("model_loss: mesh has no target");
  ad::Value pred_loss;
  if (cfg.task == ModelConfig::Task::classify) {
    const double raw = pm.target[0];
    const int cls = static_cast<int>(raw);
    if (cls < 0 || cls >= cfg.n_outputs || raw != cls)
      throw ArgumentError("model_loss: class index " + std::to_string(raw) +
                          " out of range [0, " + std::to_string(cfg.n_outputs) + ")");
    pred_loss = ad::cross_entropy_with_logits(fwd.output, cls);
  } else {
    if (static_cast<int>(pm.target.size()) != cfg.n_outputs)
      throw ArgumentError("model_loss: target size " + std::to_string(pm.target.size()) +
                          " vs n_outputs " + std::to_string(cfg.n_outputs));
    ad::Tensor t({1, static_cast<std::size_t>(cfg.n_outputs)});
    t.data.assign(pm.target.begin(), pm.target.end());
    ad::Value target = tape.input(std::move(t), false);
    pred_loss = ad::scalar_mul(ad::reduce_sum(ad::square(ad::sub(fwd.output, target))),
                               1.0 / cfg.n_outputs);
  }
  if (cfg.pooling == ModelConfig::Pooling::learnable && cfg.alpha > 0.0) {
    ad::Value reg = laplacian_reg_op(tape, fwd.s1, pm.reg_edges);
    return ad::add(pred_loss, ad::scalar_mul(reg, cfg.alpha));
  }
  return pred_loss;
}

// --- Baseline pooling (standalone) ---------------------------------------------------

Eigen::MatrixXd baseline_global_average(const Eigen::MatrixXd& features) {
  return features.colwise().mean();
}

Eigen::MatrixXd baseline_fixed_parcellation(const Eigen::MatrixXd& features,
                                            const std::vector<int>& parcels, int n_parcels) {
  if (static_cast<int>(parcels.size()) != features.rows())
    throw ShapeError("baseline_fixed_parcellation: parcel length mismatch");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_parcels, features.cols());
  std::vector<int> counts(n_parcels, 0);
  for (int i = 0; i < features.rows(); ++i) {
    if (parcels[i] < 0 || parcels[i] >= n_parcels)
      throw ArgumentError("baseline_fixed_parcellation: parcel label out of range");
    out.row(parcels[i]) += features.row(i);
    counts[parcels[i]]++;
  }
  for (int p = 0; p < n_parcels; ++p)
    if (counts[p] > 0) out.row(p) /= counts[p];
  return out;
}

SpectralKMeansPooling baseline_spectral_kmeans(const Eigen::MatrixXd& embedding_coords,
                                               const Eigen::MatrixXd& features, int clusters,
                                               std::uint64_t seed) {
  if (clusters > embedding_coords.rows())
    throw ArgumentError("baseline_spectral_kmeans: more clusters than nodes");
  std::vector<std::vector<double>> pts(embedding_coords.rows(),
                                       std::vector<double>(embedding_coords.cols()));
  for (int i = 0; i < embedding_coords.rows(); ++i)
    for (int c = 0; c < embedding_coords.cols(); ++c) pts[i][c] = embedding_coords(i, c);
  auto km = kmeans(pts, clusters, seed);
  SpectralKMeansPooling out;
  out.pooled = baseline_fixed_parcellation(features, km.labels, clusters);
  out.labels = std::move(km.labels);
  return out;
}

// --- Full-network gradient verification ---------------------------------------------------

namespace {

double fd_rel_error(ad::Tape& tape, const ad::Value& loss, int value_id, std::size_t entry,
                    double analytic, double h) {
  ad::Tensor& storage = tape.mutable_val(value_id);
  const double saved = storage.data[entry];
  storage.data[entry] = saved + h;
  tape.replay();
  const double f_plus = tape.val(loss.id).data[0];
  storage.data[entry] = saved - h;
  tape.replay();
  const double f_minus = tape.val(loss.id).data[0];
  storage.data[entry] = saved;
  if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
    throw NumericalError("full_network_grad_check: non-finite objective");
  const double fd = (f_plus - f_minus) / (2.0 * h);
  return std::abs(analytic - fd) / std::max(1e-8, std::abs(analytic) + std::abs(fd));
}

}  // namespace

NetGradCheckResult full_network_grad_check(const PreparedMesh& pm, const ModelConfig& cfg,
                                           std::uint64_t seed, double h,
                                           double retry_threshold) {
  ModelState state = init_model_state(cfg, seed);
  std::vector<PreparedMesh> one{pm};
  auto [n1, n2] = fit_normalizers(one, {0}, cfg);
  set_normalizers(state, n1, n2);

  ad::Tape tape;
  auto fwd = model_forward(tape, one[0], cfg, state, true);
  ad::Value loss = model_loss(tape, fwd, one[0], cfg);
  tape.backward(loss);

  NetGradCheckResult res;
  res.loss = loss.tensor().data[0];
  for (const auto& [name, value] : fwd.bound) {
    const ad::Tensor analytic = value.grad();
    for (std::size_t e = 0; e < analytic.numel(); ++e) {
      double rel = fd_rel_error(tape, loss, value.id, e, analytic.data[e], h);
      if (rel > retry_threshold)
        rel = std::min({rel,
                        fd_rel_error(tape, loss, value.id, e, analytic.data[e], h * 4.0),
                        fd_rel_error(tape, loss, value.id, e, analytic.data[e], h * 16.0),
                        fd_rel_error(tape, loss, value.id, e, analytic.data[e], h / 16.0),
                        fd_rel_error(tape, loss, value.id, e, analytic.data[e], h / 64.0)});
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = name;
        res.worst_index = e;
      }
      ++res.n_entries;
    }
  }
  tape.replay();
  return res;
}

// --- Checkpoints ------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'P', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_tensor(std::ofstream& out, const std::string& name, const ad::Tensor& t,
                  std::uint8_t kind) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  out.write(reinterpret_cast<const char*>(&kind), 1);
  write_u32(out, static_cast<std::uint32_t>(t.shape.size()));
  for (std::size_t d : t.shape) write_u64(out, d);
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const ModelConfig& cfg, const ModelState& state,
                     const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_checkpoint: cannot write " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::string cfg_json = model_config_to_json(cfg);
  write_u32(out, static_cast<std::uint32_t>(cfg_json.size()));
  out.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
  write_u32(out, static_cast<std::uint32_t>(state.params.size() + state.buffers.size()));
  for (const auto& [name, t] : state.params) write_tensor(out, name, t, 0);
  for (const auto& [name, t] : state.buffers) write_tensor(out, name, t, 1);
  out.flush();
  if (!out) throw Error("save_checkpoint: write failed for " + path.string());
}

std::pair<ModelConfig, ModelState> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open checkpoint");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ParseError(path.string() + ": not a checkpoint file");
  const std::uint32_t cfg_len = read_u32(in);
  std::string cfg_json(cfg_len, '\0');
  in.read(cfg_json.data(), cfg_len);
  ModelConfig cfg = model_config_from_json(cfg_json);
  ModelState state;
  const std::uint32_t count = read_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint8_t kind = 0;
    in.read(reinterpret_cast<char*>(&kind), 1);
    const std::uint32_t ndim = read_u32(in);
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = static_cast<std::size_t>(read_u64(in));
    ad::Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw ParseError(path.string() + ": truncated checkpoint");
    (kind == 0 ? state.params : state.buffers)[name] = std::move(t);
  }
  return {cfg, state};
}

}  // namespace surfpool
