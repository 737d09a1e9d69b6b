#include "surfpool/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <json.hpp>

namespace surfpool {

Laplacian build_laplacian(const WeightedGraph& graph) {
  for (int v = 0; v < graph.n; ++v)
    if (!(graph.degrees[v] > 0.0))
      throw DegreeError("build_laplacian: node " + std::to_string(v) + " has zero degree");

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(graph.edges.size() * 2 + graph.n);
  for (int v = 0; v < graph.n; ++v) trips.emplace_back(v, v, 1.0);
  for (const auto& e : graph.edges) {
    const double off = -e.w / std::sqrt(graph.degrees[e.i] * graph.degrees[e.j]);
    trips.emplace_back(e.i, e.j, off);
    trips.emplace_back(e.j, e.i, off);
  }
  Laplacian lap;
  lap.n = graph.n;
  lap.matrix.resize(graph.n, graph.n);
  lap.matrix.setFromTriplets(trips.begin(), trips.end());
  return lap;
}

namespace {

// Fixed sign convention: the largest-magnitude entry (first such index on
// ties) is made positive.
void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
  int arg = 0;
  double best = -1.0;
  for (int i = 0; i < v.size(); ++i) {
    const double m = std::abs(v[i]);
    if (m > best) {
      best = m;
      arg = i;
    }
  }
  if (v[arg] < 0.0) v = -v;
}

struct EigPairs {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // orthonormal columns
};

EigPairs dense_smallest(const Laplacian& lap, int want) {
  Eigen::MatrixXd dense = Eigen::MatrixXd(lap.matrix);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dense);
  if (solver.info() != Eigen::Success)
    throw ConvergenceError("smallest_eigenpairs: dense eigensolver failed");
  EigPairs out;
  out.values = solver.eigenvalues().head(want);
  out.vectors = solver.eigenvectors().leftCols(want);
  return out;
}

// Blocked inverse (subspace) iteration with a fixed negative shift; the
// shifted Laplacian is positive definite, so one sparse factorization serves
// every iterate. Used above the dense threshold.
EigPairs iterative_smallest(const Laplacian& lap, int want, int max_iters) {
  const int n = lap.n;
  const int block = std::min(n, want + 4);
  const double shift = 0.1;
  Eigen::SparseMatrix<double> shifted = lap.matrix;
  for (int v = 0; v < n; ++v) shifted.coeffRef(v, v) += shift;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(shifted);
  if (solver.info() != Eigen::Success)
    throw ConvergenceError("smallest_eigenpairs: factorization failed");

  // Deterministic seeded start.
  Eigen::MatrixXd x(n, block);
  std::uint64_t s = 0x5eed5eedULL;
  for (int c = 0; c < block; ++c)
    for (int r = 0; r < n; ++r) {
      s = s * 6364136223846793005ULL + 1442695040888963407ULL;
      x(r, c) = static_cast<double>(s >> 11) / 9007199254740992.0 - 0.5;
    }

  Eigen::MatrixXd ritz_vectors;
  Eigen::VectorXd ritz_values;
  double worst_residual = std::numeric_limits<double>::max();
  int iter = 0;
  for (; iter < max_iters; ++iter) {
    x = solver.solve(x);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(x);
    x = qr.householderQ() * Eigen::MatrixXd::Identity(n, block);
    // Rayleigh-Ritz on the subspace.
    Eigen::MatrixXd lx = lap.matrix * x;
    Eigen::MatrixXd small = x.transpose() * lx;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(small);
    ritz_values = es.eigenvalues();
    ritz_vectors = x * es.eigenvectors();
    worst_residual = 0.0;
    for (int c = 0; c < want; ++c) {
      const double r =
          (lap.matrix * ritz_vectors.col(c) - ritz_values[c] * ritz_vectors.col(c)).norm();
      worst_residual = std::max(worst_residual, r);
    }
    if (worst_residual <= 1e-10) break;
    x = ritz_vectors;
  }
  if (worst_residual > 1e-9)
    throw ConvergenceError("smallest_eigenpairs: iterative solver did not converge after " +
                           std::to_string(iter) + " iterations (residual " +
                           std::to_string(worst_residual) + ")");
  EigPairs out;
  out.values = ritz_values.head(want);
  out.vectors = ritz_vectors.leftCols(want);
  return out;
}

}  // namespace

SpectralEmbedding smallest_eigenpairs(const Laplacian& lap, int d, const EigsOptions& opts) {
  if (d < 1) throw ArgumentError("smallest_eigenpairs: d must be >= 1");
  if (lap.n < d + 1)
    throw ArgumentError("smallest_eigenpairs: graph too small for d=" + std::to_string(d));

  const int want = std::min(lap.n, d + 2);
  EigPairs pairs = lap.n <= opts.dense_threshold ? dense_smallest(lap, want)
                                                 : iterative_smallest(lap, want, opts.max_iters);

  const double scale = std::max(pairs.values.cwiseAbs().maxCoeff(), 1e-300);
  const double zero_thresh = opts.zero_tol * scale;
  int zero_modes = 0;
  for (int c = 0; c < pairs.values.size(); ++c)
    if (pairs.values[c] <= zero_thresh) ++zero_modes;
  if (zero_modes > 1)
    throw DisconnectedError("smallest_eigenpairs: " + std::to_string(zero_modes) +
                            " eigenvalues below zero tolerance; graph is disconnected");
  if (zero_modes + d > pairs.values.size()) {
    // Need more pairs than the default margin; recompute with a wider window.
    EigsOptions wider = opts;
    const int need = zero_modes + d;
    if (need > lap.n) throw ArgumentError("smallest_eigenpairs: graph too small");
    pairs = lap.n <= opts.dense_threshold ? dense_smallest(lap, need)
                                          : iterative_smallest(lap, need, wider.max_iters);
  }

  SpectralEmbedding emb;
  emb.d = d;
  emb.eigenvalues.resize(d);
  emb.coords.resize(lap.n, d);
  emb.aligned = false;
  emb.transform = Eigen::MatrixXd::Identity(d, d);
  for (int c = 0; c < d; ++c) {
    const int src = zero_modes + c;
    Eigen::VectorXd vec = pairs.vectors.col(src);
    const double lambda = pairs.values[src];
    const double res = (lap.matrix * vec - lambda * vec).norm();
    if (res > 1e-8 * vec.norm())
      throw ConvergenceError("smallest_eigenpairs: eigenresidual " + std::to_string(res) +
                             " above tolerance for pair " + std::to_string(c));
    fix_sign(vec);
    emb.eigenvalues[c] = lambda;
    emb.coords.col(c) = vec / std::sqrt(lambda);
  }
  return emb;
}

// --- Nearest neighbor index -------------------------------------------------

NearestNeighborIndex::NearestNeighborIndex(const Eigen::MatrixXd& points) : pts_(points) {
  brute_ = pts_.rows() < 1000;
  if (!brute_) {
    std::vector<int> idx(pts_.rows());
    std::iota(idx.begin(), idx.end(), 0);
    nodes_.reserve(2 * idx.size());
    root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
  }
}

int NearestNeighborIndex::build(std::vector<int>& idx, int lo, int hi, int depth) {
  if (lo >= hi) return -1;
  Node node;
  if (hi - lo == 1) {
    node.point = idx[lo];
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }
  const int axis = depth % static_cast<int>(pts_.cols());
  const int mid = (lo + hi) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                   [&](int a, int b) {
                     return pts_(a, axis) != pts_(b, axis) ? pts_(a, axis) < pts_(b, axis)
                                                           : a < b;
                   });
  node.axis = axis;
  node.split = pts_(idx[mid], axis);
  node.point = idx[mid];
  const int self = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  const int left = build(idx, lo, mid, depth + 1);
  const int right = build(idx, mid + 1, hi, depth + 1);
  nodes_[self].left = left;
  nodes_[self].right = right;
  return self;
}

void NearestNeighborIndex::search(int ni, const Eigen::RowVectorXd& q, int& best,
                                  double& best_d2) const {
  if (ni < 0) return;
  const Node& node = nodes_[ni];
  const double d2 = (pts_.row(node.point) - q).squaredNorm();
  if (d2 < best_d2 || (d2 == best_d2 && node.point < best)) {
    best_d2 = d2;
    best = node.point;
  }
  if (node.axis < 0) return;
  const double delta = q[node.axis] - node.split;
  search(delta <= 0 ? node.left : node.right, q, best, best_d2);
  if (delta * delta <= best_d2) search(delta <= 0 ? node.right : node.left, q, best, best_d2);
}

int NearestNeighborIndex::nearest(const Eigen::RowVectorXd& query) const {
  if (brute_) {
    int best = 0;
    double best_d2 = (pts_.row(0) - query).squaredNorm();
    for (int i = 1; i < pts_.rows(); ++i) {
      const double d2 = (pts_.row(i) - query).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    return best;
  }
  int best = nodes_[root_].point;
  double best_d2 = std::numeric_limits<double>::max();
  search(root_, query, best, best_d2);
  return best;
}

// --- ICP alignment ----------------------------------------------------------

namespace {

double correspondence_pass(const Eigen::MatrixXd& mapped, const NearestNeighborIndex& index,
                           const Eigen::MatrixXd& ref_coords, std::vector<int>& pi) {
  double total = 0.0;
  for (int i = 0; i < mapped.rows(); ++i) {
    pi[i] = index.nearest(mapped.row(i));
    total += (mapped.row(i) - ref_coords.row(pi[i])).squaredNorm();
  }
  return total / mapped.rows();
}

Eigen::MatrixXd least_squares_transform(const Eigen::MatrixXd& coords,
                                        const Eigen::MatrixXd& ref_pi, bool orthogonal) {
  // R = (U^T U)^{-1} U^T ref; reduces to Lambda^{1/2} U^T ref in the
  // canonical eigen-normalized basis.
  const Eigen::MatrixXd gram = coords.transpose() * coords;
  const Eigen::MatrixXd rhs = coords.transpose() * ref_pi;
  Eigen::MatrixXd r = gram.ldlt().solve(rhs);
  if (orthogonal) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    r = svd.matrixU() * svd.matrixV().transpose();
  }
  return r;
}

}  // namespace

std::pair<SpectralEmbedding, Correspondence> align_to_reference(const SpectralEmbedding& emb,
                                                                const SpectralEmbedding& ref,
                                                                const AlignOptions& opts) {
  if (emb.d != ref.d) throw ArgumentError("align_to_reference: dimension mismatch");
  const int n = emb.n_nodes();
  const int d = emb.d;

  NearestNeighborIndex index(ref.coords);
  std::vector<int> pi(n, 0);

  // Initialization candidates: all 2^d sign-flip diagonals, plus the same
  // flips conjugated by the covariance eigenbases of the two embeddings (the
  // flips alone cannot reach an arbitrary planted rotation).
  std::vector<Eigen::MatrixXd> starts;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_emb(emb.coords.transpose() * emb.coords);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_ref(ref.coords.transpose() * ref.coords);
  const Eigen::MatrixXd v_emb = es_emb.eigenvectors();
  const Eigen::MatrixXd v_ref = es_ref.eigenvectors();
  for (unsigned mask = 0; mask < (1u << d); ++mask) {
    Eigen::MatrixXd flip = Eigen::MatrixXd::Identity(d, d);
    for (int c = 0; c < d; ++c)
      if (mask & (1u << c)) flip(c, c) = -1.0;
    starts.push_back(flip);
    starts.push_back(v_emb * flip * v_ref.transpose());
  }
  Eigen::MatrixXd best_r = starts.front();
  double best_res = std::numeric_limits<double>::max();
  for (const auto& start : starts) {
    const double res = correspondence_pass(emb.coords * start, index, ref.coords, pi);
    if (res < best_res) {
      best_res = res;
      best_r = start;
    }
  }

  Eigen::MatrixXd r = best_r;
  double residual = correspondence_pass(emb.coords * r, index, ref.coords, pi);
  int iter = 0;
  for (; iter < opts.max_iters; ++iter) {
    Eigen::MatrixXd ref_pi(n, d);
    for (int i = 0; i < n; ++i) ref_pi.row(i) = ref.coords.row(pi[i]);
    const Eigen::MatrixXd r_new = least_squares_transform(emb.coords, ref_pi, opts.orthogonal);
    std::vector<int> pi_new(n, 0);
    const double res_new = correspondence_pass(emb.coords * r_new, index, ref.coords, pi_new);
    if (!std::isfinite(res_new))
      throw NumericalError("align_to_reference: non-finite residual");
    if (res_new > residual - opts.tol) {
      if (res_new < residual) {
        r = r_new;
        pi = std::move(pi_new);
        residual = res_new;
        ++iter;
      }
      break;
    }
    r = r_new;
    pi = std::move(pi_new);
    residual = res_new;
  }

  SpectralEmbedding out = emb;
  out.coords = emb.coords * r;
  out.transform = r;
  out.aligned = true;
  Correspondence corr;
  corr.pi = std::move(pi);
  corr.residual = residual;
  corr.iterations = iter;
  return {std::move(out), std::move(corr)};
}

std::vector<std::vector<int>> knn_in_embedding(const SpectralEmbedding& emb, int k) {
  const int n = emb.n_nodes();
  if (k >= n) throw ArgumentError("knn_in_embedding: k must be < number of nodes");
  std::vector<std::vector<int>> out(n);
  std::vector<std::pair<double, int>> cand;
  cand.reserve(n - 1);
  for (int i = 0; i < n; ++i) {
    cand.clear();
    for (int j = 0; j < n; ++j)
      if (j != i) cand.emplace_back((emb.coords.row(i) - emb.coords.row(j)).squaredNorm(), j);
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    auto& lst = out[i];
    lst.reserve(k + 1);
    for (int t = 0; t < k; ++t) lst.push_back(cand[t].second);
    lst.push_back(i);  // the node itself, appended last
  }
  return out;
}

Eigen::VectorXd relative_coords(const SpectralEmbedding& emb, int i, int j) {
  if (!emb.aligned) throw StateError("relative_coords: embedding is not aligned");
  return (emb.coords.row(j) - emb.coords.row(i)).transpose();
}

// --- Embedding I/O ----------------------------------------------------------

void save_embedding(const SpectralEmbedding& emb, const std::filesystem::path& path,
                    const std::string& reference_id) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("save_embedding: cannot write " + path.string());

  nlohmann::ordered_json header;
  header["format_version"] = 1;
  header["d"] = emb.d;
  header["eigenvalues"] = std::vector<double>(emb.eigenvalues.data(),
                                              emb.eigenvalues.data() + emb.eigenvalues.size());
  header["aligned"] = emb.aligned;
  header["reference"] = reference_id;
  std::vector<std::vector<double>> r(emb.d, std::vector<double>(emb.d));
  for (int a = 0; a < emb.d; ++a)
    for (int b = 0; b < emb.d; ++b) r[a][b] = emb.transform(a, b);
  header["transform"] = r;
  out << "# " << header.dump() << "\n";

  for (int c = 0; c < emb.d; ++c) out << (c ? "\t" : "") << "u" << (c + 1);
  out << "\n";
  char buf[32];
  for (int i = 0; i < emb.n_nodes(); ++i) {
    for (int c = 0; c < emb.d; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", emb.coords(i, c));
      out << (c ? "\t" : "") << buf;
    }
    out << "\n";
  }
  if (!out) throw Error("save_embedding: write failed for " + path.string());
}

SpectralEmbedding load_embedding(const std::filesystem::path& path, std::string* reference_id) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::string line;
  if (!std::getline(in, line) || line.size() < 3 || line[0] != '#')
    throw ParseError(path.string() + ":1: expected '# {json}' header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line.substr(2));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ":1: " + e.what());
  }

  SpectralEmbedding emb;
  try {
    emb.d = header.at("d").get<int>();
    const auto ev = header.at("eigenvalues").get<std::vector<double>>();
    emb.eigenvalues = Eigen::Map<const Eigen::VectorXd>(ev.data(), ev.size());
    emb.aligned = header.at("aligned").get<bool>();
    const auto r = header.at("transform").get<std::vector<std::vector<double>>>();
    emb.transform.resize(emb.d, emb.d);
    for (int a = 0; a < emb.d; ++a)
      for (int b = 0; b < emb.d; ++b) emb.transform(a, b) = r[a][b];
    if (reference_id) *reference_id = header.value("reference", "");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ":1: " + e.what());
  }

  if (!std::getline(in, line)) throw ParseError(path.string() + ":2: missing column header");
  std::vector<Eigen::VectorXd> rows;
  int lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Eigen::VectorXd row(emb.d);
    for (int c = 0; c < emb.d; ++c)
      if (!(ss >> row[c]))
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad coordinate row");
    rows.push_back(std::move(row));
  }
  emb.coords.resize(static_cast<int>(rows.size()), emb.d);
  for (std::size_t i = 0; i < rows.size(); ++i) emb.coords.row(static_cast<int>(i)) = rows[i];
  return emb;
}

}  // namespace surfpool
