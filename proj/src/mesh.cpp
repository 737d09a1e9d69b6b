#include "surfpool/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "surfpool/kmeans.hpp"

namespace surfpool {

namespace {

double dist3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

bool edges_connected(int n, const std::vector<std::pair<int, int>>& edges) {
  if (n <= 1) return true;
  std::vector<std::vector<int>> adj(n);
  for (const auto& [i, j] : edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  std::vector<char> seen(n, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int reached = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int w : adj[v])
      if (!seen[w]) {
        seen[w] = 1;
        ++reached;
        stack.push_back(w);
      }
  }
  return reached == n;
}

// Seed derivation for per-mesh streams inside a dataset (splitmix64 step).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

// --- SurfaceMesh ------------------------------------------------------------

const std::vector<double>* SurfaceMesh::field(std::string_view name) const {
  for (const auto& [fname, values] : fields)
    if (fname == name) return &values;
  return nullptr;
}

std::vector<double>& SurfaceMesh::add_field(const std::string& name) {
  for (auto& [fname, values] : fields)
    if (fname == name) return values;
  fields.emplace_back(name, std::vector<double>(vertices.size(), 0.0));
  return fields.back().second;
}

std::vector<std::pair<int, int>> SurfaceMesh::edge_list() const {
  if (!rebuilt_edges.empty()) return rebuilt_edges;
  std::set<std::pair<int, int>> edges;
  for (const auto& f : faces)
    for (int c = 0; c < 3; ++c) {
      int a = f[c], b = f[(c + 1) % 3];
      if (a > b) std::swap(a, b);
      edges.emplace(a, b);
    }
  return {edges.begin(), edges.end()};
}

double SurfaceMesh::edge_length(int i, int j) const { return dist3(vertices[i], vertices[j]); }

void SurfaceMesh::validate() const {
  const int n = n_vertices();
  for (const auto& f : faces) {
    for (int idx : f)
      if (idx < 0 || idx >= n)
        throw ArgumentError("mesh: face index " + std::to_string(idx) + " out of range [0, " +
                            std::to_string(n) + ")");
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
      throw ArgumentError("mesh: degenerate face with repeated vertex index");
  }
  for (const auto& [i, j] : rebuilt_edges)
    if (i < 0 || j < 0 || i >= n || j >= n || i == j)
      throw ArgumentError("mesh: invalid rebuilt edge");
  for (const auto& [name, values] : fields)
    if (static_cast<int>(values.size()) != n)
      throw ArgumentError("mesh: field '" + name + "' has length " +
                          std::to_string(values.size()) + ", expected " + std::to_string(n));
  if (!parcels.empty() && static_cast<int>(parcels.size()) != n)
    throw ArgumentError("mesh: parcel array length mismatch");
  if (!edges_connected(n, edge_list()))
    throw ConnectivityError("mesh: edge graph is not connected");
}

// --- WeightedGraph ----------------------------------------------------------

std::vector<std::vector<std::pair<int, double>>> WeightedGraph::neighbor_lists() const {
  std::vector<std::vector<std::pair<int, double>>> adj(n);
  for (const auto& e : edges) {
    adj[e.i].emplace_back(e.j, e.w);
    adj[e.j].emplace_back(e.i, e.w);
  }
  return adj;
}

double WeightedGraph::total_weight() const {
  double s = 0.0;
  for (const auto& e : edges) s += 2.0 * e.w;
  return s;
}

WeightedGraph build_weighted_graph(const SurfaceMesh& mesh, double epsilon) {
  if (!(epsilon > 0.0)) throw ArgumentError("build_weighted_graph: epsilon must be > 0");
  const auto edges = mesh.edge_list();
  const int n = mesh.n_vertices();
  if (!edges_connected(n, edges))
    throw ConnectivityError("build_weighted_graph: mesh edge graph is not connected");

  WeightedGraph g;
  g.n = n;
  g.edges.reserve(edges.size());
  for (const auto& [i, j] : edges) {
    const double w = 1.0 / (mesh.edge_length(i, j) + epsilon);
    if (!std::isfinite(w) || w <= 0.0)
      throw NumericalError("build_weighted_graph: non-finite edge weight");
    g.edges.push_back({i, j, w});
  }
  g.degrees.assign(n, 0.0);
  for (const auto& e : g.edges) {
    g.degrees[e.i] += e.w;
    g.degrees[e.j] += e.w;
  }
  return g;
}

bool check_connected(const WeightedGraph& graph) {
  if (graph.n <= 1) return true;
  std::vector<std::vector<int>> adj(graph.n);
  for (const auto& e : graph.edges) {
    adj[e.i].push_back(e.j);
    adj[e.j].push_back(e.i);
  }
  std::vector<char> seen(graph.n, 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int reached = 1;
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (int w : adj[v])
      if (!seen[w]) {
        seen[w] = 1;
        ++reached;
        q.push(w);
      }
  }
  return reached == graph.n;
}

// --- Subsampling ------------------------------------------------------------

SurfaceMesh subsample_mesh(const SurfaceMesh& mesh, int target_n, std::uint64_t seed) {
  const int n = mesh.n_vertices();
  if (target_n < 3 || target_n > n)
    throw ArgumentError("subsample_mesh: target_n " + std::to_string(target_n) +
                        " outside [3, " + std::to_string(n) + "]");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(target_n);

  SurfaceMesh out;
  out.vertices.reserve(target_n);
  for (int idx : order) out.vertices.push_back(mesh.vertices[idx]);
  for (const auto& [name, values] : mesh.fields) {
    auto& f = out.add_field(name);
    for (int v = 0; v < target_n; ++v) f[v] = values[order[v]];
  }
  if (mesh.has_parcels()) {
    out.parcels.reserve(target_n);
    for (int idx : order) out.parcels.push_back(mesh.parcels[idx]);
  }
  out.meta = mesh.meta;

  // k-NN connectivity in 3D, k grown until the edge graph is connected.
  const int m = target_n;
  for (int k = std::min(5, m - 1);; ++k) {
    std::set<std::pair<int, int>> edges;
    std::vector<std::pair<double, int>> cand(m - 1);
    for (int i = 0; i < m; ++i) {
      int c = 0;
      for (int j = 0; j < m; ++j)
        if (j != i) cand[c++] = {dist3(out.vertices[i], out.vertices[j]), j};
      std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
      for (int t = 0; t < k; ++t) {
        int a = i, b = cand[t].second;
        if (a > b) std::swap(a, b);
        edges.emplace(a, b);
      }
    }
    std::vector<std::pair<int, int>> edge_vec(edges.begin(), edges.end());
    if (edges_connected(m, edge_vec) || k >= m - 1) {
      out.rebuilt_edges = std::move(edge_vec);
      break;
    }
  }
  return out;
}

// --- Synthetic meshes -------------------------------------------------------

namespace {

struct TriMeshBuilder {
  std::vector<std::array<double, 3>> verts;
  std::vector<std::array<int, 3>> faces;
};

TriMeshBuilder icosahedron() {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriMeshBuilder m;
  m.verts = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
             {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : m.verts) {
    const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    for (double& c : v) c /= norm;
  }
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},
             {5, 11, 4}, {11, 10, 2}, {10, 7, 6},  {7, 1, 8},  {3, 9, 4},   {3, 4, 2},
             {3, 2, 6},  {3, 6, 8},  {3, 8, 9},   {4, 9, 5},  {2, 4, 11},  {6, 2, 10},
             {8, 6, 7},  {9, 8, 1}};
  return m;
}

void subdivide(TriMeshBuilder& m) {
  std::map<std::pair<int, int>, int> midpoint;
  auto mid = [&](int a, int b) {
    const std::pair<int, int> key(std::min(a, b), std::max(a, b));
    auto it = midpoint.find(key);
    if (it != midpoint.end()) return it->second;
    std::array<double, 3> p;
    for (int c = 0; c < 3; ++c) p[c] = 0.5 * (m.verts[a][c] + m.verts[b][c]);
    const double norm = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    for (double& c : p) c /= norm;
    m.verts.push_back(p);
    const int idx = static_cast<int>(m.verts.size()) - 1;
    midpoint.emplace(key, idx);
    return idx;
  };
  std::vector<std::array<int, 3>> out;
  out.reserve(m.faces.size() * 4);
  for (const auto& f : m.faces) {
    const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
    out.push_back({f[0], ab, ca});
    out.push_back({f[1], bc, ab});
    out.push_back({f[2], ca, bc});
    out.push_back({ab, bc, ca});
  }
  m.faces = std::move(out);
}

// Removes `to_remove` random vertices, re-triangulating each hole with a fan.
// Only removals that keep the surface a closed manifold are applied; if the
// attempt budget runs out the current (slightly larger) mesh is kept.
void prune_vertices(TriMeshBuilder& m, int to_remove, std::mt19937_64& rng) {
  const int nv = static_cast<int>(m.verts.size());
  std::vector<char> dead(nv, 0);
  std::vector<std::set<int>> vfaces(nv);
  std::map<std::pair<int, int>, int> edge_faces;  // undirected edge -> face count
  auto edge_key = [](int a, int b) { return std::pair<int, int>(std::min(a, b), std::max(a, b)); };
  auto add_face_edges = [&](const std::array<int, 3>& f, int delta) {
    for (int c = 0; c < 3; ++c) edge_faces[edge_key(f[c], f[(c + 1) % 3])] += delta;
  };
  std::vector<std::array<int, 3>> faces = m.faces;
  std::vector<char> face_alive(faces.size(), 1);
  for (std::size_t fi = 0; fi < faces.size(); ++fi) {
    for (int c = 0; c < 3; ++c) vfaces[faces[fi][c]].insert(static_cast<int>(fi));
    add_face_edges(faces[fi], 1);
  }

  int removed = 0;
  int attempts = 0;
  const int attempt_budget = 30 * std::max(1, to_remove);
  std::uniform_int_distribution<int> pick(0, nv - 1);
  while (removed < to_remove && attempts < attempt_budget) {
    ++attempts;
    const int v = pick(rng);
    if (dead[v] || vfaces[v].size() < 3) continue;

    // Walk the directed boundary of v's star; legal stars form a single cycle.
    std::map<int, int> next;
    bool ok = true;
    for (int fi : vfaces[v]) {
      const auto& f = faces[fi];
      int a, b;
      if (f[0] == v) {
        a = f[1];
        b = f[2];
      } else if (f[1] == v) {
        a = f[2];
        b = f[0];
      } else {
        a = f[0];
        b = f[1];
      }
      if (!next.emplace(a, b).second) {
        ok = false;
        break;
      }
    }
    if (!ok || next.empty()) continue;
    std::vector<int> cycle;
    cycle.push_back(next.begin()->first);
    while (cycle.size() <= next.size()) {
      auto it = next.find(cycle.back());
      if (it == next.end()) break;
      if (it->second == cycle.front()) break;
      cycle.push_back(it->second);
    }
    if (cycle.size() != next.size() || cycle.size() < 3) continue;

    // Fan edges must be new, otherwise the fill creates a non-manifold edge.
    const int apex = cycle[0];
    const int len = static_cast<int>(cycle.size());
    bool legal = true;
    for (int i = 2; i < len - 1 && legal; ++i)
      if (edge_faces.count(edge_key(apex, cycle[i]))) legal = false;
    if (!legal) continue;

    for (int fi : vfaces[v]) {
      face_alive[fi] = 0;
      add_face_edges(faces[fi], -1);
      for (int c = 0; c < 3; ++c)
        if (faces[fi][c] != v) vfaces[faces[fi][c]].erase(fi);
      // Drop zero-count edges so the non-manifold test stays exact.
    }
    for (auto it = edge_faces.begin(); it != edge_faces.end();)
      it = (it->second <= 0) ? edge_faces.erase(it) : std::next(it);
    vfaces[v].clear();
    dead[v] = 1;
    for (int i = 1; i < len - 1; ++i) {
      faces.push_back({apex, cycle[i], cycle[i + 1]});
      face_alive.push_back(1);
      const int fi = static_cast<int>(faces.size()) - 1;
      for (int c : {apex, cycle[i], cycle[i + 1]}) vfaces[c].insert(fi);
      add_face_edges(faces.back(), 1);
    }
    ++removed;
  }

  // Compact vertex indices.
  std::vector<int> remap(nv, -1);
  std::vector<std::array<double, 3>> new_verts;
  for (int v = 0; v < nv; ++v)
    if (!dead[v]) {
      remap[v] = static_cast<int>(new_verts.size());
      new_verts.push_back(m.verts[v]);
    }
  std::vector<std::array<int, 3>> new_faces;
  for (std::size_t fi = 0; fi < faces.size(); ++fi)
    if (face_alive[fi])
      new_faces.push_back({remap[faces[fi][0]], remap[faces[fi][1]], remap[faces[fi][2]]});
  m.verts = std::move(new_verts);
  m.faces = std::move(new_faces);
}

void blob_deform(TriMeshBuilder& m, const BlobShape& shape) {
  for (auto& v : m.verts) {
    double r = 1.0;
    for (const auto& lobe : shape.lobes) {
      const double dx = v[0] - lobe.center[0], dy = v[1] - lobe.center[1],
                   dz = v[2] - lobe.center[2];
      r += lobe.amp * std::exp(-(dx * dx + dy * dy + dz * dz) * lobe.inv_w2);
    }
    for (int c = 0; c < 3; ++c) v[c] *= r * shape.stretch[c];
  }
}

}  // namespace

BlobShape random_blob_shape(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-1.0, 1.0);
  std::uniform_real_distribution<double> uamp(0.05, 0.18);
  std::uniform_real_distribution<double> uwidth(0.5, 1.0);
  BlobShape shape;
  for (int l = 0; l < 4; ++l) {
    std::array<double, 3> c{ux(rng), ux(rng), ux(rng)};
    const double norm = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]) + 1e-12;
    for (double& x : c) x /= norm;
    const double w = uwidth(rng);
    shape.lobes.push_back({c, uamp(rng), 1.0 / (w * w)});
  }
  shape.stretch = {1.0 + 0.2 * ux(rng), 1.0 + 0.2 * ux(rng), 1.0 + 0.2 * ux(rng)};
  return shape;
}

BlobShape jitter_blob_shape(const BlobShape& base, std::uint64_t seed, double magnitude) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  BlobShape shape = base;
  for (auto& lobe : shape.lobes) {
    double norm = 0.0;
    for (double& c : lobe.center) {
      c += 0.3 * magnitude * gauss(rng);
      norm += c * c;
    }
    norm = std::sqrt(norm) + 1e-12;
    for (double& c : lobe.center) c /= norm;
    lobe.amp *= 1.0 + magnitude * gauss(rng);
    lobe.inv_w2 *= 1.0 + 0.5 * magnitude * gauss(rng);
  }
  for (double& s : shape.stretch) s *= 1.0 + 0.3 * magnitude * gauss(rng);
  return shape;
}

namespace {

SurfaceMesh build_blob(int n, std::uint64_t seed, const BlobShape& shape) {
  std::vector<int> sizes{12};
  while (sizes.back() < n) sizes.push_back((sizes.back() - 2) * 4 + 2);
  TriMeshBuilder b = icosahedron();
  for (std::size_t l = 1; l < sizes.size(); ++l) subdivide(b);
  std::mt19937_64 rng(seed);
  prune_vertices(b, static_cast<int>(b.verts.size()) - n, rng);
  blob_deform(b, shape);
  SurfaceMesh mesh;
  mesh.vertices = std::move(b.verts);
  mesh.faces = std::move(b.faces);
  mesh.validate();
  return mesh;
}

}  // namespace

SurfaceMesh gen_blob_mesh(int n, std::uint64_t seed, const BlobShape& shape) {
  if (n < 12) throw ArgumentError("gen_blob_mesh: n must be >= 12");
  return build_blob(n, seed, shape);
}

SurfaceMesh gen_synthetic_mesh(MeshKind kind, int n, std::uint64_t seed) {
  if (n < 12) throw ArgumentError("gen_synthetic_mesh: n must be >= 12");

  if (kind == MeshKind::blob)
    return build_blob(n, seed, random_blob_shape(mix_seed(seed, 0xb10b)));

  // Icosphere sizes: 12, 42, 162, 642, 2562, 10242, ...
  std::vector<int> sizes{12};
  while (sizes.back() < n) sizes.push_back((sizes.back() - 2) * 4 + 2);
  int level = 0;
  for (std::size_t l = 1; l < sizes.size(); ++l)
    if (std::abs(sizes[l] - n) < std::abs(sizes[level] - n)) level = static_cast<int>(l);
  TriMeshBuilder b = icosahedron();
  for (int l = 0; l < level; ++l) subdivide(b);
  SurfaceMesh mesh;
  mesh.vertices = std::move(b.verts);
  mesh.faces = std::move(b.faces);
  mesh.validate();
  return mesh;
}

// --- Labeled datasets -------------------------------------------------------

std::vector<int> geodesic_disc(const SurfaceMesh& mesh, int anchor, int size,
                               const std::vector<int>& excluded) {
  const int n = mesh.n_vertices();
  if (anchor < 0 || anchor >= n) throw ArgumentError("geodesic_disc: anchor out of range");
  std::vector<char> blocked(n, 0);
  for (int v : excluded) blocked[v] = 1;
  std::vector<double> dist(n, std::numeric_limits<double>::max());
  std::vector<std::vector<int>> adj(n);
  for (const auto& [i, j] : mesh.edge_list()) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
  dist[anchor] = 0.0;
  pq.emplace(0.0, anchor);
  std::vector<int> taken;
  while (!pq.empty() && static_cast<int>(taken.size()) < size) {
    const auto [d, v] = pq.top();
    pq.pop();
    if (d > dist[v]) continue;
    if (blocked[v]) continue;
    blocked[v] = 1;  // now settled
    taken.push_back(v);
    for (int w : adj[v]) {
      const double nd = d + mesh.edge_length(v, w);
      if (nd < dist[w]) {
        dist[w] = nd;
        pq.emplace(nd, w);
      }
    }
  }
  return taken;
}

namespace {

int nearest_to_direction(const SurfaceMesh& mesh, const std::array<double, 3>& dir) {
  int best = 0;
  double best_dot = -std::numeric_limits<double>::max();
  for (int v = 0; v < mesh.n_vertices(); ++v) {
    const auto& p = mesh.vertices[v];
    const double norm = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) + 1e-12;
    const double dot = (p[0] * dir[0] + p[1] * dir[1] + p[2] * dir[2]) / norm;
    if (dot > best_dot) {
      best_dot = dot;
      best = v;
    }
  }
  return best;
}

struct ClassRegions {
  int anchor1, anchor2;
  std::vector<int> r1, r2;
};

// Two disjoint geodesic disc regions around fixed antipodal directions.
ClassRegions class_regions(const SurfaceMesh& mesh, double frac) {
  const int n = mesh.n_vertices();
  const int size = std::max(1, static_cast<int>(std::ceil(frac * n)));
  ClassRegions out;
  out.anchor1 = nearest_to_direction(mesh, {0.0, 0.0, 1.0});
  out.anchor2 = nearest_to_direction(mesh, {0.0, 0.0, -1.0});
  out.r1 = geodesic_disc(mesh, out.anchor1, size);
  out.r2 = geodesic_disc(mesh, out.anchor2, size, out.r1);
  return out;
}

}  // namespace

std::vector<int> DatasetManifest::split_indices(std::string_view split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

DatasetManifest gen_labeled_dataset(DatasetTask task, int count,
                                    std::pair<int, int> n_range, std::uint64_t seed,
                                    const DatasetOptions& opts,
                                    const std::filesystem::path& out_dir) {
  if (count < 10) throw ArgumentError("gen_labeled_dataset: count must be >= 10");
  if (n_range.first < 12 || n_range.second < n_range.first)
    throw ArgumentError("gen_labeled_dataset: bad n_range");

  std::filesystem::create_directories(out_dir / "meshes");

  DatasetManifest manifest;
  manifest.task = task == DatasetTask::two_region_class ? "two_region_class" : "parcel_size_reg";
  manifest.field_names = {"thickness", "depth"};
  manifest.base_dir = out_dir;

  const int n_train = static_cast<int>(std::floor(opts.split_train * count));
  const int n_val = static_cast<int>(std::floor(opts.split_val * count));

  // Dataset-level draws shared across meshes.
  std::mt19937_64 shared_rng(mix_seed(seed, 0xda7a5e7));
  std::vector<double> parcel_base(opts.parcels);
  for (double& b : parcel_base) b = std::uniform_real_distribution<double>(-1.0, 1.0)(shared_rng);
  std::vector<std::vector<double>> parcel_init;
  for (int p = 0; p < opts.parcels; ++p) {
    std::array<double, 3> d;
    double norm = 0.0;
    for (double& c : d) {
      c = std::uniform_real_distribution<double>(-1.0, 1.0)(shared_rng);
      norm += c * c;
    }
    norm = std::sqrt(norm) + 1e-12;
    parcel_init.push_back({d[0] / norm, d[1] / norm, d[2] / norm});
  }

  // One population-level shape, jittered per mesh, so the meshes share a
  // common geometry (spectral alignment across the dataset is meaningful).
  const BlobShape base_shape = random_blob_shape(mix_seed(seed, 0x5a4e));

  for (int idx = 0; idx < count; ++idx) {
    std::mt19937_64 rng(mix_seed(seed, idx));
    const int n = std::uniform_int_distribution<int>(n_range.first, n_range.second)(rng);
    const BlobShape shape = jitter_blob_shape(base_shape, mix_seed(seed, 50000ULL + idx), 0.2);
    SurfaceMesh mesh = gen_blob_mesh(n, mix_seed(seed, 1000003ULL + idx), shape);
    const int nv = mesh.n_vertices();

    std::normal_distribution<double> gauss(0.0, 1.0);
    auto& thickness = mesh.add_field("thickness");
    auto& depth = mesh.add_field("depth");
    ManifestEntry entry;

    // Synthetic parcellation (shared centroid directions keep parcel
    // identities comparable across meshes); used as the regression reference
    // and by the fixed-parcellation baseline.
    {
      std::vector<std::vector<double>> pts(nv, std::vector<double>(3));
      for (int v = 0; v < nv; ++v)
        pts[v] = {mesh.vertices[v][0], mesh.vertices[v][1], mesh.vertices[v][2]};
      mesh.parcels = kmeans_from_centroids(pts, parcel_init).labels;
    }

    if (task == DatasetTask::two_region_class) {
      const int cls = idx % 2;
      const auto regions = class_regions(mesh, opts.region_frac);
      const auto& r1 = regions.r1;
      const auto& r2 = regions.r2;
      // Anchors are persisted so the regions can be rebuilt exactly.
      mesh.meta["region_anchor_1"] = std::to_string(regions.anchor1);
      mesh.meta["region_anchor_2"] = std::to_string(regions.anchor2);
      const double c = (cls == 0 ? 0.5 : -0.5) * opts.delta;
      for (int v : r1) thickness[v] = c;
      for (int v : r2) thickness[v] = -c;
      // Center so the noise-free global mean is identical (zero) per class.
      double mean = 0.0;
      for (double t : thickness) mean += t;
      mean /= nv;
      for (double& t : thickness) t -= mean;
      for (int v = 0; v < nv; ++v) {
        thickness[v] += opts.noise * gauss(rng);
        depth[v] = opts.noise * gauss(rng);
      }
      entry.target = {static_cast<double>(cls)};
      mesh.meta["label"] = std::to_string(cls);
    } else {
      std::vector<double> fractions(opts.parcels, 0.0);
      for (int lbl : mesh.parcels) fractions[lbl] += 1.0;
      for (double& f : fractions) f /= nv;
      for (int v = 0; v < nv; ++v) {
        thickness[v] = parcel_base[mesh.parcels[v]] + opts.noise * gauss(rng);
        depth[v] = opts.noise * gauss(rng);
      }
      entry.target = fractions;
    }

    char name[64];
    std::snprintf(name, sizeof(name), "meshes/mesh_%04d.off", idx);
    entry.path = name;
    entry.split = idx < n_train ? "train" : (idx < n_train + n_val ? "val" : "test");
    mesh.meta["dataset_index"] = std::to_string(idx);
    save_mesh(mesh, out_dir / entry.path);
    manifest.entries.push_back(std::move(entry));
  }

  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace surfpool
