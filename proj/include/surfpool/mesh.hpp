#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "surfpool/errors.hpp"

namespace surfpool {

/// Triangulated surface with named per-vertex scalar fields.
///
/// Connectivity normally comes from the triangle faces. Meshes produced by
/// subsample_mesh carry an explicit edge list instead (faces are dropped and
/// `rebuilt_edges` is populated); edge_list() hides the difference.
struct SurfaceMesh {
  std::vector<std::array<double, 3>> vertices;
  std::vector<std::array<int, 3>> faces;
  /// Ordered list of (name, per-vertex values); order is preserved by I/O.
  std::vector<std::pair<std::string, std::vector<double>>> fields;
  /// Per-vertex integer parcel labels; empty when absent.
  std::vector<int> parcels;
  /// Free-form string metadata (label, target, ...), persisted with the mesh.
  std::map<std::string, std::string> meta;
  /// Explicit undirected edges (i < j); set by subsample_mesh, otherwise empty.
  std::vector<std::pair<int, int>> rebuilt_edges;

  int n_vertices() const { return static_cast<int>(vertices.size()); }
  bool has_parcels() const { return !parcels.empty(); }

  const std::vector<double>* field(std::string_view name) const;
  std::vector<double>& add_field(const std::string& name);

  /// Unique undirected edges (i < j), from faces or rebuilt_edges.
  std::vector<std::pair<int, int>> edge_list() const;

  double edge_length(int i, int j) const;

  /// Throws ArgumentError / ConnectivityError on structural violations.
  void validate() const;
};

/// Symmetric weighted graph; edges stored once with i < j, weights > 0.
struct WeightedGraph {
  struct Edge {
    int i;
    int j;
    double w;
  };

  int n = 0;
  std::vector<Edge> edges;   // sorted by (i, j), i < j
  std::vector<double> degrees;

  /// Neighbor lists (node -> (neighbor, weight)), built on demand.
  std::vector<std::vector<std::pair<int, double>>> neighbor_lists() const;
  double total_weight() const;  // sum over the full double-counted adjacency
};

/// Builds the inverse-distance weighted graph over the mesh edges:
/// a_ij = 1 / (||x_i - x_j|| + epsilon).
WeightedGraph build_weighted_graph(const SurfaceMesh& mesh, double epsilon = 1e-6);

/// True iff breadth-first traversal from node 0 reaches every node.
bool check_connected(const WeightedGraph& graph);

/// Keeps a seeded uniform random subset of target_n vertices and rebuilds
/// connectivity with k nearest neighbors in 3D (k grows from 5 until the
/// graph is connected). Fields, parcels and metadata follow the kept
/// vertices. Deterministic for a fixed seed.
SurfaceMesh subsample_mesh(const SurfaceMesh& mesh, int target_n, std::uint64_t seed);

enum class MeshKind { sphere, blob };

/// Smooth radial blob deformation (bump lobes plus an anisotropic stretch).
/// Dataset generation draws one population-level shape and jitters it per
/// mesh so that meshes share a common geometry the way subjects of a brain
/// population do.
struct BlobShape {
  struct Lobe {
    std::array<double, 3> center;  // unit direction
    double amp;
    double inv_w2;
  };
  std::vector<Lobe> lobes;
  std::array<double, 3> stretch{1.0, 1.0, 1.0};
};

BlobShape random_blob_shape(std::uint64_t seed);
BlobShape jitter_blob_shape(const BlobShape& base, std::uint64_t seed, double magnitude);

/// Synthetic closed test surfaces. `sphere` returns the unit icosphere whose
/// vertex count is closest to n. `blob` starts from the smallest icosphere
/// with at least n vertices, randomly removes vertices (re-triangulating each
/// hole) down to roughly n, then applies a seeded random BlobShape.
SurfaceMesh gen_synthetic_mesh(MeshKind kind, int n, std::uint64_t seed);

/// Blob with an explicit shape (pruning still seeded by `seed`).
SurfaceMesh gen_blob_mesh(int n, std::uint64_t seed, const BlobShape& shape);

enum class DatasetTask { two_region_class, parcel_size_reg };

struct DatasetOptions {
  double delta = 1.0;        // region contrast between the two classes
  double noise = 0.2;        // per-vertex field noise sigma
  int parcels = 8;           // parcel count for parcel_size_reg
  double region_frac = 0.15; // fraction of vertices per class region
  double split_train = 0.7;
  double split_val = 0.1;
};

struct ManifestEntry {
  std::string path;           // relative to the manifest directory
  std::string split;          // "train" | "val" | "test"
  std::vector<double> target; // class index (size 1) or regression targets
};

struct DatasetManifest {
  std::string task;
  std::vector<std::string> field_names;
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // directory the entry paths resolve against

  std::filesystem::path resolve(const ManifestEntry& e) const { return base_dir / e.path; }
  std::vector<int> split_indices(std::string_view split) const;
};

/// Generates `count` labeled blob meshes with node counts drawn uniformly
/// from n_range, writes them (plus the manifest) under out_dir, and returns
/// the manifest. Splits follow the floor rule: n_train = floor(0.7 c),
/// n_val = floor(0.1 c), rest test, assigned in entry order.
DatasetManifest gen_labeled_dataset(DatasetTask task, int count,
                                    std::pair<int, int> n_range, std::uint64_t seed,
                                    const DatasetOptions& opts,
                                    const std::filesystem::path& out_dir);

/// Geodesic disc: the `size` vertices closest to `anchor` in edge-length
/// Dijkstra distance (anchor included), optionally excluding a set.
std::vector<int> geodesic_disc(const SurfaceMesh& mesh, int anchor, int size,
                               const std::vector<int>& excluded = {});

// --- File I/O -------------------------------------------------------------
//
// Geometry: OFF ("OFF" header, optional "# meta\tkey\tvalue" comment lines,
// counts "N F E", N coordinate lines, F "3 i j k" lines, E "2 i j" lines;
// plain face meshes are written with E = 0 and edge meshes with F = 0).
// Fields: "<stem>.fields.tsv" sidecar, first line tab-separated field names
// (reserved name "parcel" holds integer labels), then N rows.

SurfaceMesh load_mesh(const std::filesystem::path& path);
void save_mesh(const SurfaceMesh& mesh, const std::filesystem::path& path);

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace surfpool
