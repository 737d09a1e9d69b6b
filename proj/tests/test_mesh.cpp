#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "oracles.hpp"
#include "surfpool/mesh.hpp"

using namespace surfpool;
namespace fs = std::filesystem;

namespace {

SurfaceMesh triangle_mesh(double side = 1.0) {
  SurfaceMesh m;
  m.vertices = {{0, 0, 0}, {side, 0, 0}, {side / 2, side * std::sqrt(3.0) / 2.0, 0}};
  m.faces = {{0, 1, 2}};
  return m;
}

fs::path temp_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("surfpool_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("weighted graph from two vertices at distance 1") {
  SurfaceMesh m = triangle_mesh(1.0);
  auto g = build_weighted_graph(m, 0.001);
  // edge (0,1) has length exactly 1
  REQUIRE(g.edges.size() == 3);
  CHECK(g.edges[0].i == 0);
  CHECK(g.edges[0].j == 1);
  CHECK(g.edges[0].w == doctest::Approx(1.0 / 1.001).epsilon(1e-12));
}

TEST_CASE("equilateral triangle with side 2 and epsilon 1") {
  SurfaceMesh m = triangle_mesh(2.0);
  auto g = build_weighted_graph(m, 1.0);
  for (const auto& e : g.edges) CHECK(e.w == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  for (double d : g.degrees) CHECK(d == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("epsilon must be positive") {
  SurfaceMesh m = triangle_mesh();
  CHECK_THROWS_AS(build_weighted_graph(m, 0.0), ArgumentError);
  CHECK_THROWS_AS(build_weighted_graph(m, -1.0), ArgumentError);
}

TEST_CASE("sphere mesh adjacency matches per-edge recomputation") {
  SurfaceMesh m = gen_synthetic_mesh(MeshKind::blob, 100, 11);
  const double eps = 1e-6;
  auto g = build_weighted_graph(m, eps);
  // Brute force over all face edges.
  std::map<std::pair<int, int>, double> expected;
  for (const auto& f : m.faces)
    for (int c = 0; c < 3; ++c) {
      int a = f[c], b = f[(c + 1) % 3];
      if (a > b) std::swap(a, b);
      const double dx = m.vertices[a][0] - m.vertices[b][0];
      const double dy = m.vertices[a][1] - m.vertices[b][1];
      const double dz = m.vertices[a][2] - m.vertices[b][2];
      expected[{a, b}] = 1.0 / (std::sqrt(dx * dx + dy * dy + dz * dz) + eps);
    }
  REQUIRE(g.edges.size() == expected.size());
  for (const auto& e : g.edges) CHECK(e.w == expected.at({e.i, e.j}));
}

TEST_CASE("degrees equal row sums exactly in edge order") {
  std::mt19937_64 rng(3);
  SurfaceMesh m = gen_synthetic_mesh(MeshKind::blob, 80, 5);
  auto g = build_weighted_graph(m);
  std::vector<double> sums(g.n, 0.0);
  for (const auto& e : g.edges) {
    sums[e.i] += e.w;
    sums[e.j] += e.w;
  }
  for (int v = 0; v < g.n; ++v) CHECK(g.degrees[v] == sums[v]);
}

TEST_CASE("adjacency scale property") {
  SurfaceMesh m = gen_synthetic_mesh(MeshKind::blob, 60, 9);
  const double eps = 1e-3, s = 3.7;
  auto g1 = build_weighted_graph(m, eps);
  SurfaceMesh scaled = m;
  for (auto& v : scaled.vertices)
    for (double& c : v) c *= s;
  auto g2 = build_weighted_graph(scaled, s * eps);
  REQUIRE(g1.edges.size() == g2.edges.size());
  for (std::size_t e = 0; e < g1.edges.size(); ++e)
    CHECK(g2.edges[e].w == doctest::Approx(g1.edges[e].w / s).epsilon(1e-12));
}

TEST_CASE("check_connected basics") {
  SurfaceMesh tri = triangle_mesh();
  CHECK(check_connected(build_weighted_graph(tri)));

  WeightedGraph two;  // two disjoint triangles
  two.n = 6;
  two.edges = {{0, 1, 1}, {1, 2, 1}, {0, 2, 1}, {3, 4, 1}, {4, 5, 1}, {3, 5, 1}};
  two.degrees.assign(6, 2.0);
  CHECK_FALSE(check_connected(two));
}

TEST_CASE("check_connected equals union-find oracle on perturbed graphs") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = oracles::random_connected_graph(30, rng);
    // Randomly delete some edges; connectivity may or may not survive.
    std::uniform_real_distribution<double> u(0.0, 1.0);
    WeightedGraph cut;
    cut.n = g.n;
    for (const auto& e : g.edges)
      if (u(rng) > 0.3) cut.edges.push_back(e);
    cut.degrees.assign(cut.n, 0.0);
    for (const auto& e : cut.edges) {
      cut.degrees[e.i] += e.w;
      cut.degrees[e.j] += e.w;
    }
    std::vector<std::pair<int, int>> pairs;
    for (const auto& e : cut.edges) pairs.emplace_back(e.i, e.j);
    CHECK(check_connected(cut) == oracles::union_find_connected(cut.n, pairs));
  }
}

TEST_CASE("disconnected mesh is rejected") {
  SurfaceMesh m;  // two disjoint triangles
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 0, 0}, {6, 0, 0}, {5, 1, 0}};
  m.faces = {{0, 1, 2}, {3, 4, 5}};
  CHECK_THROWS_AS(build_weighted_graph(m), ConnectivityError);
  CHECK_THROWS_AS(m.validate(), ConnectivityError);
}

TEST_CASE("subsample identity size keeps the vertex set") {
  SurfaceMesh m = gen_synthetic_mesh(MeshKind::sphere, 42, 1);
  auto sub = subsample_mesh(m, m.n_vertices(), 5);
  REQUIRE(sub.n_vertices() == m.n_vertices());
  std::set<std::array<double, 3>> original(m.vertices.begin(), m.vertices.end());
  for (const auto& v : sub.vertices) CHECK(original.count(v) == 1);
}

TEST_CASE("subsample determinism") {
  SurfaceMesh m = gen_synthetic_mesh(MeshKind::blob, 300, 2);
  auto a = subsample_mesh(m, 100, 77);
  auto b = subsample_mesh(m, 100, 77);
  CHECK(a.vertices == b.vertices);
  CHECK(a.rebuilt_edges == b.rebuilt_edges);
  auto c = subsample_mesh(m, 100, 78);
  CHECK(a.vertices != c.vertices);
}

TEST_CASE("subsample keeps fields consistent and stays connected") {
  SurfaceMesh m = gen_synthetic_mesh(MeshKind::blob, 500, 3);
  auto& f = m.add_field("marker");
  // Field encodes the vertex position so the restriction can be verified.
  for (int v = 0; v < m.n_vertices(); ++v)
    f[v] = m.vertices[v][0] * 1000.0 + m.vertices[v][1];
  m.parcels.assign(m.n_vertices(), 0);
  for (int v = 0; v < m.n_vertices(); ++v) m.parcels[v] = v % 7;
  std::map<std::array<double, 3>, std::pair<double, int>> lookup;
  for (int v = 0; v < m.n_vertices(); ++v)
    lookup[m.vertices[v]] = {f[v], m.parcels[v]};

  auto sub = subsample_mesh(m, 150, 4);
  REQUIRE(sub.n_vertices() == 150);
  const auto* sf = sub.field("marker");
  REQUIRE(sf != nullptr);
  for (int v = 0; v < sub.n_vertices(); ++v) {
    const auto& [fv, pv] = lookup.at(sub.vertices[v]);
    CHECK((*sf)[v] == fv);
    CHECK(sub.parcels[v] == pv);
  }
  CHECK(check_connected(build_weighted_graph(sub)));
}

TEST_CASE("subsample argument validation") {
  SurfaceMesh m = gen_synthetic_mesh(MeshKind::sphere, 42, 1);
  CHECK_THROWS_AS(subsample_mesh(m, 2, 0), ArgumentError);
  CHECK_THROWS_AS(subsample_mesh(m, 43, 0), ArgumentError);
}

TEST_CASE("icosphere has exact size and unit radius") {
  SurfaceMesh m = gen_synthetic_mesh(MeshKind::sphere, 162, 123);
  CHECK(m.n_vertices() == 162);
  CHECK(m.faces.size() == 320);
  for (const auto& v : m.vertices) {
    const double r = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    CHECK(r == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("blob generation is deterministic per seed") {
  auto a = gen_synthetic_mesh(MeshKind::blob, 90, 6);
  auto b = gen_synthetic_mesh(MeshKind::blob, 90, 6);
  CHECK(a.vertices == b.vertices);
  CHECK(a.faces == b.faces);
  auto c = gen_synthetic_mesh(MeshKind::blob, 90, 7);
  CHECK(a.vertices != c.vertices);
}

TEST_CASE("blob is connected and watertight") {
  SurfaceMesh m = gen_synthetic_mesh(MeshKind::blob, 1000, 8);
  CHECK(m.n_vertices() <= 1005);
  CHECK(m.n_vertices() >= 995);
  CHECK(check_connected(build_weighted_graph(m)));
  // Every undirected edge must be shared by exactly two faces.
  std::map<std::pair<int, int>, int> incidence;
  for (const auto& f : m.faces)
    for (int c = 0; c < 3; ++c) {
      int a = f[c], b = f[(c + 1) % 3];
      if (a > b) std::swap(a, b);
      incidence[{a, b}]++;
    }
  for (const auto& [edge, count] : incidence) CHECK(count == 2);
}

TEST_CASE("blob requires n >= 12") {
  CHECK_THROWS_AS(gen_synthetic_mesh(MeshKind::blob, 11, 0), ArgumentError);
}

TEST_CASE("two_region_class construction") {
  auto dir = temp_dir("tworegion");
  DatasetOptions opts;
  opts.noise = 0.0;
  opts.delta = 1.0;
  auto manifest = gen_labeled_dataset(DatasetTask::two_region_class, 10, {120, 160}, 42, opts, dir);
  REQUIRE(manifest.entries.size() == 10);

  double mean0 = 0.0, mean1 = 0.0;
  int n0 = 0, n1 = 0;
  for (const auto& entry : manifest.entries) {
    SurfaceMesh m = load_mesh(manifest.resolve(entry));
    const auto* thickness = m.field("thickness");
    REQUIRE(thickness != nullptr);
    double global = 0.0;
    for (double t : *thickness) global += t;
    global /= m.n_vertices();
    const int cls = static_cast<int>(entry.target.at(0));
    (cls == 0 ? mean0 : mean1) += global;
    (cls == 0 ? n0 : n1)++;

    // Region means must differ by exactly +/- delta at zero noise; the
    // generator persists the anchors so the discs rebuild exactly.
    const int size = static_cast<int>(std::ceil(opts.region_frac * m.n_vertices()));
    const int a1 = std::stoi(m.meta.at("region_anchor_1"));
    const int a2 = std::stoi(m.meta.at("region_anchor_2"));
    const auto r1 = geodesic_disc(m, a1, size);
    const auto r2 = geodesic_disc(m, a2, size, r1);
    double m1 = 0.0, m2 = 0.0;
    for (int v : r1) m1 += (*thickness)[v];
    for (int v : r2) m2 += (*thickness)[v];
    m1 /= r1.size();
    m2 /= r2.size();
    const double contrast = m1 - m2;
    CHECK(std::abs(contrast - (cls == 0 ? opts.delta : -opts.delta)) < 1e-9);
  }
  // Noise-free global means identical across classes.
  CHECK(std::abs(mean0 / n0 - mean1 / n1) < 1e-12);
}

TEST_CASE("two_region_class separates with the closed-form statistic") {
  auto dir = temp_dir("separation");
  DatasetOptions opts;
  opts.noise = 0.0;
  auto manifest =
      gen_labeled_dataset(DatasetTask::two_region_class, 20, {120, 200}, 5, opts, dir);
  // The sign of mean(R1) - mean(R2) classifies perfectly at zero noise; the
  // anchor regions sit around +z/-z, so the field mean over the top cap
  // already separates.
  for (const auto& entry : manifest.entries) {
    SurfaceMesh m = load_mesh(manifest.resolve(entry));
    const auto* thickness = m.field("thickness");
    const int size = static_cast<int>(std::ceil(0.15 * m.n_vertices()));
    const int a1 = std::stoi(m.meta.at("region_anchor_1"));
    auto disc = geodesic_disc(m, a1, size);
    double mr = 0.0;
    for (int v : disc) mr += (*thickness)[v];
    const int predicted = mr > 0 ? 0 : 1;
    CHECK(predicted == static_cast<int>(entry.target.at(0)));
  }
}

TEST_CASE("parcel_size_reg targets are fractions summing to 1") {
  auto dir = temp_dir("parcelreg");
  DatasetOptions opts;
  opts.parcels = 8;
  auto manifest =
      gen_labeled_dataset(DatasetTask::parcel_size_reg, 10, {120, 160}, 3, opts, dir);
  for (const auto& entry : manifest.entries) {
    REQUIRE(entry.target.size() == 8);
    double sum = 0.0;
    for (double t : entry.target) sum += t;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    SurfaceMesh m = load_mesh(manifest.resolve(entry));
    REQUIRE(m.has_parcels());
    // Targets equal per-parcel count fractions.
    std::vector<double> fractions(8, 0.0);
    for (int p : m.parcels) fractions[p] += 1.0;
    for (auto& f : fractions) f /= m.n_vertices();
    for (int p = 0; p < 8; ++p) CHECK(entry.target[p] == doctest::Approx(fractions[p]));
  }
}

TEST_CASE("dataset split follows the floor rule") {
  auto dir = temp_dir("splits");
  DatasetOptions opts;
  auto manifest =
      gen_labeled_dataset(DatasetTask::two_region_class, 13, {120, 140}, 1, opts, dir);
  CHECK(manifest.split_indices("train").size() == 9);   // floor(0.7*13)
  CHECK(manifest.split_indices("val").size() == 1);     // floor(0.1*13)
  CHECK(manifest.split_indices("test").size() == 3);    // remainder
}

TEST_CASE("mesh save/load round trip") {
  SurfaceMesh m = gen_synthetic_mesh(MeshKind::blob, 50, 12);
  auto& a = m.add_field("alpha");
  auto& b = m.add_field("beta");
  auto& c = m.add_field("gamma");
  std::mt19937_64 rng(9);
  std::normal_distribution<double> gauss;
  for (int v = 0; v < m.n_vertices(); ++v) {
    a[v] = gauss(rng);
    b[v] = gauss(rng);
    c[v] = gauss(rng);
  }
  m.parcels.assign(m.n_vertices(), 0);
  for (int v = 0; v < m.n_vertices(); ++v) m.parcels[v] = v % 5;
  m.meta["label"] = "1";
  m.meta["note"] = "round trip";

  auto dir = temp_dir("roundtrip");
  save_mesh(m, dir / "mesh.off");
  SurfaceMesh r = load_mesh(dir / "mesh.off");
  CHECK(r.vertices == m.vertices);
  CHECK(r.faces == m.faces);
  REQUIRE(r.fields.size() == 3);
  // Field order preserved.
  CHECK(r.fields[0].first == "alpha");
  CHECK(r.fields[1].first == "beta");
  CHECK(r.fields[2].first == "gamma");
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.fields[i].second == m.fields[i].second);
  CHECK(r.parcels == m.parcels);
  CHECK(r.meta == m.meta);
}

TEST_CASE("edge mesh (subsampled) round trip") {
  SurfaceMesh m = gen_synthetic_mesh(MeshKind::blob, 200, 1);
  auto sub = subsample_mesh(m, 60, 2);
  auto dir = temp_dir("edgemesh");
  save_mesh(sub, dir / "sub.off");
  SurfaceMesh r = load_mesh(dir / "sub.off");
  CHECK(r.vertices == sub.vertices);
  CHECK(r.rebuilt_edges == sub.rebuilt_edges);
  CHECK(r.faces.empty());
}

TEST_CASE("face index out of range raises ParseError") {
  auto dir = temp_dir("badface");
  std::ofstream out(dir / "bad.off");
  out << "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n";
  out.close();
  CHECK_THROWS_AS(load_mesh(dir / "bad.off"), ParseError);
}

TEST_CASE("malformed header raises ParseError with location") {
  auto dir = temp_dir("badheader");
  std::ofstream out(dir / "bad.off");
  out << "FOO\n";
  out.close();
  try {
    load_mesh(dir / "bad.off");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":1:") != std::string::npos);
  }
}

TEST_CASE("manifest round trip and missing file detection") {
  auto dir = temp_dir("manifest");
  DatasetOptions opts;
  auto manifest =
      gen_labeled_dataset(DatasetTask::two_region_class, 10, {120, 130}, 2, opts, dir);
  auto loaded = load_manifest(dir / "manifest.json");
  REQUIRE(loaded.entries.size() == manifest.entries.size());
  CHECK(loaded.task == "two_region_class");
  CHECK(loaded.field_names == manifest.field_names);
  for (std::size_t i = 0; i < loaded.entries.size(); ++i) {
    CHECK(loaded.entries[i].path == manifest.entries[i].path);
    CHECK(loaded.entries[i].split == manifest.entries[i].split);
    CHECK(loaded.entries[i].target == manifest.entries[i].target);
  }
  fs::remove(dir / manifest.entries[0].path);
  CHECK_THROWS_AS(load_manifest(dir / "manifest.json"), ParseError);
}

TEST_CASE("dataset generation is byte-identical for a fixed seed") {
  auto dir1 = temp_dir("det1");
  auto dir2 = temp_dir("det2");
  DatasetOptions opts;
  gen_labeled_dataset(DatasetTask::two_region_class, 10, {120, 140}, 99, opts, dir1);
  gen_labeled_dataset(DatasetTask::two_region_class, 10, {120, 140}, 99, opts, dir2);
  for (const auto& entry : fs::recursive_directory_iterator(dir1)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir1);
    std::ifstream f1(entry.path(), std::ios::binary);
    std::ifstream f2(dir2 / rel, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
  }
}
