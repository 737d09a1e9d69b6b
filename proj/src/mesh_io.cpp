#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "surfpool/mesh.hpp"

namespace surfpool {

namespace {

[[noreturn]] void parse_fail(const std::filesystem::path& path, int line, const std::string& what) {
  throw ParseError(path.string() + ":" + std::to_string(line) + ": " + what);
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double parse_double(const std::string& tok, const std::filesystem::path& path, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) parse_fail(path, line, "trailing characters in number '" + tok + "'");
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    parse_fail(path, line, "expected a number, got '" + tok + "'");
  }
}

long parse_int(const std::string& tok, const std::filesystem::path& path, int line) {
  long v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    parse_fail(path, line, "expected an integer, got '" + tok + "'");
  return v;
}

std::filesystem::path sidecar_path(const std::filesystem::path& mesh_path) {
  std::filesystem::path p = mesh_path;
  p.replace_extension();
  p += ".fields.tsv";
  return p;
}

}  // namespace

SurfaceMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");

  SurfaceMesh mesh;
  std::string line;
  int lineno = 0;
  auto next_data_line = [&](std::vector<std::string>& toks) {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      if (line[0] == '#') {
        // Metadata comments: "# meta<TAB>key<TAB>value".
        auto parts = split_tabs(line);
        if (parts.size() == 3 && parts[0] == "# meta") mesh.meta[parts[1]] = parts[2];
        continue;
      }
      std::istringstream ss(line);
      toks.clear();
      std::string tok;
      while (ss >> tok) toks.push_back(tok);
      if (!toks.empty()) return true;
    }
    return false;
  };

  std::vector<std::string> toks;
  if (!next_data_line(toks) || toks.size() != 1 || toks[0] != "OFF")
    parse_fail(path, lineno, "expected OFF header");
  if (!next_data_line(toks) || toks.size() != 3) parse_fail(path, lineno, "expected counts 'N F E'");
  const long n = parse_int(toks[0], path, lineno);
  const long nf = parse_int(toks[1], path, lineno);
  const long ne = parse_int(toks[2], path, lineno);
  if (n < 0 || nf < 0 || ne < 0) parse_fail(path, lineno, "negative count");

  mesh.vertices.reserve(n);
  for (long v = 0; v < n; ++v) {
    if (!next_data_line(toks) || toks.size() != 3) parse_fail(path, lineno, "expected 3 coordinates");
    mesh.vertices.push_back({parse_double(toks[0], path, lineno),
                             parse_double(toks[1], path, lineno),
                             parse_double(toks[2], path, lineno)});
  }
  for (long f = 0; f < nf; ++f) {
    if (!next_data_line(toks) || toks.size() != 4 || toks[0] != "3")
      parse_fail(path, lineno, "expected face line '3 i j k'");
    std::array<int, 3> face;
    for (int c = 0; c < 3; ++c) {
      const long idx = parse_int(toks[c + 1], path, lineno);
      if (idx < 0 || idx >= n)
        parse_fail(path, lineno, "face index " + std::to_string(idx) + " out of range [0, " +
                                     std::to_string(n) + ")");
      face[c] = static_cast<int>(idx);
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
      parse_fail(path, lineno, "degenerate face");
    mesh.faces.push_back(face);
  }
  for (long e = 0; e < ne; ++e) {
    if (!next_data_line(toks) || toks.size() != 3 || toks[0] != "2")
      parse_fail(path, lineno, "expected edge line '2 i j'");
    const long i = parse_int(toks[1], path, lineno);
    const long j = parse_int(toks[2], path, lineno);
    if (i < 0 || i >= n || j < 0 || j >= n || i == j) parse_fail(path, lineno, "bad edge indices");
    mesh.rebuilt_edges.emplace_back(static_cast<int>(std::min(i, j)),
                                    static_cast<int>(std::max(i, j)));
  }

  // Field sidecar, when present.
  const auto sc = sidecar_path(path);
  if (std::filesystem::exists(sc)) {
    std::ifstream fin(sc);
    if (!fin) throw ParseError(sc.string() + ": cannot open file");
    std::string header;
    if (!std::getline(fin, header)) parse_fail(sc, 1, "missing header row");
    const auto names = split_tabs(header);
    int parcel_col = -1;
    for (std::size_t c = 0; c < names.size(); ++c) {
      if (names[c] == "parcel") {
        parcel_col = static_cast<int>(c);
        mesh.parcels.assign(n, 0);
      } else {
        mesh.add_field(names[c]);
      }
    }
    // Collect column pointers only after every field exists (add_field may
    // reallocate the field storage).
    std::vector<std::vector<double>*> columns;
    for (std::size_t c = 0; c < names.size(); ++c)
      columns.push_back(names[c] == "parcel" ? nullptr : &mesh.add_field(names[c]));
    for (long v = 0; v < n; ++v) {
      std::string row;
      if (!std::getline(fin, row)) parse_fail(sc, static_cast<int>(v) + 2, "missing data row");
      const auto cells = split_tabs(row);
      if (cells.size() != names.size())
        parse_fail(sc, static_cast<int>(v) + 2,
                   "expected " + std::to_string(names.size()) + " columns, got " +
                       std::to_string(cells.size()));
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (static_cast<int>(c) == parcel_col)
          mesh.parcels[v] = static_cast<int>(parse_int(cells[c], sc, static_cast<int>(v) + 2));
        else
          (*columns[c])[v] = parse_double(cells[c], sc, static_cast<int>(v) + 2);
      }
    }
  }

  mesh.validate();
  return mesh;
}

void save_mesh(const SurfaceMesh& mesh, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("save_mesh: cannot write " + path.string());

  out << "OFF\n";
  for (const auto& [k, v] : mesh.meta) out << "# meta\t" << k << "\t" << v << "\n";
  const bool edge_mesh = mesh.faces.empty() && !mesh.rebuilt_edges.empty();
  out << mesh.n_vertices() << " " << mesh.faces.size() << " "
      << (edge_mesh ? mesh.rebuilt_edges.size() : 0) << "\n";
  for (const auto& v : mesh.vertices)
    out << fmt_double(v[0]) << " " << fmt_double(v[1]) << " " << fmt_double(v[2]) << "\n";
  for (const auto& f : mesh.faces) out << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
  if (edge_mesh)
    for (const auto& [i, j] : mesh.rebuilt_edges) out << "2 " << i << " " << j << "\n";
  out.flush();
  if (!out) throw Error("save_mesh: write failed for " + path.string());

  if (!mesh.fields.empty() || mesh.has_parcels()) {
    std::ofstream fout(sidecar_path(path));
    if (!fout) throw Error("save_mesh: cannot write sidecar for " + path.string());
    bool first = true;
    for (const auto& [name, values] : mesh.fields) {
      fout << (first ? "" : "\t") << name;
      first = false;
    }
    if (mesh.has_parcels()) fout << (first ? "" : "\t") << "parcel";
    fout << "\n";
    for (int v = 0; v < mesh.n_vertices(); ++v) {
      first = true;
      for (const auto& [name, values] : mesh.fields) {
        fout << (first ? "" : "\t") << fmt_double(values[v]);
        first = false;
      }
      if (mesh.has_parcels()) fout << (first ? "" : "\t") << mesh.parcels[v];
      fout << "\n";
    }
    fout.flush();
    if (!fout) throw Error("save_mesh: sidecar write failed for " + path.string());
  }
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }

  DatasetManifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  try {
    m.task = j.value("task", "");
    m.field_names = j.at("field_names").get<std::vector<std::string>>();
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.path = je.at("path").get<std::string>();
      e.split = je.at("split").get<std::string>();
      if (je.at("target").is_array())
        e.target = je.at("target").get<std::vector<double>>();
      else
        e.target = {je.at("target").get<double>()};
      if (e.split != "train" && e.split != "val" && e.split != "test")
        throw ParseError(path.string() + ": unknown split tag '" + e.split + "'");
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  for (const auto& e : m.entries)
    if (!std::filesystem::exists(m.resolve(e)))
      throw ParseError(path.string() + ": referenced mesh does not exist: " + e.path);
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["task"] = manifest.task;
  j["field_names"] = manifest.field_names;
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : manifest.entries) {
    nlohmann::ordered_json je;
    je["path"] = e.path;
    je["split"] = e.split;
    je["target"] = e.target;
    j["entries"].push_back(std::move(je));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("save_manifest: cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace surfpool
