#pragma once
// Triangle surface meshes with named per-vertex fields. Meshes are treated as
// immutable after construction; every operation here is a pure function.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "mstress/errors.hpp"
#include "mstress/geometry.hpp"
#include "mstress/stress.hpp"

namespace mstress {

struct SurfaceMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int32_t, 3>> triangles;
  std::map<std::string, std::vector<double>> scalar_fields;
  std::map<std::string, std::vector<Stress6>> tensor_fields;
  // Connected-component label per vertex, filled by label_components.
  std::vector<int32_t> component_id;

  int32_t num_vertices() const { return int32_t(vertices.size()); }
  int32_t num_triangles() const { return int32_t(triangles.size()); }
};

inline Vec3 triangle_normal_unnormalized(const SurfaceMesh& m,
                                         const std::array<int32_t, 3>& t) {
  Vec3 a = m.vertices[size_t(t[0])];
  Vec3 b = m.vertices[size_t(t[1])];
  Vec3 c = m.vertices[size_t(t[2])];
  return (b - a).cross(c - a);
}

inline void validate_mesh(const SurfaceMesh& m) {
  int32_t n = m.num_vertices();
  for (const auto& t : m.triangles) {
    for (int32_t idx : t)
      if (idx < 0 || idx >= n)
        throw IoError("triangle index " + std::to_string(idx) +
                      " out of range (vertex count " + std::to_string(n) +
                      ")");
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2] ||
        triangle_normal_unnormalized(m, t).norm2() == 0.0)
      throw IoError("degenerate triangle with zero area");
  }
  for (const auto& [name, f] : m.scalar_fields)
    if (f.size() != m.vertices.size())
      throw IoError("scalar field '" + name + "' length " +
                    std::to_string(f.size()) + " != vertex count " +
                    std::to_string(n));
  for (const auto& [name, f] : m.tensor_fields)
    if (f.size() != m.vertices.size())
      throw IoError("tensor field '" + name + "' length " +
                    std::to_string(f.size()) + " != vertex count " +
                    std::to_string(n));
}

namespace detail {
struct UnionFind {
  std::vector<int32_t> parent;
  explicit UnionFind(int32_t n) : parent(size_t(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int32_t find(int32_t x) {
    while (parent[size_t(x)] != x) {
      parent[size_t(x)] = parent[size_t(parent[size_t(x)])];
      x = parent[size_t(x)];
    }
    return x;
  }
  void unite(int32_t a, int32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[size_t(std::max(a, b))] = std::min(a, b);
  }
};
}  // namespace detail

// Labels vertices by connected component, components being the equivalence
// classes of vertices joined through shared triangle edges. Labels are dense,
// start at 0, and are ordered by smallest member vertex index.
inline std::vector<int32_t> label_components(const SurfaceMesh& m) {
  detail::UnionFind uf(m.num_vertices());
  for (const auto& t : m.triangles) {
    uf.unite(t[0], t[1]);
    uf.unite(t[1], t[2]);
  }
  std::vector<int32_t> label(m.vertices.size(), -1);
  int32_t next = 0;
  for (int32_t v = 0; v < m.num_vertices(); ++v) {
    int32_t root = uf.find(v);
    if (label[size_t(root)] < 0) label[size_t(root)] = next++;
    label[size_t(v)] = label[size_t(root)];
  }
  return label;
}

inline int32_t num_components(const SurfaceMesh& m) {
  int32_t mx = -1;
  for (int32_t c : m.component_id) mx = std::max(mx, c);
  return mx + 1;
}

// Unweighted average of incident triangle unit normals, renormalized.
// Winding defines orientation; the caller guarantees consistent winding.
inline std::vector<Vec3> vertex_normals(const SurfaceMesh& m) {
  std::vector<Vec3> acc(m.vertices.size());
  std::vector<int32_t> incident(m.vertices.size(), 0);
  for (const auto& t : m.triangles) {
    Vec3 n = triangle_normal_unnormalized(m, t).normalized();
    for (int32_t idx : t) {
      acc[size_t(idx)] += n;
      incident[size_t(idx)]++;
    }
  }
  std::vector<Vec3> out(m.vertices.size());
  for (size_t v = 0; v < m.vertices.size(); ++v) {
    if (incident[v] == 0)
      throw NumericError("vertex " + std::to_string(v) +
                         " has no incident triangle, normal undefined");
    double len = acc[v].norm();
    if (len <= 1e-12 * double(incident[v]))
      throw NumericError("vertex " + std::to_string(v) +
                         " has a zero-average normal");
    out[v] = acc[v] / len;
  }
  return out;
}

// 1-ring adjacency: for each vertex, the sorted set of vertices sharing a
// triangle edge with it.
inline std::vector<std::vector<int32_t>> one_ring(const SurfaceMesh& m) {
  std::vector<std::vector<int32_t>> ring(m.vertices.size());
  auto add = [&](int32_t a, int32_t b) {
    ring[size_t(a)].push_back(b);
    ring[size_t(b)].push_back(a);
  };
  for (const auto& t : m.triangles) {
    add(t[0], t[1]);
    add(t[1], t[2]);
    add(t[2], t[0]);
  }
  for (auto& r : ring) {
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
  }
  return ring;
}

// Restriction of a mesh to a vertex subset. Keeps a triangle only when all
// three corners are kept; drops fields' values outside the subset. Returns
// the submesh and the original index of each kept vertex.
inline std::pair<SurfaceMesh, std::vector<int32_t>> submesh(
    const SurfaceMesh& m, const std::vector<bool>& keep) {
  SurfaceMesh out;
  std::vector<int32_t> old_index;
  std::vector<int32_t> remap(m.vertices.size(), -1);
  for (int32_t v = 0; v < m.num_vertices(); ++v) {
    if (!keep[size_t(v)]) continue;
    remap[size_t(v)] = int32_t(out.vertices.size());
    out.vertices.push_back(m.vertices[size_t(v)]);
    old_index.push_back(v);
  }
  for (const auto& t : m.triangles) {
    int32_t a = remap[size_t(t[0])];
    int32_t b = remap[size_t(t[1])];
    int32_t c = remap[size_t(t[2])];
    if (a >= 0 && b >= 0 && c >= 0) out.triangles.push_back({a, b, c});
  }
  for (const auto& [name, f] : m.scalar_fields) {
    auto& g = out.scalar_fields[name];
    g.reserve(old_index.size());
    for (int32_t v : old_index) g.push_back(f[size_t(v)]);
  }
  for (const auto& [name, f] : m.tensor_fields) {
    auto& g = out.tensor_fields[name];
    g.reserve(old_index.size());
    for (int32_t v : old_index) g.push_back(f[size_t(v)]);
  }
  out.component_id = label_components(out);
  return {std::move(out), std::move(old_index)};
}

}  // namespace mstress
