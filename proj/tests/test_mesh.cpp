#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <queue>
#include <set>

#include "mstress/mesh.hpp"
#include "mstress/rng.hpp"
#include "mstress/vtk_io.hpp"

using namespace mstress;

namespace {

SurfaceMesh unit_cube() {
  SurfaceMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  m.triangles = {{0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7},
                 {0, 1, 5}, {0, 5, 4}, {2, 3, 7}, {2, 7, 6},
                 {0, 4, 7}, {0, 7, 3}, {1, 2, 6}, {1, 6, 5}};
  m.component_id = label_components(m);
  return m;
}

std::string write_temp(const std::string& text) {
  static int counter = 0;
  auto path = std::filesystem::temp_directory_path() /
              ("mesh_case_" + std::to_string(counter++) + ".vtk");
  std::ofstream(path) << text;
  return path.string();
}

// Breadth-first component labeling, independent of the union-find path.
std::vector<int32_t> bfs_components(const SurfaceMesh& m) {
  auto ring = one_ring(m);
  std::vector<int32_t> label(m.vertices.size(), -1);
  int32_t next = 0;
  for (int32_t s = 0; s < m.num_vertices(); ++s) {
    if (label[size_t(s)] >= 0) continue;
    std::queue<int32_t> q;
    q.push(s);
    label[size_t(s)] = next;
    while (!q.empty()) {
      int32_t v = q.front();
      q.pop();
      for (int32_t w : ring[size_t(v)])
        if (label[size_t(w)] < 0) {
          label[size_t(w)] = next;
          q.push(w);
        }
    }
    ++next;
  }
  return label;
}

std::array<std::array<double, 3>, 3> random_rotation(Rng& rng) {
  Vec3 k = Vec3{rng.normal(), rng.normal(), rng.normal()}.normalized();
  double th = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  double c = std::cos(th), s = std::sin(th);
  std::array<std::array<double, 3>, 3> q{};
  double kk[3] = {k.x, k.y, k.z};
  double eps[3][3][3] = {};
  eps[0][1][2] = eps[1][2][0] = eps[2][0][1] = 1.0;
  eps[0][2][1] = eps[2][1][0] = eps[1][0][2] = -1.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      q[size_t(i)][size_t(j)] =
          c * (i == j ? 1.0 : 0.0) + (1.0 - c) * kk[i] * kk[j];
      for (int l = 0; l < 3; ++l)
        q[size_t(i)][size_t(j)] -= s * eps[i][j][l] * kk[l];
    }
  return q;
}

}  // namespace

TEST_CASE("single triangle file loads") {
  auto path = write_temp(
      "# vtk DataFile Version 3.0\n"
      "one triangle\n"
      "ASCII\n"
      "DATASET POLYDATA\n"
      "POINTS 3 double\n"
      "0 0 0\n1 0 0\n0 1 0\n"
      "POLYGONS 1 4\n"
      "3 0 1 2\n");
  SurfaceMesh m = load_mesh(path);
  CHECK(m.num_vertices() == 3);
  CHECK(m.num_triangles() == 1);
  CHECK(num_components(m) == 1);
}

TEST_CASE("quad cell is rejected with context") {
  auto path = write_temp(
      "# vtk DataFile Version 3.0\nt\nASCII\nDATASET POLYDATA\n"
      "POINTS 4 double\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n"
      "POLYGONS 1 5\n4 0 1 2 3\n");
  CHECK_THROWS_WITH(load_mesh(path),
                    Catch::Matchers::ContainsSubstring("non-triangle cell"));
}

TEST_CASE("field length mismatch is rejected") {
  auto path = write_temp(
      "# vtk DataFile Version 3.0\nt\nASCII\nDATASET POLYDATA\n"
      "POINTS 3 double\n0 0 0\n1 0 0\n0 1 0\n"
      "POLYGONS 1 4\n3 0 1 2\n"
      "POINT_DATA 2\n");
  CHECK_THROWS_WITH(load_mesh(path),
                    Catch::Matchers::ContainsSubstring("POINT_DATA count"));
}

TEST_CASE("asymmetric tensor entries are rejected") {
  auto path = write_temp(
      "# vtk DataFile Version 3.0\nt\nASCII\nDATASET POLYDATA\n"
      "POINTS 3 double\n0 0 0\n1 0 0\n0 1 0\n"
      "POLYGONS 1 4\n3 0 1 2\n"
      "POINT_DATA 3\nTENSORS S double\n"
      "1 0 0\n0 1 0\n0 0 1\n"
      "1 0.5 0\n0.2 1 0\n0 0 1\n"
      "1 0 0\n0 1 0\n0 0 1\n");
  CHECK_THROWS_WITH(load_mesh(path),
                    Catch::Matchers::ContainsSubstring("not symmetric"));
}

TEST_CASE("components match a BFS oracle") {
  // Cube plus two detached triangles far away.
  SurfaceMesh m = unit_cube();
  int32_t base = m.num_vertices();
  for (int c = 0; c < 2; ++c) {
    double off = 10.0 + 3.0 * c;
    m.vertices.push_back({off, 0, 0});
    m.vertices.push_back({off + 1, 0, 0});
    m.vertices.push_back({off, 1, 0});
    m.triangles.push_back({base, base + 1, base + 2});
    base += 3;
  }
  m.component_id = label_components(m);
  CHECK(num_components(m) == 3);
  CHECK(m.component_id == bfs_components(m));
}

TEST_CASE("flat square has constant +z normals") {
  SurfaceMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  auto n = vertex_normals(m);
  for (const auto& v : n) {
    CHECK(v.x == Catch::Approx(0.0).margin(1e-14));
    CHECK(v.y == Catch::Approx(0.0).margin(1e-14));
    CHECK(v.z == Catch::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("normal at a two-face fold bisects the dihedral") {
  // A z=0 square meeting a y=0 square along the x axis.
  SurfaceMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0},
                {0, 1, 0}, {0, 0, 1}, {1, 0, 1}};
  m.triangles = {{0, 1, 2}, {0, 2, 3}, {0, 1, 5}, {0, 5, 4}};
  auto n = vertex_normals(m);
  Vec3 expect = Vec3{0.0, -1.0, 1.0}.normalized();
  CHECK(n[0].dot(expect) == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(n[1].dot(expect) == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("isolated vertex has no normal") {
  SurfaceMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 5, 5}};
  m.triangles = {{0, 1, 2}};
  CHECK_THROWS_AS(vertex_normals(m), NumericError);
}

TEST_CASE("von mises is rotation invariant") {
  Rng rng(17);
  Stress6 s;
  for (int i = 0; i < 6; ++i) s[i] = rng.uniform(-2.0, 2.0);
  double vm = von_mises(s);
  for (int rep = 0; rep < 50; ++rep) {
    auto q = random_rotation(rng);
    CHECK(von_mises(rotate_stress(q, s)) == Catch::Approx(vm).epsilon(1e-10));
  }
}

TEST_CASE("one ring matches brute force adjacency") {
  SurfaceMesh m = unit_cube();
  auto ring = one_ring(m);
  std::vector<std::set<int32_t>> oracle(m.vertices.size());
  for (const auto& t : m.triangles)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if (a != b) oracle[size_t(t[size_t(a)])].insert(t[size_t(b)]);
  for (size_t v = 0; v < m.vertices.size(); ++v)
    CHECK(std::vector<int32_t>(oracle[v].begin(), oracle[v].end()) == ring[v]);

  SurfaceMesh tri;
  tri.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  tri.triangles = {{0, 1, 2}};
  auto r = one_ring(tri);
  CHECK(r[0] == std::vector<int32_t>{1, 2});
}

TEST_CASE("save/load round trip preserves fields exactly") {
  SurfaceMesh m = unit_cube();
  Rng rng(3);
  auto& s_field = m.tensor_fields["S"];
  auto& vm_field = m.scalar_fields["VM"];
  auto& ind = m.scalar_fields["micro_indicator"];
  for (int32_t v = 0; v < m.num_vertices(); ++v) {
    Stress6 s;
    for (int i = 0; i < 6; ++i) s[i] = rng.normal(0.0, 1.7);
    s_field.push_back(s);
    vm_field.push_back(von_mises(s));
    ind.push_back(v % 2);
  }
  auto path = (std::filesystem::temp_directory_path() / "roundtrip.vtk")
                  .string();
  save_mesh(m, path);
  SurfaceMesh r = load_mesh(path);
  REQUIRE(r.num_vertices() == m.num_vertices());
  REQUIRE(r.num_triangles() == m.num_triangles());
  for (int32_t v = 0; v < m.num_vertices(); ++v) {
    CHECK(r.vertices[size_t(v)].x == m.vertices[size_t(v)].x);
    for (int i = 0; i < 6; ++i)
      CHECK(r.tensor_fields.at("S")[size_t(v)][i] == s_field[size_t(v)][i]);
    CHECK(r.scalar_fields.at("VM")[size_t(v)] == vm_field[size_t(v)]);
  }
  CHECK(r.component_id == m.component_id);

  // Deterministic writer: saving the reloaded mesh gives identical bytes.
  auto path2 = (std::filesystem::temp_directory_path() / "roundtrip2.vtk")
                   .string();
  save_mesh(r, path2);
  std::ifstream f1(path), f2(path2);
  std::stringstream b1, b2;
  b1 << f1.rdbuf();
  b2 << f2.rdbuf();
  CHECK(b1.str() == b2.str());
}

TEST_CASE("submesh keeps fully contained triangles and remaps fields") {
  SurfaceMesh m = unit_cube();
  auto& f = m.scalar_fields["VM"];
  for (int32_t v = 0; v < m.num_vertices(); ++v) f.push_back(double(v));
  // Keep the bottom face only (z = 0).
  std::vector<bool> keep(m.vertices.size());
  for (size_t v = 0; v < m.vertices.size(); ++v)
    keep[v] = m.vertices[v].z == 0.0;
  auto [sub, old_index] = submesh(m, keep);
  CHECK(sub.num_vertices() == 4);
  CHECK(sub.num_triangles() == 2);
  for (int32_t v = 0; v < sub.num_vertices(); ++v)
    CHECK(sub.scalar_fields.at("VM")[size_t(v)] ==
          double(old_index[size_t(v)]));
  CHECK(num_components(sub) == 1);
}

TEST_CASE("degenerate triangles fail validation") {
  SurfaceMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  m.triangles = {{0, 1, 2}};  // collinear
  CHECK_THROWS_AS(validate_mesh(m), IoError);
  SurfaceMesh m2;
  m2.vertices = {{0, 0, 0}, {1, 0, 0}};
  m2.triangles = {{0, 1, 1}};  // repeated index
  CHECK_THROWS_AS(validate_mesh(m2), IoError);
  SurfaceMesh m3;
  m3.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  m3.triangles = {{0, 1, 7}};  // out of range
  CHECK_THROWS_AS(validate_mesh(m3), IoError);
}
