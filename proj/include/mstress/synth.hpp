#pragma once
// Synthetic porous specimens and their ground-truth stress fields.
//
// The micro-stress oracle is an analytic stand-in for a direct numerical
// solve. Around each spherical void of radius R, at distance rho from the
// center and radial direction u, the macro field sigma is perturbed by
//
//   dS = A * (R/rho)^3 * exp(-((rho-R)/R)^2) * M(u) sigma
//   M(u) sigma = c1*sigma - (1+c1) * [u@t + t@u - (u.t) u@u],  t = sigma u
//
// with A = 1 and c1 = 1. The modulation is symmetric, linear in the load,
// and depends only on position minus center, so the total field (macro plus
// superposed void kernels) is translation-equivariant and load-linear.
// Two structural properties drive the choice of M:
//   * traction cancellation: M(u) sigma u = -t exactly, so on the void
//     surface (rho = R, kernel weight 1) the total traction vanishes and the
//     surface is traction-free, matching the free-boundary condition the
//     online correction step enforces;
//   * tangential amplification: where the radial traction is zero the kernel
//     adds c1 times the in-plane stress, giving a concentration factor of
//     1+c1 at the equator of a void under uniaxial load, and a fully
//     shielded pole. Peak stresses therefore sit on void surfaces.
// The kernel decays fast: at rho = 4R its weight is (1/64)*exp(-9) ~ 2e-6.

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mstress/errors.hpp"
#include "mstress/geometry.hpp"
#include "mstress/mesh.hpp"
#include "mstress/rng.hpp"
#include "mstress/stress.hpp"

namespace mstress {

struct SphereVoid {
  Vec3 center;
  double radius = 0.0;
};

struct SpecimenGeometry {
  Aabb box;
  std::vector<SphereVoid> voids;
  uint64_t seed = 0;
};

struct GenConfig {
  Vec3 box_size{2.0, 2.0, 2.0};
  int void_count = 50;
  double void_radius = 0.08;
  // Minimum gap, in units of R, between void surfaces and between a void
  // surface and the box boundary.
  double clearance = 0.5;
  int max_attempts = 10000;
};

inline SpecimenGeometry sample_specimen(const GenConfig& cfg, uint64_t seed) {
  if (cfg.void_radius <= 0.0 && cfg.void_count > 0)
    throw ConfigError("void radius must be positive");
  SpecimenGeometry spec;
  spec.box = {Vec3{0.0, 0.0, 0.0}, cfg.box_size};
  spec.seed = seed;
  Rng rng = Rng::substream(seed, 0);
  double R = cfg.void_radius;
  double margin = R * (1.0 + cfg.clearance);
  Vec3 lo = spec.box.lo + Vec3{margin, margin, margin};
  Vec3 hi = spec.box.hi - Vec3{margin, margin, margin};
  if (cfg.void_count > 0 && (lo.x >= hi.x || lo.y >= hi.y || lo.z >= hi.z))
    throw ConfigError("box too small for void radius plus clearance");
  int attempts = 0;
  while (int(spec.voids.size()) < cfg.void_count) {
    if (++attempts > cfg.max_attempts)
      throw NumericError(
          "void placement failed: " + std::to_string(spec.voids.size()) +
          " of " + std::to_string(cfg.void_count) + " placed within " +
          std::to_string(cfg.max_attempts) + " attempts");
    Vec3 c{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y),
           rng.uniform(lo.z, hi.z)};
    bool ok = true;
    for (const auto& v : spec.voids)
      if ((v.center - c).norm() < v.radius + R + cfg.clearance * R) {
        ok = false;
        break;
      }
    if (ok) spec.voids.push_back({c, R});
  }
  return spec;
}

// Single-void perturbation. `u` must be the unit radial direction and `g`
// the scalar kernel weight already evaluated.
inline Stress6 void_kernel(const Vec3& u, const Stress6& sigma, double g,
                           double c1 = 1.0) {
  Vec3 t = sigma.traction(u);
  double ut = u.dot(t);
  double uu[3] = {u.x, u.y, u.z};
  double tt[3] = {t.x, t.y, t.z};
  double m[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      m[i][j] = -(1.0 + c1) *
                (uu[i] * tt[j] + tt[i] * uu[j] - ut * uu[i] * uu[j]);
  Stress6 d = sigma * c1;
  d[SXX] += m[0][0];
  d[SYY] += m[1][1];
  d[SZZ] += m[2][2];
  d[SYZ] += m[1][2];
  d[SXZ] += m[0][2];
  d[SXY] += m[0][1];
  return d * g;
}

inline Stress6 oracle_micro_stress(const SpecimenGeometry& spec,
                                   const MacroLoad& load,
                                   const ElasticConstants& el,
                                   const Vec3& position, double amplitude = 1.0,
                                   double c1 = 1.0) {
  Stress6 total = macro_stress(load, position, el);
  for (const auto& v : spec.voids) {
    Vec3 d = position - v.center;
    double rho = d.norm();
    if (rho < v.radius * (1.0 - 1e-9))
      throw NumericError("oracle evaluated strictly inside a void");
    double rel = (rho - v.radius) / v.radius;
    // Beyond ~6 radii the weight underflows any meaningful contribution.
    if (rel > 6.0) continue;
    double g = amplitude * std::pow(v.radius / rho, 3.0) * std::exp(-rel * rel);
    Stress6 sigma_c = macro_stress(load, v.center, el);
    total += void_kernel(d / rho, sigma_c, g, c1);
  }
  return total;
}

// Icosphere with 10*4^n + 2 vertices. Winding is outward (normals away from
// the center); callers meshing voids flip it.
inline SurfaceMesh icosphere(const Vec3& center, double radius,
                             int subdivisions) {
  if (radius <= 0.0) throw ConfigError("icosphere radius must be positive");
  SurfaceMesh m;
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> base = {
      {-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0}, {1, -phi, 0},
      {0, -1, phi}, {0, 1, phi},   {0, -1, -phi}, {0, 1, -phi},
      {phi, 0, -1}, {phi, 0, 1},   {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& v : base) m.vertices.push_back(v.normalized());
  m.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                 {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                 {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                 {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::unordered_map<uint64_t, int32_t> midpoint;
    auto mid = [&](int32_t a, int32_t b) {
      uint64_t key = a < b ? (uint64_t(a) << 32) | uint64_t(b)
                           : (uint64_t(b) << 32) | uint64_t(a);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 p = ((m.vertices[size_t(a)] + m.vertices[size_t(b)]) * 0.5)
                   .normalized();
      int32_t idx = int32_t(m.vertices.size());
      m.vertices.push_back(p);
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int32_t, 3>> next;
    next.reserve(m.triangles.size() * 4);
    for (const auto& t : m.triangles) {
      int32_t ab = mid(t[0], t[1]);
      int32_t bc = mid(t[1], t[2]);
      int32_t ca = mid(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.triangles = std::move(next);
  }
  for (auto& v : m.vertices) v = center + v * radius;
  m.component_id = label_components(m);
  return m;
}

// Welded triangulation of an axis-aligned box surface. Cell counts per axis
// are max(1, round(extent/pitch)); vertices shared by faces, edges, and
// corners appear once. Winding is outward.
inline SurfaceMesh box_surface_mesh(const Aabb& box, double pitch) {
  if (pitch <= 0.0) throw ConfigError("mesh pitch must be positive");
  Vec3 ext = box.hi - box.lo;
  int n[3] = {std::max(1, int(std::lround(ext.x / pitch))),
              std::max(1, int(std::lround(ext.y / pitch)))
                  ,
              std::max(1, int(std::lround(ext.z / pitch)))};
  SurfaceMesh m;
  std::unordered_map<uint64_t, int32_t> grid_vertex;
  auto vertex_at = [&](int i, int j, int k) {
    uint64_t key = (uint64_t(i) << 42) | (uint64_t(j) << 21) | uint64_t(k);
    auto it = grid_vertex.find(key);
    if (it != grid_vertex.end()) return it->second;
    Vec3 p{box.lo.x + ext.x * double(i) / n[0],
           box.lo.y + ext.y * double(j) / n[1],
           box.lo.z + ext.z * double(k) / n[2]};
    int32_t idx = int32_t(m.vertices.size());
    m.vertices.push_back(p);
    grid_vertex.emplace(key, idx);
    return idx;
  };
  // axis = face normal direction; side 0 at lo, 1 at hi. For each face, (a,b)
  // are the two in-plane axes; winding flips with side so normals face out.
  for (int axis = 0; axis < 3; ++axis) {
    int a = (axis + 1) % 3, b = (axis + 2) % 3;
    for (int side = 0; side < 2; ++side) {
      int fixed = side == 0 ? 0 : n[axis];
      for (int i = 0; i < n[a]; ++i)
        for (int j = 0; j < n[b]; ++j) {
          int ijk[3];
          ijk[axis] = fixed;
          auto corner = [&](int di, int dj) {
            ijk[a] = i + di;
            ijk[b] = j + dj;
            return vertex_at(ijk[0], ijk[1], ijk[2]);
          };
          int32_t v00 = corner(0, 0), v10 = corner(1, 0);
          int32_t v11 = corner(1, 1), v01 = corner(0, 1);
          if (side == 1) {
            m.triangles.push_back({v00, v10, v11});
            m.triangles.push_back({v00, v11, v01});
          } else {
            m.triangles.push_back({v00, v11, v10});
            m.triangles.push_back({v00, v01, v11});
          }
        }
    }
  }
  m.component_id = label_components(m);
  return m;
}

// Full specimen surface: the box plus one icosphere per void. Void windings
// are flipped so normals point away from the material, into each cavity.
// The scalar field "micro_indicator" is 1 on void vertices and 0 on the box.
inline SurfaceMesh build_surface_mesh(const SpecimenGeometry& spec,
                                      int subdivisions, double pitch) {
  SurfaceMesh m = box_surface_mesh(spec.box, pitch);
  auto& indicator = m.scalar_fields["micro_indicator"];
  indicator.assign(m.vertices.size(), 0.0);
  for (const auto& v : spec.voids) {
    SurfaceMesh s = icosphere(v.center, v.radius, subdivisions);
    int32_t base = m.num_vertices();
    m.vertices.insert(m.vertices.end(), s.vertices.begin(), s.vertices.end());
    for (auto t : s.triangles)
      m.triangles.push_back({t[0] + base, t[2] + base, t[1] + base});
    indicator.insert(indicator.end(), s.vertices.size(), 1.0);
  }
  m.component_id = label_components(m);
  return m;
}

struct Patch {
  SurfaceMesh mesh;
  std::vector<bool> roi_mask;
  std::vector<Stress6> macro;      // model input field
  std::vector<Stress6> micro;      // oracle target field
  std::vector<double> indicator;   // 1 on void surfaces, 0 elsewhere
  double k = 1.0;                  // normalization scalar, 1 until applied
  Vec3 center;
  double R = 0.0;                  // void radius the window sizes derive from
  uint64_t seed = 0;

  Aabb patch_box() const { return Aabb::cube(center, 18.0 * R); }
  Aabb roi_box() const { return Aabb::cube(center, 8.0 * R); }
  int32_t num_vertices() const { return mesh.num_vertices(); }
};

struct PatchConfig {
  double R = 0.08;
  int count = 1;
  // Region patch cubes must fit inside; defaults to the specimen box.
  Aabb region{{0, 0, 0}, {0, 0, 0}};
  // Training data wants a nonempty ROI (the per-patch target is a max over
  // ROI vertices); the default keeps spec-level extraction permissive.
  bool require_roi_vertices = false;
  int max_attempts = 10000;
};

// Cuts `count` random cubic patches out of a specimen surface mesh and
// evaluates input and target fields at the surviving vertices. A triangle
// belongs to a patch only when all three corners are inside the cube;
// vertices left without any triangle are dropped. Empty candidates are
// rejected and resampled. Deterministic given (seed); patch i draws from
// substream(seed, i+1).
inline std::vector<Patch> extract_patches(const SurfaceMesh& mesh,
                                          const SpecimenGeometry& spec,
                                          const MacroLoad& load,
                                          const ElasticConstants& el,
                                          const PatchConfig& pc,
                                          uint64_t seed) {
  Aabb region = pc.region;
  if (region.lo.x == region.hi.x) region = spec.box;
  double half = 9.0 * pc.R;
  Vec3 lo = region.lo + Vec3{half, half, half};
  Vec3 hi = region.hi - Vec3{half, half, half};
  if (lo.x > hi.x || lo.y > hi.y || lo.z > hi.z)
    throw ConfigError("patch cube (side 18R) does not fit in the region");

  std::vector<Patch> out;
  out.reserve(size_t(pc.count));
  for (int i = 0; i < pc.count; ++i) {
    Rng rng = Rng::substream(seed, uint64_t(i) + 1);
    Patch p;
    bool accepted = false;
    for (int attempt = 0; attempt < pc.max_attempts && !accepted; ++attempt) {
      Vec3 c{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y),
             rng.uniform(lo.z, hi.z)};
      Aabb cube = Aabb::cube(c, 18.0 * pc.R);
      std::vector<bool> in_cube(mesh.vertices.size());
      for (size_t v = 0; v < mesh.vertices.size(); ++v)
        in_cube[v] = cube.contains(mesh.vertices[v]);
      // Keep only vertices used by a fully contained triangle.
      std::vector<bool> keep(mesh.vertices.size(), false);
      for (const auto& t : mesh.triangles)
        if (in_cube[size_t(t[0])] && in_cube[size_t(t[1])] &&
            in_cube[size_t(t[2])])
          for (int32_t idx : t) keep[size_t(idx)] = true;
      auto [sub, old_index] = submesh(mesh, keep);
      if (sub.num_vertices() == 0) continue;
      Aabb roi = Aabb::cube(c, 8.0 * pc.R);
      std::vector<bool> roi_mask(sub.vertices.size());
      int32_t roi_count = 0;
      for (size_t v = 0; v < sub.vertices.size(); ++v) {
        roi_mask[v] = roi.contains(sub.vertices[v]);
        roi_count += roi_mask[v] ? 1 : 0;
      }
      if (pc.require_roi_vertices && roi_count == 0) continue;
      p.mesh = std::move(sub);
      p.roi_mask = std::move(roi_mask);
      p.center = c;
      accepted = true;
    }
    if (!accepted)
      throw NumericError("patch sampling failed after " +
                         std::to_string(pc.max_attempts) + " attempts (" +
                         std::to_string(out.size()) + " of " +
                         std::to_string(pc.count) + " patches placed)");
    p.R = pc.R;
    p.seed = seed;
    p.macro.reserve(p.mesh.vertices.size());
    p.micro.reserve(p.mesh.vertices.size());
    p.indicator.reserve(p.mesh.vertices.size());
    for (size_t v = 0; v < p.mesh.vertices.size(); ++v) {
      const Vec3& x = p.mesh.vertices[v];
      p.macro.push_back(macro_stress(load, x, el));
      p.micro.push_back(oracle_micro_stress(spec, load, el, x));
    }
    if (p.mesh.scalar_fields.count("micro_indicator"))
      p.indicator = p.mesh.scalar_fields.at("micro_indicator");
    else
      p.indicator.assign(p.mesh.vertices.size(), 0.0);
    out.push_back(std::move(p));
  }
  return out;
}

// Scales both stress fields so the largest macro component magnitude is 1.
// Returns the scale k; an all-zero macro field keeps k = 1 and is unchanged.
inline double normalize_patch(Patch& p) {
  double k = 0.0;
  for (const auto& s : p.macro) k = std::max(k, s.max_abs());
  if (k == 0.0) k = 1.0;
  if (k != 1.0) {
    for (auto& s : p.macro) s = s * (1.0 / k);
    for (auto& s : p.micro) s = s * (1.0 / k);
  }
  p.k = k;
  return k;
}

inline void denormalize_patch(Patch& p) {
  if (p.k == 1.0) return;
  for (auto& s : p.macro) s = s * p.k;
  for (auto& s : p.micro) s = s * p.k;
  p.k = 1.0;
}

}  // namespace mstress
