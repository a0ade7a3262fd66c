#pragma once
// Symmetric stress tensors in Voigt-style component order
//   [xx, yy, zz, yz, xz, xy]
// which is the canonical order for every 6-vector in this library: mesh
// fields, graph node features, model outputs, file formats.

#include <array>
#include <cmath>

#include "mstress/errors.hpp"
#include "mstress/geometry.hpp"

namespace mstress {

enum StressIndex { SXX = 0, SYY = 1, SZZ = 2, SYZ = 3, SXZ = 4, SXY = 5 };

struct Stress6 {
  std::array<double, 6> v{};

  double& operator[](int i) { return v[size_t(i)]; }
  double operator[](int i) const { return v[size_t(i)]; }

  Stress6 operator+(const Stress6& o) const {
    Stress6 r;
    for (int i = 0; i < 6; ++i) r.v[i] = v[i] + o.v[i];
    return r;
  }
  Stress6 operator-(const Stress6& o) const {
    Stress6 r;
    for (int i = 0; i < 6; ++i) r.v[i] = v[i] - o.v[i];
    return r;
  }
  Stress6 operator*(double s) const {
    Stress6 r;
    for (int i = 0; i < 6; ++i) r.v[i] = v[i] * s;
    return r;
  }
  Stress6& operator+=(const Stress6& o) {
    for (int i = 0; i < 6; ++i) v[i] += o.v[i];
    return *this;
  }

  double max_abs() const {
    double m = 0.0;
    for (double c : v) m = std::max(m, std::abs(c));
    return m;
  }

  // Traction t = S·n for unit (or any) direction n.
  Vec3 traction(const Vec3& n) const {
    return {v[SXX] * n.x + v[SXY] * n.y + v[SXZ] * n.z,
            v[SXY] * n.x + v[SYY] * n.y + v[SYZ] * n.z,
            v[SXZ] * n.x + v[SYZ] * n.y + v[SZZ] * n.z};
  }
};

inline double mean_stress(const Stress6& s) {
  return (s[SXX] + s[SYY] + s[SZZ]) / 3.0;
}

// Q S Q^T for a 3x3 rotation Q given row-wise.
inline Stress6 rotate_stress(const std::array<std::array<double, 3>, 3>& q,
                             const Stress6& s) {
  double m[3][3] = {{s[SXX], s[SXY], s[SXZ]},
                    {s[SXY], s[SYY], s[SYZ]},
                    {s[SXZ], s[SYZ], s[SZZ]}};
  double qm[3][3] = {};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) qm[i][j] += q[i][k] * m[k][j];
  double out[3][3] = {};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) out[i][j] += qm[i][k] * q[j][k];
  Stress6 r;
  r[SXX] = out[0][0];
  r[SYY] = out[1][1];
  r[SZZ] = out[2][2];
  r[SYZ] = out[1][2];
  r[SXZ] = out[0][2];
  r[SXY] = out[0][1];
  return r;
}

inline double von_mises(const Stress6& s) {
  double dxy = s[SXX] - s[SYY];
  double dyz = s[SYY] - s[SZZ];
  double dzx = s[SZZ] - s[SXX];
  double shear = s[SYZ] * s[SYZ] + s[SXZ] * s[SXZ] + s[SXY] * s[SXY];
  return std::sqrt(0.5 * (dxy * dxy + dyz * dyz + dzx * dzx) + 3.0 * shear);
}

// Ratio of the spherical part to the deviatoric intensity, reduced to
// mean_stress / von_mises. Satisfies triaxiality(s)·von_mises(s) = trace(s)/3.
// Undefined for (near-)hydrostatic states: the deviatoric norm sqrt(2 J2)
// must exceed rel_floor times the largest component magnitude.
inline double triaxiality(const Stress6& s, double rel_floor = 1e-12) {
  double vm = von_mises(s);
  double dev_norm = vm * std::sqrt(2.0 / 3.0);
  if (dev_norm <= rel_floor * s.max_abs() || dev_norm == 0.0)
    throw NumericError("undefined triaxiality: hydrostatic stress state");
  return mean_stress(s) / vm;
}

// Isotropic linear elasticity in Lame form.
struct ElasticConstants {
  double lambda = 0.0;
  double mu = 0.0;

  static ElasticConstants from_young_poisson(double young, double poisson) {
    if (young <= 0.0 || poisson <= -1.0 || poisson >= 0.5)
      throw ConfigError("elastic constants out of range");
    double lambda =
        young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    double mu = young / (2.0 * (1.0 + poisson));
    return {lambda, mu};
  }
};

// Applied load: a uniform macroscopic strain in canonical component order,
// with shear entries as tensor components (eyz, exz, exy), not engineering
// doubles.
struct MacroLoad {
  std::array<double, 6> strain{};
};

// Homogeneous macro stress sigma = lambda*tr(E)*I + 2*mu*E. The field is
// uniform; position is accepted for interface stability with non-uniform
// loads and is unused here.
inline Stress6 macro_stress(const MacroLoad& load, const Vec3& /*position*/,
                            const ElasticConstants& el) {
  const auto& e = load.strain;
  double tr = e[SXX] + e[SYY] + e[SZZ];
  Stress6 s;
  s[SXX] = el.lambda * tr + 2.0 * el.mu * e[SXX];
  s[SYY] = el.lambda * tr + 2.0 * el.mu * e[SYY];
  s[SZZ] = el.lambda * tr + 2.0 * el.mu * e[SZZ];
  s[SYZ] = 2.0 * el.mu * e[SYZ];
  s[SXZ] = 2.0 * el.mu * e[SXZ];
  s[SXY] = 2.0 * el.mu * e[SXY];
  return s;
}

}  // namespace mstress
