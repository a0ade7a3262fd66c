// Online correction of stress-field ensembles toward traction-free surfaces.
// The state stacks every node's six stress components; the observation maps
// a state to per-node boundary tractions S·n, which are linear in the state.
// An Ensemble Kalman update conditions the ensemble on zero (or given)
// traction data, using anomaly matrices only: the J×J covariance is never
// formed, and the update inverse is applied through the N×N Gram matrix of
// observed anomalies, whose rank bounds the ensemble information content.
//
// All randomness (perturbed data, posterior weight draws) derives from fixed
// substreams of the caller's seed, so a correction is reproducible bit for
// bit for a given (ensemble, seed).
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mstress/bayes.hpp"
#include "mstress/errors.hpp"
#include "mstress/gemm.hpp"
#include "mstress/rng.hpp"
#include "mstress/stress.hpp"
#include "mstress/tensor.hpp"

namespace mstress {

// Ensemble of stress states over one mesh. Column i of X is member i; row
// 6j+c is component c of node j in canonical order [xx,yy,zz,yz,xz,xy].
// Observations are taken at obs_nodes only (default: every node), each of
// which must carry a unit outward normal.
struct StressEnsemble {
  int32_t num_nodes = 0;            // J
  Tensor X;                         // [6J, N]
  std::vector<Vec3> normals;        // [J]
  std::vector<int32_t> obs_nodes;   // sorted unique, empty means all nodes
  double noise_std = 0.0;           // traction noise sigma, stress units
  uint64_t seed = 0;

  int32_t members() const { return X.cols; }
  int32_t observed() const {
    return obs_nodes.empty() ? num_nodes : int32_t(obs_nodes.size());
  }

  void validate() const {
    if (num_nodes < 1) throw ConfigError("ensemble: needs at least one node");
    if (X.rows != 6 * num_nodes)
      throw ConfigError("ensemble: state rows must equal 6 x num_nodes");
    if (X.cols < 2) throw ConfigError("ensemble: needs at least two members");
    if (int32_t(normals.size()) != num_nodes)
      throw ConfigError("ensemble: one normal per node required");
    for (const Vec3& n : normals)
      if (std::abs(n.norm() - 1.0) > 1e-12)
        throw ConfigError("ensemble: normals must be unit length");
    int32_t prev = -1;
    for (int32_t o : obs_nodes) {
      if (o <= prev || o >= num_nodes)
        throw ConfigError("ensemble: obs_nodes must be sorted, unique, in range");
      prev = o;
    }
    if (!(noise_std > 0.0) || !std::isfinite(noise_std))
      throw ConfigError("ensemble: noise_std must be positive and finite");
  }
};

// Tractions of one stacked state: node j contributes (S^j n^j) as three
// consecutive entries. Linear in the state.
inline std::vector<double> apply_observation(const double* state,
                                             int32_t num_nodes,
                                             const std::vector<Vec3>& normals) {
  if (int32_t(normals.size()) != num_nodes)
    throw ConfigError("apply_observation: one normal per node required");
  std::vector<double> out(size_t(num_nodes) * 3);
  for (int32_t j = 0; j < num_nodes; ++j) {
    Stress6 s;
    for (int c = 0; c < 6; ++c) s[c] = state[6 * j + c];
    const Vec3 t = s.traction(normals[size_t(j)]);
    out[size_t(3 * j) + 0] = t.x;
    out[size_t(3 * j) + 1] = t.y;
    out[size_t(3 * j) + 2] = t.z;
  }
  return out;
}

namespace detail {

// Observed tractions of every member at the observation nodes: [3*Jobs, N].
inline Tensor observe_ensemble(const StressEnsemble& ens) {
  const int32_t n = ens.members();
  const int32_t jobs = ens.observed();
  Tensor hx(3 * jobs, n);
  for (int32_t o = 0; o < jobs; ++o) {
    const int32_t j = ens.obs_nodes.empty() ? o : ens.obs_nodes[size_t(o)];
    const Vec3& nrm = ens.normals[size_t(j)];
    for (int32_t i = 0; i < n; ++i) {
      Stress6 s;
      for (int c = 0; c < 6; ++c) s[c] = ens.X.at(6 * j + c, i);
      const Vec3 t = s.traction(nrm);
      hx.at(3 * o + 0, i) = t.x;
      hx.at(3 * o + 1, i) = t.y;
      hx.at(3 * o + 2, i) = t.z;
    }
  }
  return hx;
}

// Subtracts each row's mean over columns, turning members into anomalies.
inline Tensor center_rows(const Tensor& x) {
  Tensor a(x.rows, x.cols);
  for (int32_t i = 0; i < x.rows; ++i) {
    const double* xr = x.row(i);
    double mean = 0.0;
    for (int32_t j = 0; j < x.cols; ++j) mean += xr[j];
    mean /= double(x.cols);
    double* ar = a.row(i);
    for (int32_t j = 0; j < x.cols; ++j) ar[j] = xr[j] - mean;
  }
  return a;
}

// Perturbed data matrix: column i is d plus independent N(0, sigma^2)
// entries, drawn row-major from substream(seed, 0). Tests replicate the
// draw by calling this with the same arguments.
inline Tensor perturbed_data(const std::vector<double>& d, int32_t members,
                             double sigma, uint64_t seed) {
  Tensor out(int32_t(d.size()), members);
  Rng rng = Rng::substream(seed, 0);
  for (int32_t r = 0; r < out.rows; ++r)
    for (int32_t i = 0; i < members; ++i)
      out.at(r, i) = d[size_t(r)] + sigma * rng.normal();
  return out;
}

// Eigendecomposition of a small symmetric matrix by cyclic Jacobi
// rotations. `a` is consumed; on return vecs columns hold eigenvectors and
// vals the eigenvalues, in matching (unsorted) order.
inline void jacobi_eigh(Tensor a, Tensor& vecs, std::vector<double>& vals) {
  const int32_t n = a.rows;
  if (a.cols != n) throw NumericError("jacobi_eigh needs a square matrix");
  vecs = Tensor(n, n);
  for (int32_t i = 0; i < n; ++i) vecs.at(i, i) = 1.0;
  double frob2 = 0.0;
  for (double v : a.data) frob2 += v * v;
  const double tol2 = std::max(frob2, 1e-300) * 1e-30;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off2 = 0.0;
    for (int32_t p = 0; p < n; ++p)
      for (int32_t q = p + 1; q < n; ++q) off2 += 2.0 * a.at(p, q) * a.at(p, q);
    if (off2 <= tol2) break;
    for (int32_t p = 0; p < n; ++p)
      for (int32_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (apq == 0.0) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int32_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int32_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (int32_t k = 0; k < n; ++k) {
          const double vkp = vecs.at(k, p), vkq = vecs.at(k, q);
          vecs.at(k, p) = c * vkp - s * vkq;
          vecs.at(k, q) = s * vkp + c * vkq;
        }
      }
  }
  vals.assign(size_t(n), 0.0);
  for (int32_t i = 0; i < n; ++i) vals[size_t(i)] = a.at(i, i);
}

}  // namespace detail

// RMS of the traction magnitude over observation nodes, averaged over
// members: mean_i sqrt(mean_j |S^j_i n^j|^2).
inline double traction_rms(const StressEnsemble& ens) {
  const Tensor hx = detail::observe_ensemble(ens);
  const int32_t jobs = hx.rows / 3;
  double acc = 0.0;
  for (int32_t i = 0; i < hx.cols; ++i) {
    double sum2 = 0.0;
    for (int32_t r = 0; r < hx.rows; ++r) sum2 += hx.at(r, i) * hx.at(r, i);
    acc += std::sqrt(sum2 / double(jobs));
  }
  return acc / double(hx.cols);
}

// Noise level when none is configured: a hundredth of the prior traction
// scale. A traction-free prior carries no scale to infer from.
inline double default_noise_std(const StressEnsemble& prior) {
  const double rms = traction_rms(prior);
  if (rms <= 0.0)
    throw ConfigError(
        "cannot infer a noise level from a zero-traction prior; set one");
  return 1e-2 * rms;
}

// One Ensemble Kalman update toward traction data d (default zero, the
// homogeneous Neumann condition). With A the state anomalies and HA the
// observed anomalies,
//   X* = X + (1/(N-1)) A (HA)^T P^{-1} (D - HX),
//   P  = (1/(N-1)) HA (HA)^T + sigma^2 I,
// and P^{-1} is applied through the N x N Gram matrix
//   W  = (1/(N-1)) (HA)^T (HA) + sigma^2 I
// via P^{-1}R = (R - (1/(N-1)) HA W^{-1} (HA)^T R) / sigma^2, which never
// builds a matrix larger than max(6J x N, N x N). Deterministic given the
// ensemble seed; the posterior keeps the prior's metadata.
inline StressEnsemble enkf_update(const StressEnsemble& prior,
                                  const std::vector<double>& d = {}) {
  prior.validate();
  const int32_t n = prior.members();
  const int32_t rows_obs = 3 * prior.observed();
  std::vector<double> target = d;
  if (target.empty()) target.assign(size_t(rows_obs), 0.0);
  if (int32_t(target.size()) != rows_obs)
    throw ConfigError("enkf_update: data length must be 3 x observed nodes");

  const double sig = prior.noise_std;
  const Tensor hx = detail::observe_ensemble(prior);
  const Tensor a = detail::center_rows(prior.X);
  const Tensor ha = detail::center_rows(hx);
  const double inv_nm1 = 1.0 / double(n - 1);

  // W = (HA)^T (HA) / (N-1) + sigma^2 I; eigenvalues are sigma^2 plus the
  // nonnegative reduced covariance spectrum.
  Tensor w(n, n);
  gemm_tn(n, rows_obs, n, ha.data.data(), ha.data.data(), w.data.data());
  for (double& v : w.data) v *= inv_nm1;
  for (int32_t i = 0; i < n; ++i) w.at(i, i) += sig * sig;

  Tensor vecs;
  std::vector<double> vals;
  detail::jacobi_eigh(w, vecs, vals);
  double vmax = 0.0, vmin = std::numeric_limits<double>::infinity();
  for (double v : vals) {
    vmax = std::max(vmax, v);
    vmin = std::min(vmin, v);
  }
  const double cond = vmax / vmin;
  if (!(vmin > 0.0) || cond > 1e14)
    throw NumericError(
        "enkf update is numerically singular: condition estimate " +
        std::to_string(cond) + "; raise noise_std");

  // R = D - HX with perturbed data columns.
  Tensor r = detail::perturbed_data(target, n, sig, prior.seed);
  for (size_t i = 0; i < r.data.size(); ++i) r.data[i] -= hx.data[i];

  // Y = P^{-1} R through W^{-1} = V diag(1/vals) V^T.
  Tensor t1(n, n);
  gemm_tn(n, rows_obs, n, ha.data.data(), r.data.data(), t1.data.data());
  Tensor t2(n, n);
  gemm_tn(n, n, n, vecs.data.data(), t1.data.data(), t2.data.data());
  for (int32_t i = 0; i < n; ++i) {
    double* row = t2.row(i);
    const double inv = 1.0 / vals[size_t(i)];
    for (int32_t j = 0; j < n; ++j) row[j] *= inv;
  }
  Tensor t3(n, n);
  gemm_nn(n, n, n, vecs.data.data(), t2.data.data(), t3.data.data());
  Tensor y = r;
  Tensor hat3(rows_obs, n);
  gemm_nn(rows_obs, n, n, ha.data.data(), t3.data.data(), hat3.data.data());
  const double inv_sig2 = 1.0 / (sig * sig);
  for (size_t i = 0; i < y.data.size(); ++i)
    y.data[i] = (y.data[i] - inv_nm1 * hat3.data[i]) * inv_sig2;

  // X* = X + (1/(N-1)) A (HA)^T Y.
  Tensor k(n, n);
  gemm_tn(n, rows_obs, n, ha.data.data(), y.data.data(), k.data.data());
  StressEnsemble post = prior;
  Tensor delta(prior.X.rows, n);
  gemm_nn(prior.X.rows, n, n, a.data.data(), k.data.data(),
          delta.data.data());
  for (size_t i = 0; i < post.X.data.size(); ++i)
    post.X.data[i] += inv_nm1 * delta.data[i];
  return post;
}

// Per-node ensemble mean as a [J, 6] field.
inline Tensor ensemble_mean(const StressEnsemble& ens) {
  Tensor mean(ens.num_nodes, 6);
  for (int32_t j = 0; j < ens.num_nodes; ++j)
    for (int c = 0; c < 6; ++c) {
      double acc = 0.0;
      for (int32_t i = 0; i < ens.X.cols; ++i) acc += ens.X.at(6 * j + c, i);
      mean.at(j, c) = acc / double(ens.X.cols);
    }
  return mean;
}

struct CorrectionResult {
  StressEnsemble prior;
  StressEnsemble posterior;
  Tensor prior_mean;       // [J, 6], denormalized
  Tensor corrected_mean;   // [J, 6], denormalized
  double prior_traction_rms = 0.0;
  double posterior_traction_rms = 0.0;
};

// Draws n posterior predictive fields, stacks them into a prior ensemble,
// and conditions it on zero traction at the observation nodes. noise_std
// <= 0 selects the default scale-relative level. Weight draws come from
// substream(seed, 1); the data perturbation inside the update uses
// substream(seed, 0). Per the mean-only convention, callers report the
// corrected mean and keep the prior spread as the uncertainty band.
inline CorrectionResult correct_prediction(VariationalParams& vp,
                                           const GraphTensors& gt,
                                           const std::vector<Vec3>& normals,
                                           const std::vector<int32_t>& obs_nodes,
                                           int32_t n, double noise_std,
                                           uint64_t seed) {
  if (n < 2) throw ConfigError("correction needs an ensemble of at least 2");
  Rng draw_rng = Rng::substream(seed, 1);
  const std::vector<Tensor> fields = predict_samples(vp, gt, n, draw_rng);

  StressEnsemble prior;
  prior.num_nodes = gt.num_nodes;
  prior.X = Tensor(6 * gt.num_nodes, n);
  for (int32_t i = 0; i < n; ++i) {
    const Tensor& f = fields[size_t(i)];
    for (int32_t j = 0; j < gt.num_nodes; ++j)
      for (int c = 0; c < 6; ++c) prior.X.at(6 * j + c, i) = f.at(j, c);
  }
  prior.normals = normals;
  prior.obs_nodes = obs_nodes;
  prior.seed = seed;
  prior.noise_std = noise_std > 0.0 ? noise_std : default_noise_std(prior);

  CorrectionResult res;
  res.prior_traction_rms = traction_rms(prior);
  res.posterior = enkf_update(prior);
  res.posterior_traction_rms = traction_rms(res.posterior);
  res.prior_mean = ensemble_mean(prior);
  res.corrected_mean = ensemble_mean(res.posterior);
  res.prior = std::move(prior);
  return res;
}

}  // namespace mstress
