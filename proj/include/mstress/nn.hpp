#pragma once
// Weight initialization and the Adam optimizer with a stepped decay schedule.
// Linear layers use the x*W row-vector convention, so W has fan_in rows.

#include <cmath>
#include <vector>

#include "mstress/errors.hpp"
#include "mstress/rng.hpp"
#include "mstress/tensor.hpp"

namespace mstress {

// Uniform on [-b, b] with b = sqrt(6 / ((1 + a^2) * fan_in)); the default
// slope a = sqrt(5) reduces b to 1/sqrt(fan_in).
inline Tensor kaiming_uniform_init(int32_t fan_in, int32_t fan_out, Rng& rng,
                                   double a = 2.2360679774997896) {
  if (fan_in < 1) throw ConfigError("kaiming init needs fan_in >= 1");
  Tensor w(fan_in, fan_out);
  double bound = std::sqrt(6.0 / ((1.0 + a * a) * double(fan_in)));
  for (auto& v : w.data) v = rng.uniform(-bound, bound);
  return w;
}

// Biases drawn uniformly from [0, 1).
inline Tensor uniform_bias_init(int32_t n, Rng& rng) {
  Tensor b(1, n);
  for (auto& v : b.data) v = rng.uniform01();
  return b;
}

// Base rate decayed by 5 percent every 50 epochs.
inline double lr_at_epoch(int64_t epoch, double base = 1e-4) {
  return base * std::pow(0.95, double(epoch / 50));
}

// Adam with bias correction. Moment buffers are created on first step and
// must then keep matching the parameter shapes.
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<Tensor> m, v;

  void step(const std::vector<Tensor*>& params,
            const std::vector<const Tensor*>& grads, double lr) {
    if (params.size() != grads.size())
      throw NumericError("adam: parameter/gradient count mismatch");
    if (m.empty()) {
      for (auto* p : params) {
        m.push_back(Tensor::zeros(p->rows, p->cols));
        v.push_back(Tensor::zeros(p->rows, p->cols));
      }
    }
    if (m.size() != params.size())
      throw NumericError("adam: state/parameter count mismatch");
    ++t;
    double c1 = 1.0 - std::pow(beta1, double(t));
    double c2 = 1.0 - std::pow(beta2, double(t));
    for (size_t p = 0; p < params.size(); ++p) {
      Tensor& par = *params[p];
      const Tensor& g = *grads[p];
      if (!par.same_shape(g) || !par.same_shape(m[p]))
        throw NumericError("adam: shape mismatch at parameter " +
                           std::to_string(p));
      for (size_t i = 0; i < par.data.size(); ++i) {
        double gi = g.data[i];
        if (!std::isfinite(gi))
          throw NumericError("adam: non-finite gradient at parameter " +
                             std::to_string(p));
        m[p].data[i] = beta1 * m[p].data[i] + (1.0 - beta1) * gi;
        v[p].data[i] = beta2 * v[p].data[i] + (1.0 - beta2) * gi * gi;
        double mhat = m[p].data[i] / c1;
        double vhat = v[p].data[i] / c2;
        par.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

}  // namespace mstress
