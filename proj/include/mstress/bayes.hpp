// Variational Bayesian layer over the graph network. Every weight gets an
// independent Gaussian posterior (mean plus raw spread through softplus);
// all weights inside one parameter tensor share a learnable Gaussian prior.
// Training minimizes the ELBO: a Monte Carlo squared-error likelihood term
// from reparametrized weight samples plus the closed-form KL between the
// diagonal posterior and the shared prior, scaled by a minibatch weight.
// Prediction draws weight samples and returns stress fields denormalized
// by the patch scale; credible intervals are empirical quantile bands.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mstress/autodiff.hpp"
#include "mstress/errors.hpp"
#include "mstress/model.hpp"
#include "mstress/nn.hpp"
#include "mstress/rng.hpp"
#include "mstress/tensor.hpp"

namespace mstress {

struct BayesConfig {
  ModelConfig model;
  // Posterior spreads start at softplus(init_rho); small relative to the
  // Kaiming means so early training behaves like the deterministic net.
  double init_rho = -5.0;
  double prior_mean0 = 0.0;
  // Initial prior standard deviation (stored as raw rho internally).
  double prior_sigma0 = 0.1;
  bool learn_prior = true;

  void validate() const {
    model.validate();
    if (!(prior_sigma0 > 0.0) || !std::isfinite(prior_sigma0))
      throw ConfigError("bayes: prior_sigma0 must be positive and finite");
    if (!std::isfinite(init_rho) || !std::isfinite(prior_mean0))
      throw ConfigError("bayes: initial variational values must be finite");
  }
};

inline double softplus_scalar(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

// Inverse of softplus, used to seed raw spreads from a target sigma.
inline double inv_softplus(double y) {
  if (!(y > 0.0)) throw ConfigError("inv_softplus needs a positive value");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

struct VariationalParams {
  BayesConfig config;
  ModelParams mu;
  ModelParams rho;
  // One prior (mean, raw spread) column per parameter tensor, in the
  // canonical tensor order of the underlying model.
  Tensor prior_mean;
  Tensor prior_rho;

  static VariationalParams make(const BayesConfig& cfg) {
    cfg.validate();
    VariationalParams vp;
    vp.config = cfg;
    vp.mu = ModelParams::make(cfg.model);
    vp.rho = ModelParams::make(cfg.model);
    int32_t layers = 0;
    vp.mu.for_each_tensor([&](const std::string&, Tensor&) { ++layers; });
    vp.prior_mean = Tensor(1, layers);
    vp.prior_rho = Tensor(1, layers);
    return vp;
  }

  void init(Rng& rng) {
    mu.init(rng);
    rho.for_each_tensor(
        [&](const std::string&, Tensor& t) { t.fill(config.init_rho); });
    prior_mean.fill(config.prior_mean0);
    prior_rho.fill(inv_softplus(config.prior_sigma0));
  }

  // Canonical order: every posterior mean, every posterior spread, then the
  // two prior rows. Optimizer state and checkpoints follow this order.
  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    mu.for_each_tensor([&](const std::string& name, Tensor& t) {
      out.emplace_back("mu." + name, &t);
    });
    rho.for_each_tensor([&](const std::string& name, Tensor& t) {
      out.emplace_back("rho." + name, &t);
    });
    out.emplace_back("prior.mean", &prior_mean);
    out.emplace_back("prior.rho", &prior_rho);
    return out;
  }

  int64_t scalar_count() {
    return mu.scalar_count() + rho.scalar_count() + prior_mean.size() +
           prior_rho.size();
  }
};

// Draws one concrete weight set from the posterior. Used for prediction;
// training samples on the tape instead so gradients reach (mu, rho).
inline ModelParams sample_weights(VariationalParams& vp, Rng& rng) {
  ModelParams w = ModelParams::make(vp.config.model);
  auto wn = w.named_tensors();
  auto mn = vp.mu.named_tensors();
  auto rn = vp.rho.named_tensors();
  for (size_t i = 0; i < wn.size(); ++i) {
    Tensor& out = *wn[i].second;
    const Tensor& m = *mn[i].second;
    const Tensor& r = *rn[i].second;
    for (size_t j = 0; j < out.data.size(); ++j)
      out.data[j] = m.data[j] + softplus_scalar(r.data[j]) * rng.normal();
  }
  return w;
}

// Posterior means as a deterministic weight set (the sigma -> 0 limit).
inline ModelParams mean_weights(VariationalParams& vp) {
  ModelParams w = ModelParams::make(vp.config.model);
  auto wn = w.named_tensors();
  auto mn = vp.mu.named_tensors();
  for (size_t i = 0; i < wn.size(); ++i) wn[i].second->data = mn[i].second->data;
  return w;
}

struct ElboSlots {
  // Input slots for every trainable tensor, in named_tensors order. The
  // prior rows are always present; step() skips them when the prior is
  // frozen.
  std::vector<int32_t> flat;
  int32_t kl = -1;
  int32_t nll = -1;
  int32_t elbo = -1;
};

namespace detail {

// Rebuilds the structured slot view from a flat per-tensor slot list that
// follows the canonical tensor order of ModelParams.
inline ParamSlots slots_from_structure(ModelParams& shape,
                                       const std::vector<int32_t>& flat) {
  ParamSlots out;
  size_t next = 0;
  auto take_mlp = [&](const Mlp& m) {
    MlpSlots s;
    for (size_t l = 0; l < m.w.size(); ++l) {
      s.w.push_back(flat[next++]);
      s.b.push_back(flat[next++]);
    }
    if (m.normalized) {
      s.gain = flat[next++];
      s.shift = flat[next++];
    }
    return s;
  };
  out.node_encoder = take_mlp(shape.node_encoder);
  for (const auto& m : shape.edge_encoders) out.edge_encoders.push_back(take_mlp(m));
  for (const auto& blk : shape.blocks) {
    ParamSlots::Block b;
    for (const auto& m : blk.edge) b.edge.push_back(take_mlp(m));
    b.node = take_mlp(blk.node);
    out.blocks.push_back(std::move(b));
  }
  out.decoder = take_mlp(shape.decoder);
  out.flat = flat;
  return out;
}

}  // namespace detail

// Records the ELBO for one graph on the tape. The KL term is exact for
// diagonal Gaussians against the per-tensor shared prior; the likelihood
// term averages n_samples reparametrized forward passes of the plain MSE.
inline ElboSlots elbo_on_tape(Tape& tape, const GraphTensors& gt,
                              VariationalParams& vp, int32_t n_samples,
                              double kl_weight, bool train, Rng& rng) {
  if (n_samples < 1) throw ConfigError("elbo needs at least one sample");
  if (!(kl_weight >= 0.0) || !std::isfinite(kl_weight))
    throw ConfigError("elbo: kl_weight must be finite and non-negative");
  ElboSlots out;
  auto mu_named = vp.mu.named_tensors();
  auto rho_named = vp.rho.named_tensors();
  const size_t layers = mu_named.size();

  std::vector<int32_t> mu_slots(layers), rho_slots(layers), sigma_slots(layers);
  for (size_t i = 0; i < layers; ++i) {
    mu_slots[i] = tape.input(*mu_named[i].second);
    rho_slots[i] = tape.input(*rho_named[i].second);
    sigma_slots[i] = tape.softplus(rho_slots[i]);
  }
  int32_t pm_all = tape.input(vp.prior_mean);
  int32_t pr_all = tape.input(vp.prior_rho);

  // KL(q || p) summed over all weights:
  //   sum_i [ n_i log sp_i - sum log sq + (sum sq^2 + sum (mu - pm_i)^2)
  //           / (2 sp_i^2) ] - n_total / 2.
  int32_t kl = -1;
  double const_half = 0.0;
  for (size_t i = 0; i < layers; ++i) {
    const double n = double(mu_named[i].second->size());
    const_half += 0.5 * n;
    int32_t pm = tape.slice_cols(pm_all, int32_t(i), int32_t(i) + 1);
    int32_t pr = tape.slice_cols(pr_all, int32_t(i), int32_t(i) + 1);
    int32_t sp = tape.softplus(pr);
    int32_t log_sp = tape.scale(tape.log(sp), n);
    int32_t log_sq = tape.sum_all(tape.log(sigma_slots[i]));
    int32_t sq2 = tape.sum_all(tape.mul(sigma_slots[i], sigma_slots[i]));
    int32_t diff = tape.sub(mu_slots[i], pm);
    int32_t dev2 = tape.sum_all(tape.mul(diff, diff));
    int32_t quad = tape.div(tape.add(sq2, dev2),
                            tape.scale(tape.mul(sp, sp), 2.0));
    int32_t kl_i = tape.add(tape.sub(log_sp, log_sq), quad);
    kl = (kl < 0) ? kl_i : tape.add(kl, kl_i);
  }
  Tensor half(1, 1);
  half.data[0] = const_half;
  kl = tape.sub(kl, tape.input(half));
  out.kl = kl;

  // Likelihood: each sample draws fresh unit normals, composes weights on
  // the tape, and runs the shared forward pass.
  int32_t nll = -1;
  for (int32_t s = 0; s < n_samples; ++s) {
    std::vector<int32_t> w_slots(layers);
    for (size_t i = 0; i < layers; ++i) {
      Tensor eps(mu_named[i].second->rows, mu_named[i].second->cols);
      for (double& v : eps.data) v = rng.normal();
      int32_t e = tape.input(eps);
      w_slots[i] = tape.add(mu_slots[i], tape.mul(sigma_slots[i], e));
    }
    ParamSlots ps = detail::slots_from_structure(vp.mu, w_slots);
    int32_t pred = forward_on_tape(tape, gt, vp.mu, ps, train, rng);
    int32_t mse = loss_on_tape(tape, gt, pred, vp.config.model.loss_on_roi);
    nll = (nll < 0) ? mse : tape.add(nll, mse);
  }
  if (n_samples > 1) nll = tape.scale(nll, 1.0 / double(n_samples));
  out.nll = nll;
  out.elbo = tape.add(nll, tape.scale(kl, kl_weight));

  out.flat = mu_slots;
  out.flat.insert(out.flat.end(), rho_slots.begin(), rho_slots.end());
  out.flat.push_back(pm_all);
  out.flat.push_back(pr_all);
  return out;
}

// Convenience evaluation without gradient use; returns (elbo, nll, kl).
struct ElboValue {
  double elbo = 0.0;
  double nll = 0.0;
  double kl = 0.0;
};

inline ElboValue elbo_loss(const GraphTensors& gt, VariationalParams& vp,
                           int32_t n_samples, double kl_weight, Rng& rng) {
  Tape tape;
  ElboSlots slots = elbo_on_tape(tape, gt, vp, n_samples, kl_weight, false, rng);
  ElboValue v;
  v.elbo = tape.value(slots.elbo).data[0];
  v.nll = tape.value(slots.nll).data[0];
  v.kl = tape.value(slots.kl).data[0];
  return v;
}

// Draws n posterior predictive stress fields for one graph. Rows follow the
// graph's node order; values are denormalized by the patch scale k.
inline std::vector<Tensor> predict_samples(VariationalParams& vp,
                                           const GraphTensors& gt, int32_t n,
                                           Rng& rng) {
  if (n < 1) throw ConfigError("predict_samples needs n >= 1");
  std::vector<Tensor> out;
  out.reserve(size_t(n));
  for (int32_t s = 0; s < n; ++s) {
    ModelParams w = sample_weights(vp, rng);
    Tensor pred = predict(w, gt);
    for (double& v : pred.data) v *= gt.k;
    out.push_back(std::move(pred));
  }
  return out;
}

// Empirical quantile with the nearest-rank convention: the q-quantile of n
// ascending samples is the ceil(q * n)-th smallest. For samples {1..100}
// at level 0.95 this yields the band [3, 98].
inline double quantile_nearest_rank(std::vector<double> xs, double q) {
  if (xs.empty()) throw ConfigError("quantile of an empty sample set");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile level outside [0,1]");
  std::sort(xs.begin(), xs.end());
  double r = std::ceil(q * double(xs.size()));
  int64_t idx = std::clamp(int64_t(r), int64_t(1), int64_t(xs.size()));
  return xs[size_t(idx - 1)];
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

inline Interval credible_interval(const std::vector<double>& samples,
                                  double level = 0.95) {
  if (samples.size() < 2)
    throw ConfigError("credible interval needs at least two samples");
  if (!(level > 0.0 && level < 1.0))
    throw ConfigError("credible level must lie in (0,1)");
  Interval ci;
  ci.lo = quantile_nearest_rank(samples, (1.0 - level) / 2.0);
  ci.hi = quantile_nearest_rank(samples, 1.0 - (1.0 - level) / 2.0);
  return ci;
}

// Per-node credible intervals of a scalar reduction of the stress rows.
// `scalar` maps one 6-component row to the tracked quantity.
inline std::vector<Interval> credible_intervals_per_node(
    const std::vector<Tensor>& fields,
    const std::function<double(const double*)>& scalar, double level = 0.95) {
  if (fields.empty()) throw ConfigError("credible intervals need samples");
  const int32_t nodes = fields.front().rows;
  std::vector<Interval> out;
  out.resize(size_t(nodes));
  std::vector<double> buf(fields.size());
  for (int32_t i = 0; i < nodes; ++i) {
    for (size_t s = 0; s < fields.size(); ++s)
      buf[s] = scalar(&fields[s].data[size_t(i) * 6]);
    out[size_t(i)] = credible_interval(buf, level);
  }
  return out;
}

struct BayesOptions {
  int64_t epochs = 1;
  int32_t batch_size = 2;
  double base_lr = 1e-4;
  int32_t n_samples = 1;
  // Negative means automatic: 1 / number of batches per epoch.
  double kl_weight = -1.0;
  std::string checkpoint_path;
  int64_t checkpoint_every = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("bayes training needs epochs >= 1");
    if (batch_size < 1) throw ConfigError("bayes training needs batch_size >= 1");
    if (!(base_lr > 0.0)) throw ConfigError("bayes training needs a positive lr");
    if (n_samples < 1) throw ConfigError("bayes training needs n_samples >= 1");
    if (checkpoint_every < 0)
      throw ConfigError("checkpoint interval cannot be negative");
  }
};

struct BayesHistory {
  std::vector<double> train_elbo;
  std::vector<double> train_nll;
  std::vector<double> train_kl;
  std::vector<double> test_mse;
};

struct BayesTrainer {
  VariationalParams vp;
  Adam opt;
  Rng rng;
  int64_t epoch = 0;
  BayesHistory history;
};

inline BayesTrainer make_bayes_trainer(const BayesConfig& cfg, uint64_t seed) {
  cfg.validate();
  BayesTrainer tr;
  tr.vp = VariationalParams::make(cfg);
  Rng init_rng = Rng::substream(seed, 0);
  tr.vp.init(init_rng);
  tr.rng = Rng::substream(seed, 1);
  return tr;
}

inline void save_bayes_checkpoint(const std::string& path, BayesTrainer& tr);

// One ELBO descent epoch over shuffled batches. Gradients are averaged per
// batch; the prior row tensors receive steps only when the prior is
// learnable.
inline void train_bayes_epochs(
    BayesTrainer& tr, std::vector<GraphTensors>& train_set,
    const std::vector<GraphTensors>* test_set, const BayesOptions& opts,
    const std::function<void(int64_t, const BayesTrainer&)>& callback = {}) {
  opts.validate();
  if (train_set.empty()) throw ConfigError("bayes training set is empty");
  auto named = tr.vp.named_tensors();
  std::vector<Tensor*> param_ptrs;
  for (auto& [name, t] : named) param_ptrs.push_back(t);
  const size_t prior_at = named.size() - 2;

  const int64_t num_batches =
      int64_t((train_set.size() + size_t(opts.batch_size) - 1) /
              size_t(opts.batch_size));
  const double kl_w = opts.kl_weight >= 0.0 ? opts.kl_weight
                                            : 1.0 / double(num_batches);

  std::vector<int32_t> order(train_set.size());
  std::vector<Tensor> grad_acc;
  for (Tensor* t : param_ptrs) grad_acc.emplace_back(t->rows, t->cols);
  Tape tape;

  const int64_t last_epoch = tr.epoch + opts.epochs;
  while (tr.epoch < last_epoch) {
    // Identity before every shuffle so the visit order is a function of
    // the RNG state alone, not of how training was segmented into calls.
    for (size_t i = 0; i < order.size(); ++i) order[i] = int32_t(i);
    tr.rng.shuffle(order);
    const double lr = lr_at_epoch(tr.epoch, opts.base_lr);
    double elbo_sum = 0.0, nll_sum = 0.0, kl_sum = 0.0;
    for (size_t start = 0; start < order.size();
         start += size_t(opts.batch_size)) {
      const size_t stop =
          std::min(order.size(), start + size_t(opts.batch_size));
      for (auto& g : grad_acc) g.fill(0.0);
      for (size_t bi = start; bi < stop; ++bi) {
        tape.reset();
        ElboSlots slots = elbo_on_tape(tape, train_set[size_t(order[bi])],
                                       tr.vp, opts.n_samples, kl_w, true,
                                       tr.rng);
        const double elbo = tape.value(slots.elbo).data[0];
        if (!std::isfinite(elbo))
          throw NumericError("bayes training diverged: non-finite loss");
        elbo_sum += elbo;
        nll_sum += tape.value(slots.nll).data[0];
        kl_sum += tape.value(slots.kl).data[0];
        tape.backward(slots.elbo);
        for (size_t p = 0; p < param_ptrs.size(); ++p) {
          const Tensor& g = tape.grad(slots.flat[p]);
          for (size_t j = 0; j < g.data.size(); ++j)
            grad_acc[p].data[j] += g.data[j];
        }
      }
      const double inv = 1.0 / double(stop - start);
      for (auto& g : grad_acc)
        for (double& v : g.data) v *= inv;
      if (!tr.vp.config.learn_prior) {
        grad_acc[prior_at].fill(0.0);
        grad_acc[prior_at + 1].fill(0.0);
      }
      std::vector<const Tensor*> grad_ptrs;
      for (auto& g : grad_acc) grad_ptrs.push_back(&g);
      tr.opt.step(param_ptrs, grad_ptrs, lr);
    }
    tr.history.train_elbo.push_back(elbo_sum / double(train_set.size()));
    tr.history.train_nll.push_back(nll_sum / double(train_set.size()));
    tr.history.train_kl.push_back(kl_sum / double(train_set.size()));
    if (test_set && !test_set->empty()) {
      // Test error uses the posterior mean weights; it tracks fit quality
      // without Monte Carlo noise.
      ModelParams w = mean_weights(tr.vp);
      double sum = 0.0;
      for (const auto& gt : *test_set) sum += eval_loss(w, gt);
      tr.history.test_mse.push_back(sum / double(test_set->size()));
    }
    ++tr.epoch;
    if (!opts.checkpoint_path.empty() && opts.checkpoint_every > 0 &&
        tr.epoch % opts.checkpoint_every == 0 && tr.epoch != last_epoch)
      save_bayes_checkpoint(opts.checkpoint_path, tr);
    if (callback) callback(tr.epoch - 1, tr);
  }
  if (!opts.checkpoint_path.empty()) save_bayes_checkpoint(opts.checkpoint_path, tr);
}

// Checkpoint layout "MSBK" version 1: bayes config, named tensors in
// canonical order, Adam state, RNG state, epoch, history rows. Written to
// a temp file then renamed so partial writes never clobber a good file.
inline void save_bayes_checkpoint(const std::string& path, BayesTrainer& tr) {
  namespace fs = std::filesystem;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + tmp);
    detail::write_bytes(os, "MSBK", 4);
    detail::write_pod(os, uint32_t(1));
    const BayesConfig& c = tr.vp.config;
    detail::write_pod(os, c.model.node_in);
    detail::write_pod(os, c.model.edge_in);
    detail::write_pod(os, c.model.target_dim);
    detail::write_pod(os, c.model.latent);
    detail::write_pod(os, c.model.gn_blocks);
    detail::write_pod(os, c.model.hidden_layers);
    detail::write_pod(os, c.model.dropout);
    detail::write_pod(os, uint8_t(c.model.dual_mode ? 1 : 0));
    detail::write_pod(os, c.model.geodesic_fraction);
    detail::write_pod(os, uint8_t(c.model.loss_on_roi ? 1 : 0));
    detail::write_pod(os, c.model.edge_scale);
    detail::write_pod(os, c.init_rho);
    detail::write_pod(os, c.prior_mean0);
    detail::write_pod(os, c.prior_sigma0);
    detail::write_pod(os, uint8_t(c.learn_prior ? 1 : 0));
    auto named = tr.vp.named_tensors();
    detail::write_pod(os, uint32_t(named.size()));
    for (auto& [name, t] : named) {
      detail::write_string(os, name);
      detail::write_tensor(os, *t);
    }
    detail::write_pod(os, tr.opt.t);
    detail::write_pod(os, uint32_t(tr.opt.m.size()));
    for (size_t i = 0; i < tr.opt.m.size(); ++i) {
      detail::write_tensor(os, tr.opt.m[i]);
      detail::write_tensor(os, tr.opt.v[i]);
    }
    const auto state = tr.rng.state();
    for (uint64_t w : state) detail::write_pod(os, w);
    detail::write_pod(os, tr.epoch);
    auto write_row = [&](const std::vector<double>& row) {
      detail::write_pod(os, uint32_t(row.size()));
      for (double v : row) detail::write_pod(os, v);
    };
    write_row(tr.history.train_elbo);
    write_row(tr.history.train_nll);
    write_row(tr.history.train_kl);
    write_row(tr.history.test_mse);
    if (!os) throw IoError("short write while saving checkpoint: " + tmp);
  }
  fs::rename(tmp, path);
}

inline BayesTrainer load_bayes_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  detail::read_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, "MSBK", 4) != 0)
    throw IoError("bad magic: not a bayesian checkpoint file");
  auto version = detail::read_pod<uint32_t>(is, "version");
  if (version != 1) throw IoError("unsupported checkpoint version");
  BayesConfig c;
  c.model.node_in = detail::read_pod<int32_t>(is, "config");
  c.model.edge_in = detail::read_pod<int32_t>(is, "config");
  c.model.target_dim = detail::read_pod<int32_t>(is, "config");
  c.model.latent = detail::read_pod<int32_t>(is, "config");
  c.model.gn_blocks = detail::read_pod<int32_t>(is, "config");
  c.model.hidden_layers = detail::read_pod<int32_t>(is, "config");
  c.model.dropout = detail::read_pod<double>(is, "config");
  c.model.dual_mode = detail::read_pod<uint8_t>(is, "config") != 0;
  c.model.geodesic_fraction = detail::read_pod<double>(is, "config");
  c.model.loss_on_roi = detail::read_pod<uint8_t>(is, "config") != 0;
  c.model.edge_scale = detail::read_pod<double>(is, "config");
  c.init_rho = detail::read_pod<double>(is, "config");
  c.prior_mean0 = detail::read_pod<double>(is, "config");
  c.prior_sigma0 = detail::read_pod<double>(is, "config");
  c.learn_prior = detail::read_pod<uint8_t>(is, "config") != 0;
  BayesTrainer tr;
  tr.vp = VariationalParams::make(c);
  auto named = tr.vp.named_tensors();
  auto count = detail::read_pod<uint32_t>(is, "tensor count");
  if (count != named.size())
    throw IoError("checkpoint tensor count does not match the configuration");
  for (auto& [name, t] : named) {
    const std::string got = detail::read_string(is, "tensor name");
    if (got != name)
      throw IoError("checkpoint tensor order mismatch: expected " + name +
                    ", found " + got);
    Tensor loaded = detail::read_tensor(is, name.c_str());
    if (loaded.rows != t->rows || loaded.cols != t->cols)
      throw IoError("checkpoint tensor shape mismatch for " + name);
    *t = std::move(loaded);
  }
  tr.opt.t = detail::read_pod<int64_t>(is, "optimizer step");
  auto moments = detail::read_pod<uint32_t>(is, "moment count");
  tr.opt.m.clear();
  tr.opt.v.clear();
  for (uint32_t i = 0; i < moments; ++i) {
    tr.opt.m.push_back(detail::read_tensor(is, "adam m"));
    tr.opt.v.push_back(detail::read_tensor(is, "adam v"));
  }
  std::array<uint64_t, 6> state{};
  for (auto& w : state) w = detail::read_pod<uint64_t>(is, "rng state");
  tr.rng.restore(state);
  tr.epoch = detail::read_pod<int64_t>(is, "epoch");
  auto read_row = [&](std::vector<double>& row, const char* what) {
    auto n = detail::read_pod<uint32_t>(is, what);
    row.resize(n);
    for (auto& v : row) v = detail::read_pod<double>(is, what);
  };
  read_row(tr.history.train_elbo, "history");
  read_row(tr.history.train_nll, "history");
  read_row(tr.history.train_kl, "history");
  read_row(tr.history.test_mse, "history");
  return tr;
}

}  // namespace mstress
