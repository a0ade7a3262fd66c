// Variational layer tests: shape mirroring, closed-form KL against hand
// values and Monte Carlo, reparametrized sampling laws, ELBO gradients by
// finite differences, quantile conventions, training descent, and
// checkpoint resume.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "mstress/bayes.hpp"
#include "mstress/graph.hpp"
#include "mstress/model.hpp"
#include "mstress/synth.hpp"

using namespace mstress;

namespace {

// Small dual-mode architecture shared by most cases.
BayesConfig small_bayes() {
  BayesConfig cfg;
  cfg.model.latent = 8;
  cfg.model.gn_blocks = 1;
  cfg.model.hidden_layers = 1;
  cfg.model.dropout = 0.0;
  cfg.model.dual_mode = true;
  cfg.model.geodesic_fraction = 0.75;
  return cfg;
}

// Four nodes, both edge kinds, mixed ROI; features from a fixed stream.
FeatureGraph tiny_graph() {
  Rng rng(91);
  FeatureGraph g;
  g.num_nodes = 4;
  g.k = 2.5;
  for (int i = 0; i < 4 * 7; ++i) g.node_features.push_back(rng.uniform(-1, 1));
  for (int i = 0; i < 4 * 6; ++i) g.node_targets.push_back(rng.uniform(-1, 1));
  for (int i = 0; i < 4 * 3; ++i) g.normals.push_back(0.0);
  g.roi_mask = {1, 1, 0, 1};
  g.senders = {0, 1, 2, 3, 0, 2};
  g.receivers = {1, 2, 3, 0, 2, 0};
  g.kinds = {0, 0, 0, 0, 1, 1};
  for (int i = 0; i < 6 * 4; ++i) g.edge_features.push_back(rng.uniform(-0.5, 0.5));
  return g;
}

// Box wall plus one centered void; the patch covers the whole specimen.
Patch mixed_patch(uint64_t seed) {
  const double R = 0.08;
  SpecimenGeometry spec;
  spec.box = Aabb::cube({0, 0, 0}, 1.2);
  spec.voids = {{Vec3{0, 0, 0}, R}};
  MacroLoad load;
  load.strain = {1.3e-3, -0.39e-3, -0.39e-3, 0, 0, 0};
  const auto el = ElasticConstants::from_young_poisson(1.0, 0.3);
  SurfaceMesh mesh = build_surface_mesh(spec, 1, 0.3);
  PatchConfig pc;
  pc.R = R;
  pc.count = 1;
  pc.region = Aabb::cube({0, 0, 0}, 18.0 * R + 1e-6);
  pc.require_roi_vertices = true;
  return extract_patches(mesh, spec, load, el, pc, seed).at(0);
}

void set_all_rho(VariationalParams& vp, double value) {
  vp.rho.for_each_tensor([&](const std::string&, Tensor& t) { t.fill(value); });
}

}  // namespace

TEST_CASE("bayes configuration validation") {
  BayesConfig bad = small_bayes();
  bad.prior_sigma0 = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_bayes();
  bad.prior_sigma0 = -0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_bayes();
  bad.model.latent = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_NOTHROW(small_bayes().validate());

  CHECK(softplus_scalar(0.0) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(inv_softplus(softplus_scalar(0.7)) == Catch::Approx(0.7).epsilon(1e-10));
  CHECK(inv_softplus(softplus_scalar(-3.0)) == Catch::Approx(-3.0).epsilon(1e-9));
  CHECK_THROWS_AS(inv_softplus(0.0), ConfigError);
}

TEST_CASE("variational shapes mirror the deterministic model") {
  BayesConfig cfg = small_bayes();
  VariationalParams vp = VariationalParams::make(cfg);
  ModelParams ref = ModelParams::make(cfg.model);
  auto ref_named = ref.named_tensors();
  auto mu_named = vp.mu.named_tensors();
  auto rho_named = vp.rho.named_tensors();
  REQUIRE(mu_named.size() == ref_named.size());
  for (size_t i = 0; i < ref_named.size(); ++i) {
    CHECK(mu_named[i].first == ref_named[i].first);
    CHECK(mu_named[i].second->rows == ref_named[i].second->rows);
    CHECK(rho_named[i].second->cols == ref_named[i].second->cols);
  }
  CHECK(vp.prior_mean.rows == 1);
  CHECK(vp.prior_mean.cols == int32_t(ref_named.size()));
  CHECK(vp.scalar_count() ==
        2 * ref.scalar_count() + 2 * int64_t(ref_named.size()));

  auto named = vp.named_tensors();
  REQUIRE(named.size() == 2 * ref_named.size() + 2);
  CHECK(named.front().first == "mu." + ref_named.front().first);
  CHECK(named[ref_named.size()].first == "rho." + ref_named.front().first);
  CHECK(named[named.size() - 2].first == "prior.mean");
  CHECK(named.back().first == "prior.rho");
}

TEST_CASE("weight sampling follows the reparametrized law") {
  BayesConfig cfg = small_bayes();
  VariationalParams vp = VariationalParams::make(cfg);
  Rng init(3);
  vp.init(init);

  // Collapsed spreads make sampling deterministic at the mean.
  set_all_rho(vp, -40.0);
  Rng rng(5);
  ModelParams w = sample_weights(vp, rng);
  auto wn = w.named_tensors();
  auto mn = vp.mu.named_tensors();
  for (size_t i = 0; i < wn.size(); ++i)
    for (size_t j = 0; j < wn[i].second->data.size(); ++j)
      CHECK(wn[i].second->data[j] ==
            Catch::Approx(mn[i].second->data[j]).margin(1e-15));

  // With sigma = softplus(0) = ln 2, the sample mean of one entry over many
  // draws sits within four standard errors of mu.
  set_all_rho(vp, 0.0);
  const double sigma = std::log(2.0);
  const int draws = 20000;
  double sum = 0.0;
  Rng rng2(7);
  for (int d = 0; d < draws; ++d) {
    ModelParams ws = sample_weights(vp, rng2);
    sum += ws.node_encoder.w[0].data[0];
  }
  const double mean = sum / draws;
  const double mu0 = vp.mu.node_encoder.w[0].data[0];
  const double se = sigma / std::sqrt(double(draws));
  CHECK(std::abs(mean - mu0) < 4.0 * se);
}

TEST_CASE("closed form KL matches hand values") {
  BayesConfig cfg = small_bayes();
  VariationalParams vp = VariationalParams::make(cfg);
  Rng init(11);
  vp.init(init);
  FeatureGraph g = tiny_graph();
  GraphTensors gt = prepare_graph(g, cfg.model);
  const double n_total = double(vp.mu.scalar_count());

  // Posterior identical to the prior in every tensor: KL is exactly zero.
  const double rho_star = inv_softplus(cfg.prior_sigma0);
  vp.mu.for_each_tensor([&](const std::string&, Tensor& t) { t.fill(0.0); });
  set_all_rho(vp, rho_star);
  vp.prior_mean.fill(0.0);
  vp.prior_rho.fill(rho_star);
  Rng rng(2);
  ElboValue v = elbo_loss(gt, vp, 1, 1.0, rng);
  CHECK(v.kl == Catch::Approx(0.0).margin(1e-9 * n_total));

  // Posterior N(0,1) against prior N(1,1): one half per weight.
  const double rho_unit = inv_softplus(1.0);
  set_all_rho(vp, rho_unit);
  vp.prior_mean.fill(1.0);
  vp.prior_rho.fill(rho_unit);
  v = elbo_loss(gt, vp, 1, 1.0, rng);
  CHECK(v.kl == Catch::Approx(0.5 * n_total).epsilon(1e-10));

  // ELBO assembles as nll + weight * kl; weight zero leaves the pure
  // Monte Carlo likelihood term.
  Rng rng_a(9), rng_b(9);
  ElboValue with = elbo_loss(gt, vp, 3, 0.25, rng_a);
  ElboValue without = elbo_loss(gt, vp, 3, 0.0, rng_b);
  CHECK(with.nll == Catch::Approx(without.nll).epsilon(1e-12));
  CHECK(without.elbo == Catch::Approx(without.nll).epsilon(1e-12));
  CHECK(with.elbo == Catch::Approx(with.nll + 0.25 * with.kl).epsilon(1e-12));
}

TEST_CASE("closed form KL matches a Monte Carlo estimate") {
  // One tiny architecture so the weight count stays small; random
  // posterior and prior values, KL estimated as E_q[log q - log p].
  BayesConfig cfg = small_bayes();
  cfg.model.latent = 2;
  cfg.model.hidden_layers = 1;
  cfg.model.gn_blocks = 1;
  cfg.model.dual_mode = false;
  VariationalParams vp = VariationalParams::make(cfg);
  Rng init(17);
  vp.init(init);
  vp.mu.for_each_tensor([&](const std::string&, Tensor& t) {
    for (double& x : t.data) x = init.uniform(-0.8, 0.8);
  });
  vp.rho.for_each_tensor([&](const std::string&, Tensor& t) {
    for (double& x : t.data) x = init.uniform(-1.5, 0.5);
  });
  for (double& x : vp.prior_mean.data) x = init.uniform(-0.5, 0.5);
  for (double& x : vp.prior_rho.data) x = init.uniform(-1.0, 1.0);

  FeatureGraph g = tiny_graph();
  GraphTensors gt = prepare_graph(g, cfg.model);
  Rng rng(1);
  const double exact = elbo_loss(gt, vp, 1, 1.0, rng).kl;

  auto mu_named = vp.mu.named_tensors();
  auto rho_named = vp.rho.named_tensors();
  Rng mc(23);
  const int draws = 20000;
  double acc = 0.0, acc2 = 0.0;
  for (int d = 0; d < draws; ++d) {
    double log_ratio = 0.0;
    for (size_t i = 0; i < mu_named.size(); ++i) {
      const Tensor& m = *mu_named[i].second;
      const Tensor& r = *rho_named[i].second;
      const double pm = vp.prior_mean.data[i];
      const double sp = softplus_scalar(vp.prior_rho.data[i]);
      for (size_t j = 0; j < m.data.size(); ++j) {
        const double sq = softplus_scalar(r.data[j]);
        const double z = mc.normal();
        const double w = m.data[j] + sq * z;
        const double lq = -0.5 * z * z - std::log(sq);
        const double dz = (w - pm) / sp;
        const double lp = -0.5 * dz * dz - std::log(sp);
        log_ratio += lq - lp;
      }
    }
    acc += log_ratio;
    acc2 += log_ratio * log_ratio;
  }
  const double mean = acc / draws;
  const double var = std::max(0.0, acc2 / draws - mean * mean);
  const double se = std::sqrt(var / draws);
  CHECK(std::abs(mean - exact) < 3.0 * se);
}

TEST_CASE("collapsed posterior reproduces the deterministic network") {
  BayesConfig cfg = small_bayes();
  VariationalParams vp = VariationalParams::make(cfg);
  Rng init(29);
  vp.init(init);
  set_all_rho(vp, -40.0);

  FeatureGraph g = tiny_graph();
  GraphTensors gt = prepare_graph(g, cfg.model);

  // The Monte Carlo likelihood equals the deterministic loss at the mean.
  Rng rng(3);
  ElboValue v = elbo_loss(gt, vp, 2, 0.0, rng);
  ModelParams mean = mean_weights(vp);
  CHECK(v.nll == Catch::Approx(eval_loss(mean, gt)).epsilon(1e-12));

  // Every predictive draw equals the mean forward pass, denormalized.
  Rng rng2(4);
  auto fields = predict_samples(vp, gt, 3, rng2);
  Tensor det = predict(mean, gt);
  REQUIRE(fields.size() == 3);
  for (const Tensor& f : fields)
    for (int64_t i = 0; i < det.size(); ++i)
      CHECK(f.data[size_t(i)] ==
            Catch::Approx(det.data[size_t(i)] * gt.k).margin(1e-12));
}

TEST_CASE("predictive spread grows with the posterior spread") {
  BayesConfig cfg = small_bayes();
  VariationalParams vp = VariationalParams::make(cfg);
  Rng init(31);
  vp.init(init);
  FeatureGraph g = tiny_graph();
  GraphTensors gt = prepare_graph(g, cfg.model);

  auto spread = [&](double rho) {
    set_all_rho(vp, rho);
    Rng rng(77);
    auto fields = predict_samples(vp, gt, 24, rng);
    double lo = fields[0].data[0], hi = fields[0].data[0];
    for (const auto& f : fields) {
      lo = std::min(lo, f.data[0]);
      hi = std::max(hi, f.data[0]);
    }
    return hi - lo;
  };
  const double tight = spread(-6.0);
  const double wide = spread(-2.0);
  CHECK(wide > tight);
  CHECK(tight > 0.0);

  // Same seed, same sample set.
  set_all_rho(vp, -3.0);
  Rng ra(123), rb(123);
  auto fa = predict_samples(vp, gt, 4, ra);
  auto fb = predict_samples(vp, gt, 4, rb);
  for (size_t s = 0; s < fa.size(); ++s)
    CHECK(fa[s].data == fb[s].data);
}

TEST_CASE("credible intervals use the nearest rank quantile") {
  std::vector<double> century(100);
  std::iota(century.begin(), century.end(), 1.0);
  Interval ci = credible_interval(century, 0.95);
  CHECK(ci.lo == 3.0);
  CHECK(ci.hi == 98.0);

  std::vector<double> flat(5, 4.25);
  ci = credible_interval(flat, 0.95);
  CHECK(ci.lo == 4.25);
  CHECK(ci.hi == 4.25);

  // Widening the level never shrinks the band.
  Interval wide = credible_interval(century, 0.99);
  CHECK(wide.lo <= ci.lo);
  CHECK(wide.hi >= ci.hi);
  Interval mid = credible_interval(century, 0.5);
  CHECK(mid.lo >= 3.0);
  CHECK(mid.hi <= 98.0);

  CHECK_THROWS_AS(credible_interval({1.0}, 0.95), ConfigError);
  CHECK_THROWS_AS(credible_interval(century, 0.0), ConfigError);
  CHECK_THROWS_AS(credible_interval(century, 1.0), ConfigError);
  CHECK_THROWS_AS(quantile_nearest_rank({}, 0.5), ConfigError);

  // Per-node bands from two constant fields.
  Tensor a(2, 6), b(2, 6);
  a.fill(1.0);
  b.fill(3.0);
  auto nodes = credible_intervals_per_node(
      {a, b}, [](const double* row) { return row[0]; }, 0.95);
  REQUIRE(nodes.size() == 2);
  CHECK(nodes[0].lo == 1.0);
  CHECK(nodes[0].hi == 3.0);
}

TEST_CASE("elbo gradients pass finite differences") {
  BayesConfig cfg = small_bayes();
  cfg.model.latent = 4;
  cfg.model.geodesic_fraction = 0.5;
  VariationalParams vp = VariationalParams::make(cfg);
  Rng init(13);
  vp.init(init);
  // Spreads large enough that the sigma path carries real gradient.
  set_all_rho(vp, -1.0);
  FeatureGraph g = tiny_graph();
  GraphTensors gt = prepare_graph(g, cfg.model);

  std::vector<Tensor*> ptrs;
  for (auto& [name, t] : vp.named_tensors()) ptrs.push_back(t);
  // A fresh generator per recording replays identical weight noise, which
  // keeps the finite difference evaluations consistent.
  double err = grad_check(
      [&](Tape& tape, std::vector<int32_t>& slots) {
        Rng rng(42);
        ElboSlots es = elbo_on_tape(tape, gt, vp, 2, 0.3, false, rng);
        slots = es.flat;
        slots.push_back(es.elbo);
      },
      ptrs, 1e-5, 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("elbo training reduces the likelihood term") {
  Patch p = mixed_patch(41);
  normalize_patch(p);
  BayesConfig cfg = small_bayes();
  cfg.model.latent = 16;
  cfg.model.gn_blocks = 2;
  cfg.model.edge_scale = 12.5;
  FeatureGraph g = build_graph(p, 4.0 * p.R, 2, 3);
  std::vector<GraphTensors> train_set;
  train_set.push_back(prepare_graph(g, cfg.model));

  BayesOptions opts;
  opts.epochs = 150;
  opts.batch_size = 2;
  opts.base_lr = 3e-3;
  opts.n_samples = 1;
  BayesTrainer tr = make_bayes_trainer(cfg, 19);
  train_bayes_epochs(tr, train_set, nullptr, opts);
  REQUIRE(tr.history.train_nll.size() == 150);
  const double first = tr.history.train_nll.front();
  const double last = tr.history.train_nll.back();
  CHECK(last < 0.25 * first);
  for (double v : tr.history.train_elbo) CHECK(std::isfinite(v));

  // Same seed reruns bitwise identically; a different seed does not.
  BayesTrainer tr2 = make_bayes_trainer(cfg, 19);
  train_bayes_epochs(tr2, train_set, nullptr, opts);
  CHECK(tr2.history.train_elbo == tr.history.train_elbo);
  BayesTrainer tr3 = make_bayes_trainer(cfg, 20);
  BayesOptions one = opts;
  one.epochs = 3;
  train_bayes_epochs(tr3, train_set, nullptr, one);
  CHECK(tr3.history.train_elbo.front() != tr.history.train_elbo.front());

  BayesOptions bad;
  bad.epochs = 0;
  CHECK_THROWS_AS(train_bayes_epochs(tr, train_set, nullptr, bad), ConfigError);
  std::vector<GraphTensors> empty;
  CHECK_THROWS_AS(train_bayes_epochs(tr, empty, nullptr, opts), ConfigError);
}

TEST_CASE("prior learning switch controls the prior rows") {
  Patch p = mixed_patch(43);
  normalize_patch(p);
  BayesConfig cfg = small_bayes();
  cfg.model.edge_scale = 12.5;
  FeatureGraph g = build_graph(p, 4.0 * p.R, 2, 5);
  std::vector<GraphTensors> train_set;
  train_set.push_back(prepare_graph(g, cfg.model));
  BayesOptions opts;
  opts.epochs = 4;
  opts.base_lr = 1e-3;

  cfg.learn_prior = false;
  BayesTrainer frozen = make_bayes_trainer(cfg, 7);
  const DoubleBuffer before_mean = frozen.vp.prior_mean.data;
  const DoubleBuffer before_rho = frozen.vp.prior_rho.data;
  train_bayes_epochs(frozen, train_set, nullptr, opts);
  CHECK(frozen.vp.prior_mean.data == before_mean);
  CHECK(frozen.vp.prior_rho.data == before_rho);

  cfg.learn_prior = true;
  BayesTrainer live = make_bayes_trainer(cfg, 7);
  train_bayes_epochs(live, train_set, nullptr, opts);
  CHECK(live.vp.prior_rho.data != before_rho);
}

TEST_CASE("bayes checkpoint resume is bit exact") {
  const auto dir = std::filesystem::temp_directory_path() / "mstress_bayes_ckpt";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "bayes.ckpt").string();

  std::vector<GraphTensors> train_set;
  BayesConfig cfg = small_bayes();
  cfg.model.dropout = 0.1;
  cfg.model.edge_scale = 12.5;
  for (uint64_t s : {1u, 2u, 3u}) {
    Patch p = mixed_patch(50 + s);
    normalize_patch(p);
    FeatureGraph g = build_graph(p, 4.0 * p.R, 2, s);
    train_set.push_back(prepare_graph(g, cfg.model));
  }

  BayesOptions six;
  six.epochs = 6;
  six.base_lr = 1e-3;
  six.n_samples = 2;
  BayesTrainer straight = make_bayes_trainer(cfg, 77);
  train_bayes_epochs(straight, train_set, nullptr, six);

  BayesOptions three = six;
  three.epochs = 3;
  three.checkpoint_path = path;
  BayesTrainer first = make_bayes_trainer(cfg, 77);
  train_bayes_epochs(first, train_set, nullptr, three);

  BayesTrainer resumed = load_bayes_checkpoint(path);
  CHECK(resumed.epoch == 3);
  CHECK(resumed.vp.config.model.edge_scale == 12.5);
  BayesOptions rest = six;
  rest.epochs = 3;
  rest.checkpoint_path.clear();
  train_bayes_epochs(resumed, train_set, nullptr, rest);

  CHECK(resumed.epoch == straight.epoch);
  CHECK(resumed.opt.t == straight.opt.t);
  CHECK(resumed.history.train_elbo == straight.history.train_elbo);
  CHECK(resumed.history.train_kl == straight.history.train_kl);
  auto rn = resumed.vp.named_tensors();
  auto sn = straight.vp.named_tensors();
  REQUIRE(rn.size() == sn.size());
  for (size_t i = 0; i < rn.size(); ++i)
    CHECK(rn[i].second->data == sn[i].second->data);
  for (size_t i = 0; i < straight.opt.m.size(); ++i) {
    CHECK(resumed.opt.m[i].data == straight.opt.m[i].data);
    CHECK(resumed.opt.v[i].data == straight.opt.v[i].data);
  }

  CHECK_THROWS_AS(load_bayes_checkpoint((dir / "missing.ckpt").string()),
                  IoError);
  {
    std::ofstream os((dir / "bad.ckpt").string(), std::ios::binary);
    os << "MSCKxxxxxxxxxxxxxxxx";
  }
  CHECK_THROWS_AS(load_bayes_checkpoint((dir / "bad.ckpt").string()), IoError);
}
