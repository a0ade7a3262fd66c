#pragma once
// Encode-Process-Decode graph network for per-node stress prediction.
//
// The network encodes node and edge features independently into a latent
// space, refines them with residual message-passing blocks, and decodes
// node latents back to six stress components. A skip connection adds the
// macroscopic stress columns of the input to the decoder output, so the
// network learns the deviation from the far-field solution.
//
// Edges are grouped into branches by kind. In dual mode the latent width
// splits between a geodesic branch and a euclidean branch (default 96/32
// of 128); each branch has its own edge encoder and per-block edge MLP,
// and the per-receiver mean aggregates of the branches are concatenated
// for the node update. In single mode one branch of full latent width
// consumes the euclidean edges and geodesic edges are ignored, matching
// the radius-graph-only configuration.
//
// Every MLP is hidden_layers repetitions of linear, dropout, relu at the
// MLP's own width, then a linear output layer. Encoder and processor MLPs
// end with an affine layer norm; the decoder does not.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mstress/autodiff.hpp"
#include "mstress/errors.hpp"
#include "mstress/graph.hpp"
#include "mstress/nn.hpp"
#include "mstress/rng.hpp"
#include "mstress/tensor.hpp"

namespace mstress {

struct ModelConfig {
  int32_t node_in = kNodeFeatureDim;
  int32_t edge_in = kEdgeFeatureDim;
  int32_t target_dim = kTargetDim;
  int32_t latent = 128;
  int32_t gn_blocks = 5;
  int32_t hidden_layers = 3;
  double dropout = 0.1;
  bool dual_mode = true;
  // Fraction of the latent width assigned to the geodesic branch.
  double geodesic_fraction = 0.75;
  // Train loss over ROI rows only; evaluation metrics always restrict to
  // the ROI regardless of this switch.
  bool loss_on_roi = false;
  // Multiplier applied to edge features before the encoders. Raw offsets are
  // on the order of the void radius, far below unit activation scale; setting
  // this near 1/R conditions the edge channel without touching stored graphs.
  double edge_scale = 1.0;

  void validate() const {
    if (node_in < target_dim)
      throw ConfigError("model: node_in must include the macro stress columns");
    if (edge_in < 1 || target_dim < 1) throw ConfigError("model: bad feature widths");
    if (latent < 1) throw ConfigError("model: latent width must be positive");
    if (gn_blocks < 1) throw ConfigError("model: need at least one GN block");
    if (hidden_layers < 1) throw ConfigError("model: need at least one hidden layer");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0,1)");
    if (!(geodesic_fraction >= 0.0 && geodesic_fraction <= 1.0))
      throw ConfigError("model: geodesic_fraction must be in [0,1]");
    if (!(edge_scale > 0.0) || !std::isfinite(edge_scale))
      throw ConfigError("model: edge_scale must be positive and finite");
  }

  // Edge branches as (kind, latent width) pairs; zero-width branches are
  // dropped so a fraction of 0 or 1 degenerates to one kind.
  std::vector<std::pair<EdgeKind, int32_t>> branches() const {
    validate();
    if (!dual_mode) return {{EdgeKind::euclidean, latent}};
    auto wg = int32_t(std::lround(geodesic_fraction * double(latent)));
    if (wg < 0) wg = 0;
    if (wg > latent) wg = latent;
    std::vector<std::pair<EdgeKind, int32_t>> out;
    if (wg > 0) out.emplace_back(EdgeKind::geodesic, wg);
    if (latent - wg > 0) out.emplace_back(EdgeKind::euclidean, latent - wg);
    return out;
  }
};

// Multilayer perceptron with hidden width fixed per instance. Weights use
// the x*W row-vector convention, biases are row vectors.
struct Mlp {
  int32_t in = 0;
  int32_t width = 0;
  int32_t out = 0;
  bool normalized = true;
  std::vector<Tensor> w;
  std::vector<Tensor> b;
  Tensor gain;
  Tensor shift;

  static Mlp make(int32_t in, int32_t width, int32_t out, int32_t hidden_layers,
                  bool normalized) {
    Mlp m;
    m.in = in;
    m.width = width;
    m.out = out;
    m.normalized = normalized;
    int32_t prev = in;
    for (int32_t l = 0; l < hidden_layers; ++l) {
      m.w.emplace_back(prev, width);
      m.b.emplace_back(1, width);
      prev = width;
    }
    m.w.emplace_back(prev, out);
    m.b.emplace_back(1, out);
    if (normalized) {
      m.gain = Tensor(1, out);
      m.shift = Tensor(1, out);
    }
    return m;
  }

  // Layer order fixes the stream of random draws: weight then bias per
  // layer, input side first. Norm parameters start at identity.
  void init(Rng& rng) {
    for (size_t l = 0; l < w.size(); ++l) {
      w[l] = kaiming_uniform_init(w[l].rows, w[l].cols, rng);
      b[l] = uniform_bias_init(b[l].cols, rng);
    }
    if (normalized) {
      gain.fill(1.0);
      shift.fill(0.0);
    }
  }

  int64_t scalar_count() const {
    int64_t total = 0;
    for (const auto& t : w) total += t.size();
    for (const auto& t : b) total += t.size();
    total += gain.size() + shift.size();
    return total;
  }
};

inline int64_t mlp_param_count(int64_t in, int64_t width, int64_t out,
                               int64_t hidden_layers, bool normalized) {
  int64_t total = in * width + width;
  for (int64_t l = 1; l < hidden_layers; ++l) total += width * width + width;
  total += width * out + out;
  if (normalized) total += 2 * out;
  return total;
}

// Closed-form trainable scalar count for a configuration; must agree with
// ModelParams::scalar_count for the same configuration.
inline int64_t count_parameters(const ModelConfig& cfg) {
  const auto br = cfg.branches();
  int64_t agg = 0;
  for (const auto& [kind, width] : br) agg += width;
  int64_t total =
      mlp_param_count(cfg.node_in, cfg.latent, cfg.latent, cfg.hidden_layers, true);
  for (const auto& [kind, width] : br)
    total += mlp_param_count(cfg.edge_in, width, width, cfg.hidden_layers, true);
  for (int32_t bidx = 0; bidx < cfg.gn_blocks; ++bidx) {
    for (const auto& [kind, width] : br)
      total += mlp_param_count(width + 2 * cfg.latent, width, width,
                               cfg.hidden_layers, true);
    total += mlp_param_count(cfg.latent + agg, cfg.latent, cfg.latent,
                             cfg.hidden_layers, true);
  }
  total += mlp_param_count(cfg.latent, cfg.latent, cfg.target_dim,
                           cfg.hidden_layers, false);
  return total;
}

inline const char* edge_kind_name(EdgeKind kind) {
  return kind == EdgeKind::geodesic ? "geodesic" : "euclidean";
}

struct ModelParams {
  ModelConfig config;
  Mlp node_encoder;
  std::vector<Mlp> edge_encoders;
  struct Block {
    std::vector<Mlp> edge;
    Mlp node;
  };
  std::vector<Block> blocks;
  Mlp decoder;

  static ModelParams make(const ModelConfig& cfg) {
    cfg.validate();
    const auto br = cfg.branches();
    int32_t agg = 0;
    for (const auto& [kind, width] : br) agg += width;
    ModelParams p;
    p.config = cfg;
    p.node_encoder = Mlp::make(cfg.node_in, cfg.latent, cfg.latent,
                               cfg.hidden_layers, true);
    for (const auto& [kind, width] : br)
      p.edge_encoders.push_back(
          Mlp::make(cfg.edge_in, width, width, cfg.hidden_layers, true));
    for (int32_t bidx = 0; bidx < cfg.gn_blocks; ++bidx) {
      Block blk;
      for (const auto& [kind, width] : br)
        blk.edge.push_back(Mlp::make(width + 2 * cfg.latent, width, width,
                                     cfg.hidden_layers, true));
      blk.node = Mlp::make(cfg.latent + agg, cfg.latent, cfg.latent,
                           cfg.hidden_layers, true);
      p.blocks.push_back(std::move(blk));
    }
    p.decoder = Mlp::make(cfg.latent, cfg.latent, cfg.target_dim,
                          cfg.hidden_layers, false);
    return p;
  }

  void init(Rng& rng) {
    node_encoder.init(rng);
    for (auto& m : edge_encoders) m.init(rng);
    for (auto& blk : blocks) {
      for (auto& m : blk.edge) m.init(rng);
      blk.node.init(rng);
    }
    decoder.init(rng);
  }

  // Visits every trainable tensor in the canonical order used for
  // initialization, optimizer state, and checkpoints.
  template <class F>
  void for_each_tensor(F&& fn) {
    const auto br = config.branches();
    auto visit_mlp = [&](const std::string& base, Mlp& m) {
      for (size_t l = 0; l < m.w.size(); ++l) {
        fn(base + ".w" + std::to_string(l), m.w[l]);
        fn(base + ".b" + std::to_string(l), m.b[l]);
      }
      if (m.normalized) {
        fn(base + ".ln_gain", m.gain);
        fn(base + ".ln_shift", m.shift);
      }
    };
    visit_mlp("encoder.node", node_encoder);
    for (size_t i = 0; i < edge_encoders.size(); ++i)
      visit_mlp(std::string("encoder.edge.") + edge_kind_name(br[i].first),
                edge_encoders[i]);
    for (size_t bidx = 0; bidx < blocks.size(); ++bidx) {
      const std::string prefix = "block" + std::to_string(bidx);
      for (size_t i = 0; i < blocks[bidx].edge.size(); ++i)
        visit_mlp(prefix + ".edge." + edge_kind_name(br[i].first),
                  blocks[bidx].edge[i]);
      visit_mlp(prefix + ".node", blocks[bidx].node);
    }
    visit_mlp("decoder", decoder);
  }

  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for_each_tensor([&](const std::string& name, Tensor& t) {
      out.emplace_back(name, &t);
    });
    return out;
  }

  int64_t scalar_count() {
    int64_t total = 0;
    for_each_tensor([&](const std::string&, Tensor& t) { total += t.size(); });
    return total;
  }
};

// Per-graph tensors in the layout the forward pass consumes: one edge
// list per configured branch, ROI rows as gather indices. Branches the
// configuration does not use are absent, so single mode drops geodesic
// edges here.
struct GraphTensors {
  int32_t num_nodes = 0;
  Tensor x;
  Tensor targets;
  struct BranchEdges {
    std::vector<int32_t> senders;
    std::vector<int32_t> receivers;
    Tensor feats;
  };
  std::vector<BranchEdges> branches;
  std::vector<int32_t> roi_rows;
  double k = 1.0;
};

inline GraphTensors prepare_graph(const FeatureGraph& g, const ModelConfig& cfg) {
  cfg.validate();
  if (g.num_nodes < 1) throw NumericError("prepare_graph: graph has no nodes");
  GraphTensors gt;
  gt.num_nodes = g.num_nodes;
  gt.k = g.k;
  gt.x = Tensor(g.num_nodes, cfg.node_in);
  gt.targets = Tensor(g.num_nodes, cfg.target_dim);
  if (int64_t(g.node_features.size()) != int64_t(g.num_nodes) * cfg.node_in ||
      int64_t(g.node_targets.size()) != int64_t(g.num_nodes) * cfg.target_dim)
    throw NumericError("prepare_graph: feature widths do not match the model");
  std::copy(g.node_features.begin(), g.node_features.end(), gt.x.data.begin());
  std::copy(g.node_targets.begin(), g.node_targets.end(), gt.targets.data.begin());
  for (const auto& [kind, width] : cfg.branches()) {
    GraphTensors::BranchEdges be;
    std::vector<int32_t> rows;
    for (int32_t e = 0; e < g.num_edges(); ++e)
      if (g.kinds[size_t(e)] == uint8_t(kind)) {
        be.senders.push_back(g.senders[size_t(e)]);
        be.receivers.push_back(g.receivers[size_t(e)]);
        rows.push_back(e);
      }
    be.feats = Tensor(int32_t(rows.size()), cfg.edge_in);
    for (size_t r = 0; r < rows.size(); ++r)
      std::copy_n(g.edge_features.begin() + int64_t(rows[r]) * cfg.edge_in,
                  cfg.edge_in, be.feats.data.begin() + int64_t(r) * cfg.edge_in);
    if (cfg.edge_scale != 1.0)
      for (double& v : be.feats.data) v *= cfg.edge_scale;
    gt.branches.push_back(std::move(be));
  }
  for (int32_t i = 0; i < g.num_nodes; ++i)
    if (g.roi_mask[size_t(i)]) gt.roi_rows.push_back(i);
  return gt;
}

struct MlpSlots {
  std::vector<int32_t> w;
  std::vector<int32_t> b;
  int32_t gain = -1;
  int32_t shift = -1;
};

struct ParamSlots {
  MlpSlots node_encoder;
  std::vector<MlpSlots> edge_encoders;
  struct Block {
    std::vector<MlpSlots> edge;
    MlpSlots node;
  };
  std::vector<Block> blocks;
  MlpSlots decoder;
  // Same order as ModelParams::for_each_tensor.
  std::vector<int32_t> flat;
};

namespace detail {

inline MlpSlots load_mlp(Tape& tape, const Mlp& m, std::vector<int32_t>& flat) {
  MlpSlots s;
  for (size_t l = 0; l < m.w.size(); ++l) {
    s.w.push_back(tape.input(m.w[l]));
    s.b.push_back(tape.input(m.b[l]));
    flat.push_back(s.w.back());
    flat.push_back(s.b.back());
  }
  if (m.normalized) {
    s.gain = tape.input(m.gain);
    s.shift = tape.input(m.shift);
    flat.push_back(s.gain);
    flat.push_back(s.shift);
  }
  return s;
}

inline int32_t run_mlp(Tape& tape, const MlpSlots& s, const Mlp& m, int32_t x,
                       double dropout, bool train, Rng& rng) {
  int32_t h = x;
  for (size_t l = 0; l + 1 < s.w.size(); ++l) {
    h = tape.linear(h, s.w[l], s.b[l]);
    h = tape.dropout(h, dropout, rng, train);
    h = tape.relu(h);
  }
  h = tape.linear(h, s.w.back(), s.b.back());
  if (m.normalized) h = tape.layer_norm(h, s.gain, s.shift);
  return h;
}

}  // namespace detail

inline ParamSlots load_params(Tape& tape, const ModelParams& p) {
  ParamSlots s;
  s.node_encoder = detail::load_mlp(tape, p.node_encoder, s.flat);
  for (const auto& m : p.edge_encoders)
    s.edge_encoders.push_back(detail::load_mlp(tape, m, s.flat));
  for (const auto& blk : p.blocks) {
    ParamSlots::Block b;
    for (const auto& m : blk.edge)
      b.edge.push_back(detail::load_mlp(tape, m, s.flat));
    b.node = detail::load_mlp(tape, blk.node, s.flat);
    s.blocks.push_back(std::move(b));
  }
  s.decoder = detail::load_mlp(tape, p.decoder, s.flat);
  return s;
}

// Records the full network onto the tape and returns the prediction slot,
// shape [num_nodes, target_dim].
inline int32_t forward_on_tape(Tape& tape, const GraphTensors& gt,
                               const ModelParams& p, const ParamSlots& s,
                               bool train, Rng& rng) {
  const double drop = p.config.dropout;
  if (gt.branches.size() != p.edge_encoders.size())
    throw NumericError("forward: graph was prepared for a different branch layout");
  int32_t x = tape.input(gt.x);
  int32_t v = detail::run_mlp(tape, s.node_encoder, p.node_encoder, x, drop,
                              train, rng);
  std::vector<int32_t> e(gt.branches.size());
  for (size_t i = 0; i < gt.branches.size(); ++i) {
    int32_t feats = tape.input(gt.branches[i].feats);
    e[i] = detail::run_mlp(tape, s.edge_encoders[i], p.edge_encoders[i], feats,
                           drop, train, rng);
  }
  for (size_t bidx = 0; bidx < p.blocks.size(); ++bidx) {
    std::vector<int32_t> aggs(gt.branches.size());
    for (size_t i = 0; i < gt.branches.size(); ++i) {
      const auto& be = gt.branches[i];
      const auto count = int32_t(be.senders.size());
      int32_t cat = tape.edge_cat(e[i], v, be.senders.data(),
                                  be.receivers.data(), count);
      int32_t upd = detail::run_mlp(tape, s.blocks[bidx].edge[i],
                                    p.blocks[bidx].edge[i], cat, drop, train, rng);
      e[i] = tape.add(upd, e[i]);
      aggs[i] = tape.segment_mean(e[i], be.receivers.data(), count, gt.num_nodes);
    }
    int32_t cat = gt.branches.size() == 2
                      ? tape.concat_cols(v, aggs[0], aggs[1])
                      : tape.concat_cols(v, aggs[0]);
    int32_t upd = detail::run_mlp(tape, s.blocks[bidx].node, p.blocks[bidx].node,
                                  cat, drop, train, rng);
    v = tape.add(upd, v);
  }
  int32_t dec = detail::run_mlp(tape, s.decoder, p.decoder, v, drop, train, rng);
  int32_t skip = tape.slice_cols(x, 0, p.config.target_dim);
  return tape.add(dec, skip);
}

// Mean squared error against the graph targets, optionally restricted to
// ROI rows.
inline int32_t loss_on_tape(Tape& tape, const GraphTensors& gt, int32_t pred,
                            bool loss_on_roi) {
  int32_t y = tape.input(gt.targets);
  if (loss_on_roi) {
    if (gt.roi_rows.empty())
      throw NumericError("loss mask is empty: patch has no ROI vertices");
    const auto count = int32_t(gt.roi_rows.size());
    pred = tape.gather_rows(pred, gt.roi_rows.data(), count);
    y = tape.gather_rows(y, gt.roi_rows.data(), count);
  }
  return tape.mse(pred, y);
}

// Deterministic prediction in the normalized space of the graph.
inline Tensor predict(const ModelParams& p, const GraphTensors& gt) {
  Tape tape;
  Rng unused(0);
  ParamSlots s = load_params(tape, p);
  int32_t out = forward_on_tape(tape, gt, p, s, false, unused);
  return tape.value(out);
}

inline double eval_loss(const ModelParams& p, const GraphTensors& gt) {
  Tape tape;
  Rng unused(0);
  ParamSlots s = load_params(tape, p);
  int32_t pred = forward_on_tape(tape, gt, p, s, false, unused);
  int32_t loss = loss_on_tape(tape, gt, pred, p.config.loss_on_roi);
  return tape.value(loss).data[0];
}

struct TrainOptions {
  int32_t epochs = 1;
  int32_t batch_size = 2;
  double base_lr = 1e-4;
  // Empty path disables checkpoint writes; every = 0 writes only at the end.
  std::string checkpoint_path;
  int32_t checkpoint_every = 0;

  void validate() const {
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (!(base_lr > 0.0)) throw ConfigError("train: base learning rate must be positive");
    if (checkpoint_every < 0) throw ConfigError("train: checkpoint interval must be >= 0");
  }
};

struct TrainHistory {
  std::vector<double> train_mse;
  std::vector<double> test_mse;
};

// Everything the training loop mutates, so a checkpoint of this struct
// resumes bit-exactly: parameters, optimizer moments, the RNG that owns
// every stochastic choice, and the epoch cursor.
struct Trainer {
  ModelParams params;
  Adam opt;
  Rng rng{0};
  int64_t epoch = 0;
  TrainHistory history;
};

inline Trainer make_trainer(const ModelConfig& cfg, uint64_t seed) {
  Trainer tr;
  tr.params = ModelParams::make(cfg);
  Rng init_rng = Rng::substream(seed, 0);
  tr.params.init(init_rng);
  tr.rng = Rng::substream(seed, 1);
  return tr;
}

void save_checkpoint(const std::string& path, Trainer& tr);

// Called after each epoch with the epoch index just finished.
using EpochCallback = std::function<void(int64_t, Trainer&)>;

inline void train_epochs(Trainer& tr, std::vector<GraphTensors>& train_set,
                         const std::vector<GraphTensors>* test_set,
                         const TrainOptions& opts,
                         const EpochCallback& callback = {}) {
  opts.validate();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  auto named = tr.params.named_tensors();
  std::vector<Tensor*> param_ptrs;
  for (auto& [name, t] : named) param_ptrs.push_back(t);
  std::vector<Tensor> grad_acc;
  for (auto* t : param_ptrs) grad_acc.emplace_back(t->rows, t->cols);
  std::vector<const Tensor*> grad_ptrs;
  for (auto& g : grad_acc) grad_ptrs.push_back(&g);

  Tape tape;
  std::vector<int32_t> order(train_set.size());

  const int64_t last_epoch = tr.epoch + opts.epochs;
  while (tr.epoch < last_epoch) {
    // Identity before every shuffle so the visit order is a function of
    // the RNG state alone, not of how training was segmented into calls.
    for (size_t i = 0; i < order.size(); ++i) order[i] = int32_t(i);
    tr.rng.shuffle(order);
    const double lr = lr_at_epoch(tr.epoch, opts.base_lr);
    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += size_t(opts.batch_size)) {
      const size_t stop = std::min(order.size(), start + size_t(opts.batch_size));
      for (auto& g : grad_acc) g.fill(0.0);
      for (size_t pos = start; pos < stop; ++pos) {
        const GraphTensors& gt = train_set[size_t(order[pos])];
        tape.reset();
        ParamSlots slots = load_params(tape, tr.params);
        int32_t pred = forward_on_tape(tape, gt, tr.params, slots, true, tr.rng);
        int32_t loss = loss_on_tape(tape, gt, pred, tr.params.config.loss_on_roi);
        const double value = tape.value(loss).data[0];
        if (!std::isfinite(value))
          throw NumericError("train: non-finite loss at epoch " +
                             std::to_string(tr.epoch) + ", graph " +
                             std::to_string(order[pos]));
        tape.backward(loss);
        for (size_t i = 0; i < slots.flat.size(); ++i) {
          const Tensor& g = tape.grad(slots.flat[i]);
          for (size_t j = 0; j < g.data.size(); ++j) grad_acc[i].data[j] += g.data[j];
        }
        loss_sum += value;
      }
      const double inv = 1.0 / double(stop - start);
      for (auto& g : grad_acc)
        for (auto& val : g.data) val *= inv;
      tr.opt.step(param_ptrs, grad_ptrs, lr);
    }
    tr.history.train_mse.push_back(loss_sum / double(train_set.size()));
    if (test_set != nullptr) {
      double test_sum = 0.0;
      for (const auto& gt : *test_set) test_sum += eval_loss(tr.params, gt);
      tr.history.test_mse.push_back(test_sum / double(test_set->size()));
    }
    ++tr.epoch;
    if (!opts.checkpoint_path.empty() && opts.checkpoint_every > 0 &&
        tr.epoch % opts.checkpoint_every == 0 && tr.epoch != last_epoch)
      save_checkpoint(opts.checkpoint_path, tr);
    if (callback) callback(tr.epoch - 1, tr);
  }
  if (!opts.checkpoint_path.empty()) save_checkpoint(opts.checkpoint_path, tr);
}

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), std::streamsize(n));
}

template <class T>
inline void write_pod(std::ostream& os, T v) {
  write_bytes(os, &v, sizeof v);
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod(os, uint32_t(s.size()));
  write_bytes(os, s.data(), s.size());
}

inline void write_tensor(std::ostream& os, const Tensor& t) {
  write_pod(os, t.rows);
  write_pod(os, t.cols);
  write_bytes(os, t.data.data(), t.data.size() * sizeof(double));
}

inline void read_bytes(std::istream& is, void* p, size_t n, const char* what) {
  is.read(static_cast<char*>(p), std::streamsize(n));
  if (!is) throw IoError(std::string("truncated checkpoint while reading ") + what);
}

template <class T>
inline T read_pod(std::istream& is, const char* what) {
  T v;
  read_bytes(is, &v, sizeof v, what);
  return v;
}

inline std::string read_string(std::istream& is, const char* what) {
  auto n = read_pod<uint32_t>(is, what);
  if (n > (1u << 20)) throw IoError("checkpoint name length is implausible");
  std::string s(n, '\0');
  read_bytes(is, s.data(), n, what);
  return s;
}

inline Tensor read_tensor(std::istream& is, const char* what) {
  auto rows = read_pod<int32_t>(is, what);
  auto cols = read_pod<int32_t>(is, what);
  if (rows < 0 || cols < 0 || int64_t(rows) * cols > (int64_t(1) << 32))
    throw IoError("checkpoint tensor shape is implausible");
  Tensor t(rows, cols);
  read_bytes(is, t.data.data(), t.data.size() * sizeof(double), what);
  return t;
}

}  // namespace detail

// Checkpoint record, little-endian, versioned:
//   magic "MSCK", u32 version, model config fields, named parameter
//   tensors in canonical order, Adam step counter and moment tensors,
//   RNG state words, epoch cursor, loss history.
inline void save_checkpoint(const std::string& path, Trainer& tr) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + tmp);
    detail::write_bytes(os, "MSCK", 4);
    detail::write_pod(os, uint32_t(1));
    const ModelConfig& c = tr.params.config;
    detail::write_pod(os, c.node_in);
    detail::write_pod(os, c.edge_in);
    detail::write_pod(os, c.target_dim);
    detail::write_pod(os, c.latent);
    detail::write_pod(os, c.gn_blocks);
    detail::write_pod(os, c.hidden_layers);
    detail::write_pod(os, c.dropout);
    detail::write_pod(os, uint8_t(c.dual_mode ? 1 : 0));
    detail::write_pod(os, c.geodesic_fraction);
    detail::write_pod(os, uint8_t(c.loss_on_roi ? 1 : 0));
    detail::write_pod(os, c.edge_scale);
    auto named = tr.params.named_tensors();
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
    for (uint64_t wsv : state) detail::write_pod(os, wsv);
    detail::write_pod(os, tr.epoch);
    detail::write_pod(os, uint32_t(tr.history.train_mse.size()));
    for (double vv : tr.history.train_mse) detail::write_pod(os, vv);
    detail::write_pod(os, uint32_t(tr.history.test_mse.size()));
    for (double vv : tr.history.test_mse) detail::write_pod(os, vv);
    if (!os) throw IoError("short write while saving checkpoint: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Trainer load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  detail::read_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, "MSCK", 4) != 0)
    throw IoError("bad magic: not a checkpoint file");
  auto version = detail::read_pod<uint32_t>(is, "version");
  if (version != 1) throw IoError("unsupported checkpoint version");
  ModelConfig c;
  c.node_in = detail::read_pod<int32_t>(is, "config");
  c.edge_in = detail::read_pod<int32_t>(is, "config");
  c.target_dim = detail::read_pod<int32_t>(is, "config");
  c.latent = detail::read_pod<int32_t>(is, "config");
  c.gn_blocks = detail::read_pod<int32_t>(is, "config");
  c.hidden_layers = detail::read_pod<int32_t>(is, "config");
  c.dropout = detail::read_pod<double>(is, "config");
  c.dual_mode = detail::read_pod<uint8_t>(is, "config") != 0;
  c.geodesic_fraction = detail::read_pod<double>(is, "config");
  c.loss_on_roi = detail::read_pod<uint8_t>(is, "config") != 0;
  c.edge_scale = detail::read_pod<double>(is, "config");
  Trainer tr;
  tr.params = ModelParams::make(c);
  auto named = tr.params.named_tensors();
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
  if (moments != 0 && moments != named.size())
    throw IoError("checkpoint moment count does not match the configuration");
  for (uint32_t i = 0; i < moments; ++i) {
    tr.opt.m.push_back(detail::read_tensor(is, "first moment"));
    tr.opt.v.push_back(detail::read_tensor(is, "second moment"));
    if (tr.opt.m.back().rows != named[i].second->rows ||
        tr.opt.m.back().cols != named[i].second->cols)
      throw IoError("checkpoint moment shape mismatch");
  }
  std::array<uint64_t, 6> state{};
  for (auto& wsv : state) wsv = detail::read_pod<uint64_t>(is, "rng state");
  tr.rng.restore(state);
  tr.epoch = detail::read_pod<int64_t>(is, "epoch");
  auto ntrain = detail::read_pod<uint32_t>(is, "history");
  for (uint32_t i = 0; i < ntrain; ++i)
    tr.history.train_mse.push_back(detail::read_pod<double>(is, "history"));
  auto ntest = detail::read_pod<uint32_t>(is, "history");
  for (uint32_t i = 0; i < ntest; ++i)
    tr.history.test_mse.push_back(detail::read_pod<double>(is, "history"));
  return tr;
}

}  // namespace mstress
