#pragma once
// Feature graphs built from patches. Two typed edge sets coexist: geodesic
// edges reproduce the 1-ring mesh adjacency, euclidean edges connect nodes
// within a ball of radius r, subsampled to a per-node cap. Both sets are
// bidirectional and fixed at construction; training never rewires them.
//
// Binary graph records ("MSGR", version 1, little-endian):
//   magic 'M''S''G''R' | u32 version | u32 num_nodes | u32 num_edges
//   f64 node_features [n*7] | f64 node_targets [n*6] | f64 normals [n*3]
//   u8 roi_mask [n]
//   i32 senders [m] | i32 receivers [m] | u8 kinds [m]
//   f64 edge_features [m*4] | f64 k

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "mstress/errors.hpp"
#include "mstress/mesh.hpp"
#include "mstress/rng.hpp"
#include "mstress/synth.hpp"

namespace mstress {

enum class EdgeKind : uint8_t { geodesic = 0, euclidean = 1 };

constexpr int kNodeFeatureDim = 7;  // 6 macro stress components + indicator
constexpr int kEdgeFeatureDim = 4;  // relative position + distance
constexpr int kTargetDim = 6;

struct FeatureGraph {
  int32_t num_nodes = 0;
  std::vector<double> node_features;  // row-major [num_nodes][7]
  std::vector<double> node_targets;   // [num_nodes][6]
  std::vector<double> normals;        // [num_nodes][3]
  std::vector<uint8_t> roi_mask;      // [num_nodes]
  std::vector<int32_t> senders;       // [num_edges]
  std::vector<int32_t> receivers;     // [num_edges]
  std::vector<uint8_t> kinds;         // [num_edges], EdgeKind values
  std::vector<double> edge_features;  // [num_edges][4], receiver minus sender
  double k = 1.0;

  int32_t num_edges() const { return int32_t(senders.size()); }
};

namespace detail {
// Uniform hash grid over node positions with cell size r; lookups return
// candidate indices in ascending order so downstream sampling is
// reproducible.
struct BallIndex {
  double cell = 1.0;
  std::unordered_map<uint64_t, std::vector<int32_t>> cells;
  const std::vector<Vec3>* points = nullptr;

  static uint64_t key(int64_t i, int64_t j, int64_t k) {
    uint64_t h = uint64_t(i) * 0x9E3779B97F4A7C15ULL;
    h ^= uint64_t(j) * 0xC2B2AE3D27D4EB4FULL;
    h ^= uint64_t(k) * 0x165667B19E3779F9ULL;
    return h;
  }

  BallIndex(const std::vector<Vec3>& pts, double r) : cell(r), points(&pts) {
    for (size_t i = 0; i < pts.size(); ++i) {
      auto [ci, cj, ck] = cell_of(pts[i]);
      cells[key(ci, cj, ck)].push_back(int32_t(i));
    }
  }

  std::tuple<int64_t, int64_t, int64_t> cell_of(const Vec3& p) const {
    return {int64_t(std::floor(p.x / cell)), int64_t(std::floor(p.y / cell)),
            int64_t(std::floor(p.z / cell))};
  }

  // All indices within distance <= r of `p`, excluding `self`.
  std::vector<int32_t> query(const Vec3& p, double r, int32_t self) const {
    std::vector<int32_t> out;
    auto [ci, cj, ck] = cell_of(p);
    for (int64_t di = -1; di <= 1; ++di)
      for (int64_t dj = -1; dj <= 1; ++dj)
        for (int64_t dk = -1; dk <= 1; ++dk) {
          auto it = cells.find(key(ci + di, cj + dj, ck + dk));
          if (it == cells.end()) continue;
          for (int32_t idx : it->second) {
            if (idx == self) continue;
            if (((*points)[size_t(idx)] - p).norm() <= r) out.push_back(idx);
          }
        }
    std::sort(out.begin(), out.end());
    return out;
  }
};
}  // namespace detail

// Nodes within the r-ball of `node`, subsampled uniformly to `cap` when the
// candidate set is larger. Consumes `rng` only in the over-cap case.
inline std::vector<int32_t> euclidean_neighbors(
    const std::vector<Vec3>& points, const detail::BallIndex& index,
    int32_t node, double r, int32_t cap, Rng& rng) {
  if (r <= 0.0 || cap < 1)
    throw ConfigError("euclidean neighborhood needs r > 0 and cap >= 1");
  std::vector<int32_t> cand = index.query(points[size_t(node)], r, node);
  if (int32_t(cand.size()) <= cap) return cand;
  // Partial Fisher-Yates: the first `cap` slots become a uniform subset.
  for (int32_t i = 0; i < cap; ++i) {
    int32_t j = i + int32_t(rng.uniform_int(uint64_t(cand.size()) - uint64_t(i)));
    std::swap(cand[size_t(i)], cand[size_t(j)]);
  }
  cand.resize(size_t(cap));
  std::sort(cand.begin(), cand.end());
  return cand;
}

inline std::vector<int32_t> euclidean_neighbors(const std::vector<Vec3>& pts,
                                                int32_t node, double r,
                                                int32_t cap, Rng& rng) {
  detail::BallIndex index(pts, r);
  return euclidean_neighbors(pts, index, node, r, cap, rng);
}

// Builds the full feature graph of a (normalized) patch. Euclidean selection
// for node i draws from substream(seed, i); selected in-neighbors are then
// mirrored, which may push in-degrees above the cap. Edges are emitted in
// (kind, sender, receiver) order.
inline FeatureGraph build_graph(const Patch& patch, double r, int32_t cap,
                                uint64_t seed) {
  const auto& pts = patch.mesh.vertices;
  FeatureGraph g;
  g.num_nodes = patch.mesh.num_vertices();
  g.k = patch.k;

  g.node_features.resize(size_t(g.num_nodes) * kNodeFeatureDim);
  g.node_targets.resize(size_t(g.num_nodes) * kTargetDim);
  for (int32_t i = 0; i < g.num_nodes; ++i) {
    for (int c = 0; c < 6; ++c) {
      g.node_features[size_t(i) * kNodeFeatureDim + size_t(c)] =
          patch.macro[size_t(i)][c];
      g.node_targets[size_t(i) * kTargetDim + size_t(c)] =
          patch.micro[size_t(i)][c];
    }
    g.node_features[size_t(i) * kNodeFeatureDim + 6] =
        patch.indicator[size_t(i)];
  }
  auto vn = vertex_normals(patch.mesh);
  g.normals.resize(size_t(g.num_nodes) * 3);
  for (int32_t i = 0; i < g.num_nodes; ++i) {
    g.normals[size_t(i) * 3 + 0] = vn[size_t(i)].x;
    g.normals[size_t(i) * 3 + 1] = vn[size_t(i)].y;
    g.normals[size_t(i) * 3 + 2] = vn[size_t(i)].z;
  }
  g.roi_mask.resize(size_t(g.num_nodes));
  for (int32_t i = 0; i < g.num_nodes; ++i)
    g.roi_mask[size_t(i)] = patch.roi_mask[size_t(i)] ? 1 : 0;

  auto ring = one_ring(patch.mesh);
  std::vector<std::pair<int32_t, int32_t>> geo;
  for (int32_t v = 0; v < g.num_nodes; ++v)
    for (int32_t w : ring[size_t(v)]) geo.push_back({v, w});

  std::set<std::pair<int32_t, int32_t>> euc;
  if (g.num_nodes > 0) {
    detail::BallIndex index(pts, r);
    for (int32_t i = 0; i < g.num_nodes; ++i) {
      Rng rng = Rng::substream(seed, uint64_t(i));
      for (int32_t j : euclidean_neighbors(pts, index, i, r, cap, rng)) {
        euc.insert({j, i});
        euc.insert({i, j});
      }
    }
  }

  auto push_edge = [&](int32_t s, int32_t rcv, EdgeKind kind) {
    g.senders.push_back(s);
    g.receivers.push_back(rcv);
    g.kinds.push_back(uint8_t(kind));
    Vec3 d = pts[size_t(rcv)] - pts[size_t(s)];
    g.edge_features.push_back(d.x);
    g.edge_features.push_back(d.y);
    g.edge_features.push_back(d.z);
    g.edge_features.push_back(d.norm());
  };
  for (auto [s, rcv] : geo) push_edge(s, rcv, EdgeKind::geodesic);
  for (auto [s, rcv] : euc) push_edge(s, rcv, EdgeKind::euclidean);

  if (g.senders.empty()) throw NumericError("graph has zero edges");
  return g;
}

// ---- binary serialization ----

static_assert(std::endian::native == std::endian::little,
              "graph records are little-endian");

namespace detail {
template <typename T>
void write_pod(std::ofstream& out, const T* data, size_t count) {
  out.write(reinterpret_cast<const char*>(data),
            std::streamsize(count * sizeof(T)));
}
template <typename T>
void read_pod(std::ifstream& in, T* data, size_t count,
              const std::string& what) {
  in.read(reinterpret_cast<char*>(data), std::streamsize(count * sizeof(T)));
  if (size_t(in.gcount()) != count * sizeof(T))
    throw IoError("truncated graph record while reading " + what);
}
}  // namespace detail

inline void save_graph(const FeatureGraph& g, const std::string& path) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write graph file: " + tmp);
    const char magic[4] = {'M', 'S', 'G', 'R'};
    uint32_t version = 1;
    uint32_t n = uint32_t(g.num_nodes), m = uint32_t(g.num_edges());
    detail::write_pod(out, magic, 4);
    detail::write_pod(out, &version, 1);
    detail::write_pod(out, &n, 1);
    detail::write_pod(out, &m, 1);
    detail::write_pod(out, g.node_features.data(), g.node_features.size());
    detail::write_pod(out, g.node_targets.data(), g.node_targets.size());
    detail::write_pod(out, g.normals.data(), g.normals.size());
    detail::write_pod(out, g.roi_mask.data(), g.roi_mask.size());
    detail::write_pod(out, g.senders.data(), g.senders.size());
    detail::write_pod(out, g.receivers.data(), g.receivers.size());
    detail::write_pod(out, g.kinds.data(), g.kinds.size());
    detail::write_pod(out, g.edge_features.data(), g.edge_features.size());
    detail::write_pod(out, &g.k, 1);
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline FeatureGraph load_graph(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open graph file: " + path);
  char magic[4];
  detail::read_pod(in, magic, 4, "magic");
  if (std::memcmp(magic, "MSGR", 4) != 0)
    throw IoError(path + ": not a graph record (bad magic)");
  uint32_t version = 0, n = 0, m = 0;
  detail::read_pod(in, &version, 1, "version");
  if (version != 1)
    throw IoError(path + ": unsupported graph record version " +
                  std::to_string(version));
  detail::read_pod(in, &n, 1, "node count");
  detail::read_pod(in, &m, 1, "edge count");
  FeatureGraph g;
  g.num_nodes = int32_t(n);
  g.node_features.resize(size_t(n) * kNodeFeatureDim);
  g.node_targets.resize(size_t(n) * kTargetDim);
  g.normals.resize(size_t(n) * 3);
  g.roi_mask.resize(n);
  g.senders.resize(m);
  g.receivers.resize(m);
  g.kinds.resize(m);
  g.edge_features.resize(size_t(m) * kEdgeFeatureDim);
  detail::read_pod(in, g.node_features.data(), g.node_features.size(),
                   "node features");
  detail::read_pod(in, g.node_targets.data(), g.node_targets.size(),
                   "node targets");
  detail::read_pod(in, g.normals.data(), g.normals.size(), "normals");
  detail::read_pod(in, g.roi_mask.data(), g.roi_mask.size(), "roi mask");
  detail::read_pod(in, g.senders.data(), g.senders.size(), "senders");
  detail::read_pod(in, g.receivers.data(), g.receivers.size(), "receivers");
  detail::read_pod(in, g.kinds.data(), g.kinds.size(), "kinds");
  detail::read_pod(in, g.edge_features.data(), g.edge_features.size(),
                   "edge features");
  detail::read_pod(in, &g.k, 1, "normalization scalar");
  for (uint32_t e = 0; e < m; ++e)
    if (g.senders[e] < 0 || g.senders[e] >= g.num_nodes ||
        g.receivers[e] < 0 || g.receivers[e] >= g.num_nodes)
      throw IoError(path + ": edge endpoint out of range");
  return g;
}

}  // namespace mstress
