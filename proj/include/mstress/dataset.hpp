// Dataset directory format and the synthetic dataset generator. One patch
// is stored as a mesh file plus a JSON metadata record; a manifest lists
// every entry with its train or test split. Stress fields are saved in
// normalized form together with the scale k, so training consumes files
// directly and denormalization is a multiply.
//
// Layout of a dataset directory:
//   manifest.json                      counts, seed, config hash, entries
//   patch_SSSS_PP.vtk                  mesh with fields S, S_target,
//                                      micro_indicator, roi
//   patch_SSSS_PP.json                 k, R, center, ROI bounds, seeds, load
//
// Splits are made per specimen, so test patches come from geometries the
// training set never saw.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mstress/errors.hpp"
#include "mstress/graph.hpp"
#include "mstress/mesh.hpp"
#include "mstress/rng.hpp"
#include "mstress/stress.hpp"
#include "mstress/synth.hpp"
#include "mstress/vtk_io.hpp"

namespace mstress {

struct DatasetConfig {
  GenConfig specimen;
  int32_t specimens = 20;
  int32_t patches_per_specimen = 10;
  // Leading fraction of specimens whose patches form the test split.
  double test_fraction = 0.2;
  int32_t subdivisions = 2;
  double pitch = 0.3;
  // Strain components are drawn uniformly at this scale; shear components
  // at half of it.
  double load_scale = 1e-3;
  // Patch cubes may extend this far beyond the box, letting patches
  // contain wall sections (indicator 0) next to void surfaces.
  double region_pad = 0.3;
  bool require_roi_vertices = true;

  void validate() const {
    if (specimens < 1) throw ConfigError("dataset: specimens must be >= 1");
    if (patches_per_specimen < 1)
      throw ConfigError("dataset: patches_per_specimen must be >= 1");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
      throw ConfigError("dataset: test_fraction must lie in [0,1)");
    if (subdivisions < 0 || subdivisions > 5)
      throw ConfigError("dataset: subdivisions must lie in [0,5]");
    if (!(pitch > 0.0)) throw ConfigError("dataset: pitch must be positive");
    if (!(load_scale > 0.0))
      throw ConfigError("dataset: load_scale must be positive");
    if (region_pad < 0.0)
      throw ConfigError("dataset: region_pad cannot be negative");
  }
};

struct DatasetEntry {
  std::string mesh_file;
  std::string meta_file;
  int32_t specimen = 0;
  int32_t index = 0;
  std::string split;
};

struct Manifest {
  int32_t format = 1;
  uint64_t seed = 0;
  std::string config_hash;
  double R = 0.0;
  std::vector<DatasetEntry> entries;
};

namespace detail {

inline void write_text_atomic(const std::filesystem::path& path,
                              const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp.string());
    os << text;
    if (!os) throw IoError("short write: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

inline std::string patch_stem(int32_t specimen, int32_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "patch_%04d_%02d", specimen, index);
  return buf;
}

}  // namespace detail

// Random symmetric macro strain: normal components at load_scale, shear
// components at half of it. Distinct loads per specimen drive the angular
// variety of the targets.
inline MacroLoad sample_load(double load_scale, Rng& rng) {
  MacroLoad load;
  for (int i = 0; i < 3; ++i) load.strain[size_t(i)] = rng.uniform(-1.0, 1.0) * load_scale;
  for (int i = 3; i < 6; ++i)
    load.strain[size_t(i)] = rng.uniform(-0.5, 0.5) * load_scale;
  return load;
}

// Writes one normalized patch as mesh plus metadata. The mesh carries the
// normalized input field "S", the normalized target "S_target", the void
// indicator, and the ROI mask; the metadata holds everything needed to
// rebuild the Patch struct.
inline void save_patch(const Patch& p, const MacroLoad& load,
                       const std::filesystem::path& mesh_path,
                       const std::filesystem::path& meta_path) {
  SurfaceMesh mesh = p.mesh;
  mesh.tensor_fields["S"] = p.macro;
  mesh.tensor_fields["S_target"] = p.micro;
  mesh.scalar_fields["micro_indicator"] = p.indicator;
  std::vector<double> roi(p.roi_mask.size());
  for (size_t i = 0; i < roi.size(); ++i) roi[i] = p.roi_mask[i] ? 1.0 : 0.0;
  mesh.scalar_fields["roi"] = roi;
  save_mesh(mesh, mesh_path.string(), "stress patch");

  nlohmann::json meta;
  meta["k"] = p.k;
  meta["R"] = p.R;
  meta["center"] = {p.center.x, p.center.y, p.center.z};
  const Aabb roi_box = p.roi_box();
  meta["roi_lo"] = {roi_box.lo.x, roi_box.lo.y, roi_box.lo.z};
  meta["roi_hi"] = {roi_box.hi.x, roi_box.hi.y, roi_box.hi.z};
  meta["seed"] = p.seed;
  meta["load_strain"] = load.strain;
  detail::write_text_atomic(meta_path, meta.dump(2) + "\n");
}

// Reads one patch back. Field-carrying mesh plus metadata reproduce the
// in-memory Patch exactly; the stored ROI mask is authoritative.
inline Patch load_patch(const std::filesystem::path& mesh_path,
                        const std::filesystem::path& meta_path) {
  Patch p;
  p.mesh = load_mesh(mesh_path.string());
  const size_t n = p.mesh.vertices.size();
  auto need_tensor = [&](const char* name) -> std::vector<Stress6> {
    auto it = p.mesh.tensor_fields.find(name);
    if (it == p.mesh.tensor_fields.end())
      throw IoError("patch mesh lacks tensor field '" + std::string(name) +
                    "': " + mesh_path.string());
    return it->second;
  };
  auto need_scalar = [&](const char* name) -> const std::vector<double>& {
    auto it = p.mesh.scalar_fields.find(name);
    if (it == p.mesh.scalar_fields.end())
      throw IoError("patch mesh lacks scalar field '" + std::string(name) +
                    "': " + mesh_path.string());
    return it->second;
  };
  p.macro = need_tensor("S");
  p.micro = need_tensor("S_target");
  p.indicator = need_scalar("micro_indicator");
  const auto& roi = need_scalar("roi");
  p.roi_mask.resize(n);
  for (size_t i = 0; i < n; ++i) p.roi_mask[i] = roi[i] != 0.0;

  nlohmann::json meta = detail::load_json_file(meta_path);
  try {
    p.k = meta.at("k").get<double>();
    p.R = meta.at("R").get<double>();
    auto c = meta.at("center");
    p.center = {c.at(0).get<double>(), c.at(1).get<double>(),
                c.at(2).get<double>()};
    p.seed = meta.at("seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad patch metadata " + meta_path.string() + ": " + e.what());
  }
  return p;
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& dir) {
  nlohmann::json j;
  j["format"] = m.format;
  j["seed"] = m.seed;
  j["config_hash"] = m.config_hash;
  j["R"] = m.R;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json je;
    je["mesh"] = e.mesh_file;
    je["meta"] = e.meta_file;
    je["specimen"] = e.specimen;
    je["index"] = e.index;
    je["split"] = e.split;
    j["entries"].push_back(je);
  }
  detail::write_text_atomic(dir / "manifest.json", j.dump(2) + "\n");
}

inline Manifest load_manifest(const std::filesystem::path& dir) {
  nlohmann::json j = detail::load_json_file(dir / "manifest.json");
  Manifest m;
  try {
    m.format = j.at("format").get<int32_t>();
    if (m.format != 1)
      throw IoError("unsupported dataset format " + std::to_string(m.format));
    m.seed = j.at("seed").get<uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.R = j.at("R").get<double>();
    for (const auto& je : j.at("entries")) {
      DatasetEntry e;
      e.mesh_file = je.at("mesh").get<std::string>();
      e.meta_file = je.at("meta").get<std::string>();
      e.specimen = je.at("specimen").get<int32_t>();
      e.index = je.at("index").get<int32_t>();
      e.split = je.at("split").get<std::string>();
      if (e.split != "train" && e.split != "test")
        throw IoError("manifest split must be train or test, got " + e.split);
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad manifest in " + dir.string() + ": " + e.what());
  }
  return m;
}

// Generates the full dataset under `dir`. Deterministic in (config, seed):
// specimen geometries, loads, and patch draws all derive from fixed
// substreams. Returns the manifest that was written.
inline Manifest generate_dataset(const DatasetConfig& cfg,
                                 const std::filesystem::path& dir,
                                 uint64_t seed,
                                 const std::string& config_hash = "") {
  cfg.validate();
  std::filesystem::create_directories(dir);
  const auto el = ElasticConstants::from_young_poisson(1.0, 0.3);
  const int32_t test_specimens =
      int32_t(std::lround(cfg.test_fraction * double(cfg.specimens)));

  Manifest m;
  m.seed = seed;
  m.config_hash = config_hash;
  m.R = cfg.specimen.void_radius;
  for (int32_t s = 0; s < cfg.specimens; ++s) {
    const uint64_t spec_seed = Rng::substream(seed, uint64_t(3 * s)).next_u64();
    SpecimenGeometry spec = sample_specimen(cfg.specimen, spec_seed);
    Rng load_rng = Rng::substream(seed, uint64_t(3 * s + 1));
    MacroLoad load = sample_load(cfg.load_scale, load_rng);
    SurfaceMesh mesh = build_surface_mesh(spec, cfg.subdivisions, cfg.pitch);

    PatchConfig pc;
    pc.R = cfg.specimen.void_radius;
    pc.count = cfg.patches_per_specimen;
    const Vec3 pad{cfg.region_pad, cfg.region_pad, cfg.region_pad};
    pc.region = {spec.box.lo - pad, spec.box.hi + pad};
    pc.require_roi_vertices = cfg.require_roi_vertices;
    const uint64_t patch_seed =
        Rng::substream(seed, uint64_t(3 * s + 2)).next_u64();
    std::vector<Patch> patches =
        extract_patches(mesh, spec, load, el, pc, patch_seed);

    const std::string split = s < test_specimens ? "test" : "train";
    for (int32_t i = 0; i < int32_t(patches.size()); ++i) {
      Patch& p = patches[size_t(i)];
      normalize_patch(p);
      const std::string stem = detail::patch_stem(s, i);
      save_patch(p, load, dir / (stem + ".vtk"), dir / (stem + ".json"));
      DatasetEntry e;
      e.mesh_file = stem + ".vtk";
      e.meta_file = stem + ".json";
      e.specimen = s;
      e.index = i;
      e.split = split;
      m.entries.push_back(std::move(e));
    }
  }
  save_manifest(m, dir);
  return m;
}

// Loads every patch of one split, in manifest order.
inline std::vector<Patch> load_split(const std::filesystem::path& dir,
                                     const Manifest& m,
                                     const std::string& split) {
  std::vector<Patch> out;
  for (const auto& e : m.entries)
    if (e.split == split)
      out.push_back(load_patch(dir / e.mesh_file, dir / e.meta_file));
  return out;
}

}  // namespace mstress
