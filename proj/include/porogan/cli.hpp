#pragma once

// Subcommands of the porogan tool. Every command takes a RunConfig, writes
// into the output directory and returns a process exit code.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "porogan/checkpoint.hpp"
#include "porogan/error.hpp"
#include "porogan/fetch.hpp"
#include "porogan/gan.hpp"
#include "porogan/morphology.hpp"
#include "porogan/parallel.hpp"
#include "porogan/report.hpp"
#include "porogan/stokes.hpp"
#include "porogan/voxel.hpp"

namespace porogan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* output_root_env = "POROGAN_OUTPUT_ROOT";

struct RunConfig {
  std::string command;
  std::string out = ".";
  std::string volume;
  std::string meta;
  std::string manifest;
  std::string checkpoint;
  std::string resume;
  std::vector<std::string> inputs;
  std::vector<std::string> training_set;
  std::vector<std::string> realizations;

  std::size_t patch = 0;  // 0: command default (64 for extract, manifest value for train)
  std::size_t stride = 16;
  bool downsample = false;
  bool write_patches = false;

  std::size_t nz = 100, ng = 64, nd = 16;
  double lr = 2e-4, beta1 = 0.5;
  std::size_t batch = 32, d_steps = 1;
  std::string stabilization = "none";
  std::string head = "tanh";
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::size_t iterations = 1000, epochs = 0, preview_every = 0, checkpoint_every = 0;

  std::string axis = "all";
  std::size_t rmax = 0;  // 0: min(32, min extent / 2)
  std::size_t count = 1, latent_spatial = 1;
  std::string euler_complex = "closed-cubes";
  std::string euler_phase = "pore";
  bool perm = false;
  double viscosity = 1.0, pressure_drop = 1.0;
  std::size_t max_iterations = 100000;

  std::size_t edge = 64, period = 8;
  double porosity = 0.4, voxel_size = 1.0;

  std::string url, sha256, preset;
  int pore_value = 255;
};

/// Every field that can change an output; the output directory and thread
/// count are excluded.
inline json to_json(const RunConfig& c) {
  return {{"command", c.command},
          {"volume", c.volume},
          {"meta", c.meta},
          {"manifest", c.manifest},
          {"checkpoint", c.checkpoint},
          {"resume", c.resume},
          {"inputs", c.inputs},
          {"training_set", c.training_set},
          {"realizations", c.realizations},
          {"patch", c.patch},
          {"stride", c.stride},
          {"downsample", c.downsample},
          {"write_patches", c.write_patches},
          {"nz", c.nz},
          {"ng", c.ng},
          {"nd", c.nd},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"batch", c.batch},
          {"d_steps", c.d_steps},
          {"stabilization", c.stabilization},
          {"head", c.head},
          {"seed", c.seed},
          {"iterations", c.iterations},
          {"epochs", c.epochs},
          {"preview_every", c.preview_every},
          {"checkpoint_every", c.checkpoint_every},
          {"axis", c.axis},
          {"rmax", c.rmax},
          {"count", c.count},
          {"latent_spatial", c.latent_spatial},
          {"euler_complex", c.euler_complex},
          {"euler_phase", c.euler_phase},
          {"perm", c.perm},
          {"viscosity", c.viscosity},
          {"pressure_drop", c.pressure_drop},
          {"max_iterations", c.max_iterations},
          {"edge", c.edge},
          {"period", c.period},
          {"porosity", c.porosity},
          {"voxel_size", c.voxel_size},
          {"url", c.url},
          {"sha256", c.sha256},
          {"preset", c.preset},
          {"pore_value", c.pore_value}};
}

inline std::string config_hash(const RunConfig& c) { return hash_hex(to_json(c).dump()); }

struct Streams {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

// ---------------------------------------------------------------------------
// Helpers

inline fs::path output_dir(const RunConfig& c) {
  fs::path p(c.out);
  if (const char* root = std::getenv(output_root_env); root && *root && p.is_relative()) p = fs::path(root) / p;
  fs::create_directories(p);
  return p;
}

inline fs::path existing(const std::string& path, const char* what) {
  require(!path.empty(), Errc::path, std::string("no ") + what + " given");
  require(fs::exists(path), Errc::path, std::string(what) + " " + path + " does not exist");
  return fs::path(path);
}

inline VolumeMeta volume_meta(const fs::path& volume, const std::string& meta_override = {}) {
  const fs::path meta = meta_override.empty() ? meta_path_for(volume) : fs::path(meta_override);
  require(fs::exists(meta), Errc::path, "metadata " + meta.string() + " does not exist");
  return read_meta(meta);
}

inline VoxelGrid load_volume(const fs::path& volume, const std::string& meta_override = {}) {
  return load_raw(existing(volume.string(), "volume"), volume_meta(volume, meta_override));
}

inline std::string sample_id(const std::string& path) { return fs::path(path).stem().string(); }

inline std::string file_hash(const fs::path& p) {
  auto bytes = detail::read_file(p);
  return hash_hex({bytes.data(), bytes.size()});
}

inline void write_text(const fs::path& p, const std::string& s) { detail::write_file_atomic(p, s); }
inline void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

/// Timestamps and the command line live here so the other outputs stay
/// reproducible byte for byte.
inline void write_provenance(const fs::path& dir, const RunConfig& c, const json& extra = json::object()) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  json j{{"command", c.command}, {"config_hash", config_hash(c)}, {"seed", c.seed},
         {"threads", c.threads}, {"timestamp_utc", stamp},        {"config", to_json(c)}};
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  write_json(dir / "provenance.json", j);
}

inline std::map<std::string, std::string> provenance_keys(const RunConfig& c) {
  return {{"config_hash", config_hash(c)}, {"seed", std::to_string(c.seed)}};
}

inline GanConfig gan_config(const RunConfig& c, std::size_t training_size) {
  GanConfig g;
  g.training_size = training_size;
  g.nz = c.nz;
  g.ng = c.ng;
  g.nd = c.nd;
  g.learning_rate = c.lr;
  g.beta1 = c.beta1;
  g.batch_size = c.batch;
  g.d_steps_per_g_step = c.d_steps;
  g.stabilization = parse_stabilization(c.stabilization);
  g.head = parse_head(c.head);
  g.seed = c.seed;
  g.validate();
  return g;
}

inline std::vector<Axis> axes_of(const std::string& s) {
  if (s == "all") return {Axis::x, Axis::y, Axis::z};
  return {parse_axis(s)};
}

inline EulerComplex parse_complex(const std::string& s) {
  if (s == "closed-cubes") return EulerComplex::closed_cubes;
  if (s == "voxel-centres" || s == "voxel-centers") return EulerComplex::voxel_centres;
  fail(Errc::config, "unknown Euler complex '" + s + "' (closed-cubes, voxel-centres)");
}

inline std::uint8_t parse_phase(const std::string& s) {
  if (s == "pore") return VoxelGrid::pore;
  if (s == "grain") return VoxelGrid::grain;
  fail(Errc::config, "unknown phase '" + s + "' (pore, grain)");
}

struct Failure {
  std::string sample_id;
  std::string error;
  std::string message;
};

inline json to_json(const std::vector<Failure>& fs) {
  json a = json::array();
  for (const auto& f : fs) a.push_back({{"sample_id", f.sample_id}, {"error", f.error}, {"message", f.message}});
  return a;
}

/// Runs `body` and records a failure instead of propagating a library error.
template <typename F>
bool isolated(const std::string& id, std::vector<Failure>& failures, Streams& io, F&& body) {
  try {
    body();
    return true;
  } catch (const Error& e) {
    failures.push_back({id, std::string(errc_name(e.code())), e.what()});
    io.err << id << ": " << e.what() << "\n";
    return false;
  }
}

/// Batch commands succeed when at least one volume was processed.
inline int batch_exit(std::size_t processed, const std::vector<Failure>& failures) {
  if (processed > 0 || failures.empty()) return exit_code::ok;
  return exit_code::data;
}

// ---------------------------------------------------------------------------
// synth

inline int cmd_synth(const RunConfig& c, Streams io) {
  const auto dir = output_dir(c);
  auto grid = sphere_lattice(c.edge, c.period, c.porosity, c.voxel_size);
  const fs::path path = dir / "synthetic.raw";
  auto keys = provenance_keys(c);
  keys["kind"] = "sphere_lattice";
  save_raw(grid, path, keys);
  write_provenance(dir, c);
  io.out << "wrote " << path.string() << " (" << to_string(grid.dims()) << ", porosity "
         << format_number(grid.porosity()) << ")\n";
  return exit_code::ok;
}

// ---------------------------------------------------------------------------
// extract

inline int cmd_extract(const RunConfig& c, Streams io) {
  const auto dir = output_dir(c);
  const std::size_t patch = c.patch ? c.patch : 64;
  fs::path source = fs::absolute(existing(c.volume, "volume"));
  VoxelGrid grid = load_volume(source, c.meta);
  if (c.downsample) {
    grid = downsample_by_two(grid);
    source = fs::absolute(dir / "downsampled.raw");
    save_raw(grid, source, provenance_keys(c));
  }
  const auto origins = patch_origins(grid.dims(), patch, c.stride);
  json manifest{{"source", source.string()},
                {"dims", {grid.nx(), grid.ny(), grid.nz()}},
                {"voxel_size_um", grid.voxel_size_um()},
                {"downsampled", c.downsample},
                {"patch", patch},
                {"stride", c.stride},
                {"count", origins.size()},
                {"source_hash", hash_hex({reinterpret_cast<const char*>(grid.values().data()), grid.size()})},
                {"config_hash", config_hash(c)},
                {"seed", c.seed}};
  if (c.write_patches) {
    json files = json::array();
    for (std::size_t i = 0; i < origins.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "patch_%06zu.raw", i);
      auto keys = provenance_keys(c);
      keys["origin"] = std::to_string(origins[i][0]) + "," + std::to_string(origins[i][1]) + "," +
                       std::to_string(origins[i][2]);
      save_raw(extract_patch(grid, origins[i], patch), dir / "patches" / name, keys);
      files.push_back(std::string("patches/") + name);
    }
    manifest["files"] = files;
  }
  write_json(dir / "manifest.json", manifest);
  write_provenance(dir, c);
  io.out << "patches: " << origins.size() << "\n";
  return exit_code::ok;
}

struct LoadedManifest {
  json manifest;
  VoxelGrid source;
  std::size_t patch;
  std::size_t stride;
};

inline LoadedManifest load_manifest(const std::string& path) {
  const auto p = existing(path, "manifest");
  json m;
  try {
    std::ifstream in(p);
    m = json::parse(in);
  } catch (const json::exception& e) {
    fail(Errc::io, "unreadable manifest " + p.string() + ": " + e.what());
  }
  LoadedManifest out;
  try {
    out.patch = m.at("patch").get<std::size_t>();
    out.stride = m.at("stride").get<std::size_t>();
    out.source = load_volume(m.at("source").get<std::string>());
    require(patch_count(out.source.dims(), out.patch, out.stride) == m.at("count").get<std::size_t>(), Errc::io,
            "manifest count does not match its source volume");
  } catch (const json::exception& e) {
    fail(Errc::io, "malformed manifest " + p.string() + ": " + e.what());
  }
  out.manifest = std::move(m);
  return out;
}

// ---------------------------------------------------------------------------
// train

inline std::string training_log_csv(const TrainState& st, const std::string& hash, std::uint64_t seed) {
  CsvWriter w({"iteration", "loss_d", "loss_g", "preview_porosity", "config_hash", "seed"});
  std::size_t pi = 0;
  std::optional<double> preview;
  for (std::size_t i = 0; i < st.loss_d.size(); ++i) {
    const std::size_t it = i + 1;
    while (pi < st.previews.size() && st.previews[pi].iteration <= it) preview = st.previews[pi++].porosity;
    w.row({std::to_string(it), format_number(st.loss_d[i]), format_number(st.loss_g[i]), opt_number(preview), hash,
           std::to_string(seed)});
  }
  return w.str();
}

inline int cmd_train(const RunConfig& c, Streams io) {
  const auto dir = output_dir(c);
  auto data = load_manifest(c.manifest);
  require(c.patch == 0 || c.patch == data.patch, Errc::config,
          "--patch " + std::to_string(c.patch) + " disagrees with the manifest patch " + std::to_string(data.patch));
  PatchDataset dataset(std::move(data.source), data.patch, data.stride);
  const std::string hash = config_hash(c);

  std::unique_ptr<Trainer<float>> trainer;
  if (!c.resume.empty()) {
    trainer = load_checkpoint(existing(c.resume, "checkpoint")).trainer;
  } else {
    trainer = std::make_unique<Trainer<float>>(gan_config(c, data.patch));
  }
  const json echo = porogan::to_json(trainer->config());
  io.out << "config: " << echo.dump() << "\n";
  write_json(dir / "config.json", {{"gan", echo}, {"run", to_json(c)}, {"config_hash", hash}});

  const json extra{{"config_hash", hash},
                   {"seed", c.seed},
                   {"voxel_size_um", dataset.source().voxel_size_um()},
                   {"manifest", fs::absolute(c.manifest).string()}};
  fs::path last_checkpoint;
  auto checkpoint = [&](Trainer<float>& tr) {
    char name[40];
    std::snprintf(name, sizeof name, "ckpt_%07zu.pgan", tr.state().iteration);
    last_checkpoint = dir / "checkpoints" / name;
    save_checkpoint(tr, last_checkpoint, extra);
    save_checkpoint(tr, dir / "checkpoint.pgan", extra);
    write_text(dir / "train_log.csv", training_log_csv(tr.state(), hash, c.seed));
  };

  TrainOptions opt;
  opt.iterations = c.epochs ? iterations_for_epochs(c.epochs, dataset.size(), trainer->config().batch_size)
                            : c.iterations;
  opt.preview_every = c.preview_every;
  opt.preview_seed = c.seed + 1;
  opt.checkpoint_every = c.checkpoint_every;
  opt.on_checkpoint = checkpoint;
  std::size_t previews_written = trainer->state().previews.size();
  opt.on_iteration = [&](const IterationLog&, Trainer<float>& tr) {
    if (tr.state().previews.size() == previews_written) return;
    previews_written = tr.state().previews.size();
    auto grid = sample(tr.generator(), 1, 1, opt.preview_seed, dataset.source().voxel_size_um()).front();
    char name[40];
    std::snprintf(name, sizeof name, "preview_%07zu.raw", tr.state().iteration);
    auto keys = provenance_keys(c);
    keys["iteration"] = std::to_string(tr.state().iteration);
    save_gray_raw(grid, dir / "previews" / name, keys);
  };

  io.out << "training " << opt.iterations << " iterations on " << dataset.size() << " patches\n";
  try {
    train(*trainer, dataset, opt);
  } catch (const Error& e) {
    write_text(dir / "train_log.csv", training_log_csv(trainer->state(), hash, c.seed));
    if (e.code() != Errc::divergence) throw;
    fail(Errc::divergence, std::string(e.what()) + "; last checkpoint: " +
                               (last_checkpoint.empty() ? std::string("none") : last_checkpoint.string()));
  }
  checkpoint(*trainer);
  write_provenance(dir, c);
  io.out << "checkpoint: " << last_checkpoint.string() << "\n";
  return exit_code::ok;
}

// ---------------------------------------------------------------------------
// sample / postprocess

inline int cmd_sample(const RunConfig& c, Streams io) {
  const auto dir = output_dir(c);
  const auto ckpt_path = existing(c.checkpoint, "checkpoint");
  auto loaded = load_checkpoint(ckpt_path);
  auto& gen = loaded.trainer->generator();
  const double voxel = loaded.extra.value("voxel_size_um", 1.0);
  const std::string ckpt_hash = file_hash(ckpt_path);
  auto grids = sample(gen, c.latent_spatial, c.count, c.seed, voxel);
  json files = json::array();
  for (std::size_t i = 0; i < grids.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu.raw", i);
    auto keys = provenance_keys(c);
    keys["checkpoint_hash"] = ckpt_hash;
    keys["index"] = std::to_string(i);
    keys["latent_spatial"] = std::to_string(c.latent_spatial);
    save_gray_raw(grids[i], dir / name, keys);
    files.push_back({{"file", name}, {"hash", file_hash(dir / name)}, {"index", i}});
  }
  write_json(dir / "samples.json", {{"checkpoint_hash", ckpt_hash},
                                    {"config_hash", config_hash(c)},
                                    {"seed", c.seed},
                                    {"latent_spatial", c.latent_spatial},
                                    {"edge", grids.empty() ? 0 : grids.front().nx()},
                                    {"samples", files}});
  write_provenance(dir, c, {{"checkpoint_hash", ckpt_hash}});
  io.out << "sampled " << grids.size() << " volumes of edge " << (grids.empty() ? 0 : grids.front().nx()) << "\n";
  return exit_code::ok;
}

inline int cmd_postprocess(const RunConfig& c, Streams io) {
  const auto dir = output_dir(c);
  require(!c.inputs.empty(), Errc::path, "no --input volumes given");
  std::vector<Failure> failures;
  json results = json::array();
  std::size_t done = 0;
  for (const auto& in : c.inputs) {
    const auto id = sample_id(in);
    isolated(id, failures, io, [&] {
      const auto path = existing(in, "volume");
      auto gray = load_gray_raw(path, volume_meta(path));
      auto seg = otsu_segment(median_filter_3(gray));
      auto keys = provenance_keys(c);
      keys["source_hash"] = file_hash(path);
      save_raw(seg.grid, dir / (id + "_seg.raw"), keys);
      results.push_back({{"sample_id", id},
                         {"file", id + "_seg.raw"},
                         {"threshold", seg.threshold},
                         {"porosity", seg.grid.porosity()}});
      ++done;
    });
  }
  write_json(dir / "postprocess.json",
             {{"config_hash", config_hash(c)}, {"seed", c.seed}, {"results", results}, {"failures", to_json(failures)}});
  write_provenance(dir, c);
  io.out << "segmented " << done << " of " << c.inputs.size() << " volumes\n";
  return batch_exit(done, failures);
}

// ---------------------------------------------------------------------------
// stats

struct VolumeStats {
  std::string id;
  MorphologyReport report;
  std::array<CovarianceCurve, 3> axis_curves;
  CovarianceCurve radial;
};

inline std::size_t effective_rmax(const RunConfig& c, const Dims& d) {
  const std::size_t cap = std::max<std::size_t>(1, d.min_extent() / 2);
  return c.rmax ? c.rmax : std::min<std::size_t>(32, cap);
}

inline VolumeStats volume_stats(const RunConfig& c, const std::string& path) {
  VolumeStats s;
  s.id = sample_id(path);
  auto grid = load_volume(existing(path, "volume"));
  const std::size_t r = effective_rmax(c, grid.dims());
  s.radial = radial_average_covariance(grid, r);
  for (int a = 0; a < 3; ++a) {
    const auto axis = static_cast<Axis>(a);
    s.axis_curves[a] = two_point_probability(grid, axis, std::min(r, grid.dims().extent(axis) - 1));
  }
  s.report = analyze(grid, r, &s.radial, parse_complex(c.euler_complex));
  if (parse_phase(c.euler_phase) != VoxelGrid::pore) {
    auto alt = minkowski_functionals(grid, VoxelGrid::grain, s.report.complex);
    s.report.euler = alt.euler;
    s.report.euler_density = alt.euler_density;
    s.report.components = alt.components;
    s.report.euler_phase = VoxelGrid::grain;
  }
  return s;
}

inline std::vector<std::string> stats_row(const VolumeStats& s, const std::string& hash, std::uint64_t seed) {
  std::vector<std::string> row{s.id};
  for (const auto& v : morphology_values(s.report)) row.push_back(opt_number(v));
  row.push_back(hash);
  row.push_back(std::to_string(seed));
  return row;
}

inline std::vector<std::string> stats_header() {
  std::vector<std::string> h{"sample_id"};
  for (const auto& col : morphology_columns()) h.push_back(col);
  h.push_back("config_hash");
  h.push_back("seed");
  return h;
}

inline json summary_json(const std::vector<VolumeStats>& stats) {
  std::vector<std::vector<std::optional<double>>> rows;
  for (const auto& s : stats) rows.push_back(morphology_values(s.report));
  const auto sums = summarize_columns(rows, morphology_columns().size());
  json j = json::object();
  for (std::size_t i = 0; i < sums.size(); ++i) j[morphology_columns()[i]] = porogan::to_json(sums[i]);
  return j;
}

inline int cmd_stats(const RunConfig& c, Streams io) {
  const auto dir = output_dir(c);
  require(!c.inputs.empty(), Errc::path, "no --input volumes given");
  const std::string hash = config_hash(c);
  std::vector<Failure> failures;
  std::vector<VolumeStats> stats;
  for (const auto& in : c.inputs) {
    isolated(sample_id(in), failures, io, [&] {
      auto s = volume_stats(c, in);
      json j = porogan::to_json(s.report);
      j["sample_id"] = s.id;
      j["config_hash"] = hash;
      j["seed"] = c.seed;
      write_json(dir / (s.id + ".morphology.json"), j);
      write_text(dir / (s.id + ".s2.csv"),
                 covariance_csv({&s.axis_curves[0], &s.axis_curves[1], &s.axis_curves[2], &s.radial}));
      stats.push_back(std::move(s));
    });
  }
  CsvWriter w(stats_header());
  for (const auto& s : stats) w.row(stats_row(s, hash, c.seed));
  write_text(dir / "stats.csv", w.str());
  write_json(dir / "summary.json", {{"config_hash", hash},
                                    {"seed", c.seed},
                                    {"count", stats.size()},
                                    {"summary", summary_json(stats)},
                                    {"failures", to_json(failures)}});
  write_provenance(dir, c);
  io.out << "measured " << stats.size() << " of " << c.inputs.size() << " volumes\n";
  return batch_exit(stats.size(), failures);
}

// ---------------------------------------------------------------------------
// perm

inline FlowOptions flow_options(const RunConfig& c, Axis axis) {
  FlowOptions o;
  o.axis = axis;
  o.viscosity = c.viscosity;
  o.pressure_drop = c.pressure_drop;
  o.max_iterations = c.max_iterations;
  return o;
}

struct PermRow {
  std::string id;
  PermeabilityResult result;
};

/// Solves each requested axis of one volume; impermeable axes become failures.
inline std::vector<PermRow> volume_permeability(const RunConfig& c, const std::string& path,
                                                std::vector<Failure>& failures, Streams& io) {
  const auto id = sample_id(path);
  std::vector<PermRow> rows;
  std::optional<VoxelGrid> grid;
  if (!isolated(id, failures, io, [&] { grid = load_volume(existing(path, "volume")); })) return rows;
  for (Axis a : axes_of(c.axis)) {
    isolated(id, failures, io, [&] {
      auto r = measure_permeability(*grid, flow_options(c, a));
      require(r.permeable, Errc::impermeable,
              std::string("no pore component spans the volume along ") + axis_name(a));
      rows.push_back({id, r});
    });
  }
  return rows;
}

inline int cmd_perm(const RunConfig& c, Streams io) {
  const auto dir = output_dir(c);
  require(!c.inputs.empty(), Errc::path, "no --input volumes given");
  const std::string hash = config_hash(c);
  std::vector<Failure> failures;
  std::vector<PermRow> rows;
  for (const auto& in : c.inputs) {
    auto r = volume_permeability(c, in, failures, io);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  auto header = permeability_columns();
  header.push_back("config_hash");
  header.push_back("seed");
  CsvWriter w(header);
  json results = json::array();
  for (const auto& r : rows) {
    auto row = permeability_row(r.id, r.result);
    row.push_back(hash);
    row.push_back(std::to_string(c.seed));
    w.row(row);
    json j = porogan::to_json(r.result);
    j["sample_id"] = r.id;
    results.push_back(j);
  }
  write_text(dir / "permeability.csv", w.str());
  write_json(dir / "permeability.json",
             {{"config_hash", hash}, {"seed", c.seed}, {"results", results}, {"failures", to_json(failures)}});
  write_provenance(dir, c);
  io.out << "permeability rows: " << rows.size() << ", failures: " << failures.size() << "\n";
  return batch_exit(rows.size(), failures);
}

// ---------------------------------------------------------------------------
// report

inline int cmd_report(const RunConfig& c, Streams io) {
  const auto dir = output_dir(c);
  require(!c.training_set.empty() || !c.realizations.empty(), Errc::path,
          "report needs --training-set and/or --realizations volumes");
  const std::string hash = config_hash(c);
  std::vector<Failure> failures;
  struct Set {
    std::string name;
    const std::vector<std::string>* files;
    std::vector<VolumeStats> stats;
    std::vector<PermRow> perm;
  };
  std::vector<Set> sets{{"training", &c.training_set, {}, {}}, {"realizations", &c.realizations, {}, {}}};
  for (auto& set : sets) {
    for (const auto& f : *set.files) {
      isolated(sample_id(f), failures, io, [&] { set.stats.push_back(volume_stats(c, f)); });
      if (c.perm) {
        auto r = volume_permeability(c, f, failures, io);
        set.perm.insert(set.perm.end(), r.begin(), r.end());
      }
    }
  }

  // Table layout: one row per quantity, mean and std per set.
  CsvWriter table({"quantity", "training_mean", "training_std", "training_n", "realizations_mean", "realizations_std",
                   "realizations_n"});
  std::vector<std::vector<Summary>> sums;
  for (const auto& set : sets) {
    std::vector<std::vector<std::optional<double>>> rows;
    for (const auto& s : set.stats) rows.push_back(morphology_values(s.report));
    sums.push_back(summarize_columns(rows, morphology_columns().size()));
  }
  for (std::size_t q = 0; q < morphology_columns().size(); ++q) {
    std::vector<std::string> row{morphology_columns()[q]};
    for (std::size_t s = 0; s < sets.size(); ++s) {
      const auto& sm = sums[s][q];
      row.push_back(sm.count ? format_number(sm.mean) : "");
      row.push_back(sm.count ? format_number(sm.stddev) : "");
      row.push_back(std::to_string(sm.count));
    }
    table.row(row);
  }
  write_text(dir / "table.csv", table.str());

  // Minkowski distributions: every sample of both sets.
  auto header = stats_header();
  header.insert(header.begin(), "set");
  CsvWriter samples(header);
  for (const auto& set : sets)
    for (const auto& s : set.stats) {
      auto row = stats_row(s, hash, c.seed);
      row.insert(row.begin(), set.name);
      samples.row(row);
    }
  write_text(dir / "samples.csv", samples.str());

  // Pooled covariance curves per set.
  for (const auto& set : sets) {
    if (set.stats.empty()) continue;
    std::array<std::vector<CovarianceCurve>, 4> parts;
    for (const auto& s : set.stats) {
      for (int a = 0; a < 3; ++a) parts[a].push_back(s.axis_curves[a]);
      parts[3].push_back(s.radial);
    }
    std::array<CovarianceCurve, 4> pooled;
    bool ok = true;
    for (int a = 0; a < 4; ++a) {
      ok = ok && isolated(set.name, failures, io, [&] { pooled[a] = pool_curves(parts[a]); });
    }
    if (ok) write_text(dir / ("s2_" + set.name + ".csv"), covariance_csv({&pooled[0], &pooled[1], &pooled[2], &pooled[3]}));
  }

  json bundle{{"config_hash", hash}, {"seed", c.seed}, {"sets", json::object()}};
  for (std::size_t s = 0; s < sets.size(); ++s) {
    json per = json::array();
    for (const auto& v : sets[s].stats) {
      json j = porogan::to_json(v.report);
      j["sample_id"] = v.id;
      per.push_back(j);
    }
    json summary = json::object();
    for (std::size_t q = 0; q < morphology_columns().size(); ++q)
      summary[morphology_columns()[q]] = porogan::to_json(sums[s][q]);
    json perm = json::array();
    for (const auto& r : sets[s].perm) {
      json j = porogan::to_json(r.result);
      j["sample_id"] = r.id;
      perm.push_back(j);
    }
    bundle["sets"][sets[s].name] = {{"count", sets[s].stats.size()},
                                    {"morphology", per},
                                    {"summary", summary},
                                    {"permeability", perm}};
  }
  bundle["failures"] = to_json(failures);

  if (c.perm) {
    CsvWriter cross({"set", "sample_id", "axis", "porosity", "effective_porosity", "k_voxel2", "k_mD", "config_hash",
                     "seed"});
    for (const auto& set : sets)
      for (const auto& r : set.perm)
        cross.row({set.name, r.id, axis_name(r.result.axis), format_number(r.result.porosity),
                   format_number(r.result.effective_porosity), format_number(r.result.k_voxel2),
                   format_number(r.result.k_mD), hash, std::to_string(c.seed)});
    write_text(dir / "crossplot.csv", cross.str());
  }
  write_json(dir / "report.json", bundle);
  write_provenance(dir, c);
  std::size_t n = 0;
  for (const auto& set : sets) n += set.stats.size();
  io.out << "report over " << sets[0].stats.size() << " training and " << sets[1].stats.size()
         << " realization volumes\n";
  return batch_exit(n, failures);
}

// ---------------------------------------------------------------------------
// fetch-dataset

inline int cmd_fetch(const RunConfig& c, Streams io) {
  const auto dir = output_dir(c);
  require(!c.url.empty(), Errc::config, "fetch-dataset needs --url");
  const std::string name = c.preset.empty() ? fs::path(c.url).filename().string() : c.preset + ".raw";
  const fs::path dest = dir / name;
  const std::string digest = fetch_file(c.url, dest, c.sha256);
  io.out << "sha256 " << digest << "  " << dest.string() << "\n";
  if (!c.preset.empty()) {
    auto preset = find_preset(c.preset);
    require(preset.has_value(), Errc::config, "unknown preset '" + c.preset + "' (berea, beadpack, ketton)");
    VolumeMeta meta{preset->dims, preset->voxel_size_um, c.pore_value, SampleFormat::uint8, {{"sha256", digest}}};
    write_text(meta_path_for(dest), format_meta(meta));
  }
  return exit_code::ok;
}

// ---------------------------------------------------------------------------
// Entry point

inline int dispatch(const RunConfig& c, Streams io) {
  set_num_threads(c.threads);
  if (c.command == "synth") return cmd_synth(c, io);
  if (c.command == "extract") return cmd_extract(c, io);
  if (c.command == "train") return cmd_train(c, io);
  if (c.command == "sample") return cmd_sample(c, io);
  if (c.command == "postprocess") return cmd_postprocess(c, io);
  if (c.command == "stats") return cmd_stats(c, io);
  if (c.command == "perm") return cmd_perm(c, io);
  if (c.command == "report") return cmd_report(c, io);
  if (c.command == "fetch-dataset") return cmd_fetch(c, io);
  fail(Errc::config, "unknown command '" + c.command + "'");
}

inline void add_options(CLI::App& app, RunConfig& c) {
  app.set_config("--config", "", "key = value configuration file");
  app.add_option("--out", c.out, "output directory (relative paths resolve under $POROGAN_OUTPUT_ROOT)");
  app.add_option("--volume", c.volume, "binary raw volume");
  app.add_option("--meta", c.meta, "sidecar metadata (default <volume>.meta)");
  app.add_option("--manifest", c.manifest, "patch manifest from extract");
  app.add_option("--checkpoint", c.checkpoint, "generator checkpoint");
  app.add_option("--resume", c.resume, "checkpoint to continue training from");
  app.add_option("--input", c.inputs, "input volumes")->expected(1, -1);
  app.add_option("--training-set", c.training_set, "training-image volumes for report")->expected(1, -1);
  app.add_option("--realizations", c.realizations, "generated volumes for report")->expected(1, -1);
  app.add_option("--patch", c.patch, "patch edge in voxels");
  app.add_option("--stride", c.stride, "patch spacing in voxels");
  app.add_flag("--downsample", c.downsample, "majority-downsample by two before extraction");
  app.add_flag("--write-patches", c.write_patches, "also write every patch as a raw file");
  app.add_option("--nz", c.nz, "latent channels");
  app.add_option("--ng", c.ng, "generator base filters");
  app.add_option("--nd", c.nd, "discriminator base filters");
  app.add_option("--lr", c.lr, "Adam learning rate");
  app.add_option("--beta1", c.beta1, "Adam beta1");
  app.add_option("--batch", c.batch, "batch size");
  app.add_option("--d-steps", c.d_steps, "discriminator steps per generator step");
  app.add_option("--stabilization", c.stabilization, "none | white-noise:SIGMA | label-smoothing:EPS");
  app.add_option("--head", c.head, "discriminator head: tanh | sigmoid");
  app.add_option("--seed", c.seed, "random seed");
  app.add_option("--threads", c.threads, "worker threads (0 = all cores)");
  app.add_option("--iterations", c.iterations, "generator iterations");
  app.add_option("--epochs", c.epochs, "passes over the patch set (overrides --iterations)");
  app.add_option("--preview-every", c.preview_every, "preview sample interval (0 = off)");
  app.add_option("--checkpoint-every", c.checkpoint_every, "checkpoint interval (0 = end only)");
  app.add_option("--axis", c.axis, "flow axis: x | y | z | all");
  app.add_option("--rmax", c.rmax, "largest covariance lag");
  app.add_option("--count", c.count, "number of samples");
  app.add_option("--latent-spatial", c.latent_spatial, "latent spatial extent s");
  app.add_option("--euler-complex", c.euler_complex, "closed-cubes | voxel-centres");
  app.add_option("--euler-phase", c.euler_phase, "pore | grain");
  app.add_flag("--perm", c.perm, "include permeability in report");
  app.add_option("--viscosity", c.viscosity, "fluid viscosity (model units)");
  app.add_option("--pressure-drop", c.pressure_drop, "imposed pressure drop (model units)");
  app.add_option("--max-iterations", c.max_iterations, "Stokes iteration cap");
  app.add_option("--edge", c.edge, "synthetic volume edge");
  app.add_option("--period", c.period, "synthetic lattice period");
  app.add_option("--porosity", c.porosity, "synthetic target porosity");
  app.add_option("--voxel-size", c.voxel_size, "synthetic voxel size in micrometres");
  app.add_option("--url", c.url, "dataset URL");
  app.add_option("--sha256", c.sha256, "expected SHA-256 of the download");
  app.add_option("--preset", c.preset, "write sidecar metadata for berea | beadpack | ketton");
  app.add_option("--pore-value", c.pore_value, "byte value of pore voxels for --preset");
}

inline int run(int argc, const char* const* argv, Streams io = {}) {
  CLI::App app{"porogan: volumetric GAN reconstruction of porous media"};
  app.require_subcommand(1);
  RunConfig c;
  add_options(app, c);
  const std::vector<std::pair<const char*, const char*>> commands{
      {"synth", "write a synthetic sphere-lattice volume"},
      {"extract", "build a patch manifest from a volume"},
      {"train", "train the GAN on a patch manifest"},
      {"sample", "draw gray volumes from a checkpoint"},
      {"postprocess", "median filter and Otsu-segment gray volumes"},
      {"stats", "covariance and Minkowski functionals"},
      {"perm", "Stokes permeability"},
      {"report", "compare training images against realizations"},
      {"fetch-dataset", "download a public volume and verify its checksum"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, io.out, io.err);
    return rc == 0 ? exit_code::ok : exit_code::config;
  }
  for (auto* sub : app.get_subcommands()) c.command = sub->get_name();
  try {
    return dispatch(c, io);
  } catch (const Error& e) {
    io.err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    io.err << "error: io: " << e.what() << "\n";
    return exit_code::io;
  } catch (const std::bad_alloc&) {
    io.err << "error: capacity: out of memory\n";
    return exit_code::io;
  }
}

inline int run(const std::vector<std::string>& args, Streams io = {}) {
  std::vector<const char*> argv{"porogan"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), io);
}

}  // namespace porogan::cli
