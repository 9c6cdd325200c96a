#pragma once

// JSON and CSV emission for the metric and flow results.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "porogan/morphology.hpp"
#include "porogan/stokes.hpp"

namespace porogan {

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string hash_hex(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

/// Shortest text that round-trips the double.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

// ---------------------------------------------------------------------------
// CSV (RFC 4180)

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row(header); }

  void row(const std::vector<std::string>& fields) {
    require(fields.size() == columns_, Errc::internal, "CSV row has the wrong number of fields");
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ += ',';
      out_ += csv_field(fields[i]);
    }
    out_ += "\r\n";
  }

  const std::string& str() const { return out_; }

 private:
  std::size_t columns_;
  std::string out_;
};

inline std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

// ---------------------------------------------------------------------------
// Morphology

inline nlohmann::json to_json(const CovarianceCurve& c) {
  return {{"direction", direction_name(c.direction)}, {"lags", c.lags}, {"values", c.values}};
}

inline nlohmann::json to_json(const MorphologyReport& r) {
  nlohmann::json j;
  j["dims"] = {r.dims.nx, r.dims.ny, r.dims.nz};
  j["voxel_size_um"] = r.voxel_size_um;
  j["porosity"] = {{"direct", r.porosity}, {"covariance", r.porosity_s2 ? nlohmann::json(*r.porosity_s2) : nullptr}};
  j["specific_surface_per_voxel"] = {
      {"direct", r.specific_surface.per_voxel},
      {"covariance", r.specific_surface_s2 ? nlohmann::json(r.specific_surface_s2->per_voxel) : nullptr}};
  j["specific_surface_per_um"] = {
      {"direct", r.specific_surface.per_um},
      {"covariance", r.specific_surface_s2 ? nlohmann::json(r.specific_surface_s2->per_um) : nullptr}};
  j["euler"] = {{"phase", r.euler_phase == VoxelGrid::pore ? "pore" : "grain"},
                {"complex", r.complex == EulerComplex::closed_cubes ? "closed_cubes" : "voxel_centres"},
                {"V", r.euler.vertices},
                {"E", r.euler.edges},
                {"F", r.euler.faces},
                {"O", r.euler.objects},
                {"chi", r.euler.chi()},
                {"chi_v", r.euler_density},
                {"components", r.components}};
  if (r.chords)
    j["chord_length_voxels"] = {{"pore", r.chords->pore}, {"grain", r.chords->grain}, {"source", "covariance"}};
  else
    j["chord_length_voxels"] = nullptr;
  return j;
}

/// One row per lag: lag, S2_x, S2_y, S2_z, S2_radial. Missing curves or lags
/// beyond a curve's range are left empty.
inline std::string covariance_csv(const std::vector<const CovarianceCurve*>& curves) {
  CsvWriter w({"lag", "S2_x", "S2_y", "S2_z", "S2_radial"});
  std::size_t rmax = 0;
  for (auto* c : curves)
    if (c) rmax = std::max(rmax, c->r_max());
  for (std::size_t r = 0; r <= rmax; ++r) {
    std::vector<std::string> row{std::to_string(r), "", "", "", ""};
    for (auto* c : curves) {
      if (!c || r >= c->values.size()) continue;
      row[1 + static_cast<std::size_t>(c->direction)] = format_number(c->values[r]);
    }
    w.row(row);
  }
  return w.str();
}

inline const std::vector<std::string>& morphology_columns() {
  static const std::vector<std::string> cols{"porosity",         "porosity_s2",      "sv_direct_per_voxel",
                                             "sv_s2_per_voxel",  "sv_direct_per_um", "sv_s2_per_um",
                                             "chi",              "chi_v",            "components",
                                             "chord_pore_voxels", "chord_grain_voxels"};
  return cols;
}

inline std::vector<std::optional<double>> morphology_values(const MorphologyReport& r) {
  auto s2 = [&](auto f) -> std::optional<double> {
    if (!r.specific_surface_s2) return std::nullopt;
    return f(*r.specific_surface_s2);
  };
  return {r.porosity,
          r.porosity_s2,
          r.specific_surface.per_voxel,
          s2([](const SpecificSurface& s) { return s.per_voxel; }),
          r.specific_surface.per_um,
          s2([](const SpecificSurface& s) { return s.per_um; }),
          static_cast<double>(r.euler.chi()),
          r.euler_density,
          static_cast<double>(r.components),
          r.chords ? std::optional<double>(r.chords->pore) : std::nullopt,
          r.chords ? std::optional<double>(r.chords->grain) : std::nullopt};
}

// ---------------------------------------------------------------------------
// Permeability

inline nlohmann::json to_json(const PermeabilityResult& r) {
  nlohmann::json j{{"axis", axis_name(r.axis)},
                   {"porosity", r.porosity},
                   {"effective_porosity", r.effective_porosity},
                   {"permeable", r.permeable}};
  if (r.permeable)
    j["k"] = {{"voxel2", r.k_voxel2}, {"um2", r.k_um2}, {"mD", r.k_mD}};
  else
    j["k"] = nullptr;
  j["mean_velocity"] = r.mean_velocity;
  j["residuals"] = {{"max_divergence", r.max_divergence}, {"momentum", r.momentum_residual}};
  j["iterations"] = {{"outer", r.iterations}, {"inner", r.inner_iterations}};
  return j;
}

inline std::vector<std::string> permeability_columns() {
  return {"sample_id", "axis", "porosity", "effective_porosity", "k_voxel2", "k_um2", "k_mD",
          "iterations", "max_divergence", "momentum_residual"};
}

inline std::vector<std::string> permeability_row(const std::string& id, const PermeabilityResult& r) {
  return {id,
          axis_name(r.axis),
          format_number(r.porosity),
          format_number(r.effective_porosity),
          format_number(r.k_voxel2),
          format_number(r.k_um2),
          format_number(r.k_mD),
          std::to_string(r.iterations),
          format_number(r.max_divergence),
          format_number(r.momentum_residual)};
}

// ---------------------------------------------------------------------------
// Summary statistics

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single value
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.count = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

/// Column-wise summaries over rows with possibly missing entries.
inline std::vector<Summary> summarize_columns(const std::vector<std::vector<std::optional<double>>>& rows,
                                              std::size_t columns) {
  std::vector<Summary> out(columns);
  for (std::size_t c = 0; c < columns; ++c) {
    std::vector<double> v;
    for (const auto& r : rows)
      if (c < r.size() && r[c]) v.push_back(*r[c]);
    out[c] = summarize(v);
  }
  return out;
}

inline nlohmann::json to_json(const Summary& s) { return {{"count", s.count}, {"mean", s.mean}, {"std", s.stddev}}; }

}  // namespace porogan
