#pragma once

// Binary and grayscale voxel volumes: raw I/O, patch extraction, resampling,
// median filtering, Otsu segmentation and connected-component labeling.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "porogan/error.hpp"
#include "porogan/parallel.hpp"

namespace porogan {

enum class Axis { x = 0, y = 1, z = 2 };

inline const char* axis_name(Axis a) {
  switch (a) {
    case Axis::x: return "x";
    case Axis::y: return "y";
    case Axis::z: return "z";
  }
  return "?";
}

inline Axis parse_axis(const std::string& s) {
  if (s == "x" || s == "X" || s == "0") return Axis::x;
  if (s == "y" || s == "Y" || s == "1") return Axis::y;
  if (s == "z" || s == "Z" || s == "2") return Axis::z;
  fail(Errc::config, "unknown axis '" + s + "'");
}

struct Dims {
  std::size_t nx = 0, ny = 0, nz = 0;

  std::size_t count() const { return nx * ny * nz; }
  std::size_t operator[](std::size_t axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  std::size_t extent(Axis a) const { return (*this)[static_cast<std::size_t>(a)]; }
  std::size_t min_extent() const { return std::min({nx, ny, nz}); }
  bool operator==(const Dims&) const = default;
};

inline std::string to_string(const Dims& d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

namespace detail {
inline void check_dims(const Dims& d) {
  require(d.nx > 0 && d.ny > 0 && d.nz > 0, Errc::config,
          "volume dimensions must be positive, got " + to_string(d));
}
}  // namespace detail

/// Dense 3-D array in x-fastest storage order.
template <typename T>
class Volume {
 public:
  using value_type = T;

  Volume() = default;
  explicit Volume(Dims dims, T fill = T{}) : dims_(dims), data_(dims.count(), fill) {
    detail::check_dims(dims);
  }
  Volume(Dims dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
    detail::check_dims(dims);
    require(data_.size() == dims_.count(), Errc::size_mismatch,
            "volume of " + to_string(dims_) + " needs " + std::to_string(dims_.count()) +
                " values, got " + std::to_string(data_.size()));
  }

  const Dims& dims() const { return dims_; }
  std::size_t nx() const { return dims_.nx; }
  std::size_t ny() const { return dims_.ny; }
  std::size_t nz() const { return dims_.nz; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims_.nx * (y + dims_.ny * z);
  }
  const T& operator()(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }
  T& operator()(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }

  std::span<const T> values() const { return data_; }
  std::span<T> values() { return data_; }

  bool operator==(const Volume&) const = default;

 private:
  Dims dims_{};
  std::vector<T> data_;
};

/// Binary phase volume. 0 = grain (solid), 1 = pore (void).
class VoxelGrid : public Volume<std::uint8_t> {
 public:
  static constexpr std::uint8_t grain = 0;
  static constexpr std::uint8_t pore = 1;

  VoxelGrid() = default;
  explicit VoxelGrid(Dims dims, double voxel_size_um = 1.0, std::uint8_t fill = grain)
      : Volume(dims, fill), voxel_size_um_(voxel_size_um) {
    validate();
  }
  VoxelGrid(Dims dims, std::vector<std::uint8_t> phase, double voxel_size_um = 1.0)
      : Volume(dims, std::move(phase)), voxel_size_um_(voxel_size_um) {
    validate();
  }

  double voxel_size_um() const { return voxel_size_um_; }
  void set_voxel_size_um(double v) {
    require(v > 0.0, Errc::config, "voxel size must be positive");
    voxel_size_um_ = v;
  }

  bool is_pore(std::size_t x, std::size_t y, std::size_t z) const { return (*this)(x, y, z) == pore; }

  std::size_t pore_count() const {
    std::size_t n = 0;
    for (auto v : values()) n += v;
    return n;
  }
  double porosity() const { return static_cast<double>(pore_count()) / static_cast<double>(size()); }

  bool operator==(const VoxelGrid&) const = default;

 private:
  void validate() const {
    require(voxel_size_um_ > 0.0, Errc::config, "voxel size must be positive");
    for (auto v : values())
      require(v <= 1, Errc::config, "phase labels must be 0 or 1");
  }

  double voxel_size_um_ = 1.0;
};

/// Grayscale volume with values in [0, 1], e.g. raw generator output.
class GrayGrid : public Volume<float> {
 public:
  GrayGrid() = default;
  explicit GrayGrid(Dims dims, float fill = 0.0f, double voxel_size_um = 1.0)
      : Volume(dims, fill), voxel_size_um_(voxel_size_um) {
    validate();
  }
  GrayGrid(Dims dims, std::vector<float> values, double voxel_size_um = 1.0)
      : Volume(dims, std::move(values)), voxel_size_um_(voxel_size_um) {
    validate();
  }

  double voxel_size_um() const { return voxel_size_um_; }

 private:
  void validate() const {
    require(voxel_size_um_ > 0.0, Errc::config, "voxel size must be positive");
    for (float v : values())
      require(v >= 0.0f && v <= 1.0f, Errc::config, "gray values must lie in [0,1]");
  }

  double voxel_size_um_ = 1.0;
};

struct LabelGrid {
  Volume<std::uint32_t> labels;
  std::size_t component_count = 0;

  /// Voxel count of each component, indexed by label (entry 0 is background).
  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out(component_count + 1, 0);
    for (auto l : labels.values()) ++out[l];
    return out;
  }
};

// ---------------------------------------------------------------------------
// Raw volume I/O

enum class SampleFormat { uint8, float32 };

/// Sidecar metadata ("key = value" lines) describing a raw volume.
struct VolumeMeta {
  Dims dims{};
  double voxel_size_um = 1.0;
  int pore_value = 255;
  SampleFormat format = SampleFormat::uint8;
  std::map<std::string, std::string> extra;  // provenance and other passthrough keys
};

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// Parses UTF-8 "key = value" lines. '#' starts a comment.
inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::string t = trim(line);
    if (t.empty() || t.front() == '[') continue;
    auto eq = t.find('=');
    require(eq != std::string::npos, Errc::config, "line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    require(!key.empty(), Errc::config, "line " + std::to_string(lineno) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

namespace detail {
inline long long parse_int(const std::string& key, const std::string& s) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && p == s.data() + s.size(), Errc::config, "'" + key + "' is not an integer: " + s);
  return v;
}
inline double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    require(pos == s.size(), Errc::config, "'" + key + "' is not a number: " + s);
    return v;
  } catch (const std::logic_error&) {
    fail(Errc::config, "'" + key + "' is not a number: " + s);
  }
}
}  // namespace detail

inline VolumeMeta parse_meta(std::istream& in) {
  auto kv = parse_key_values(in);
  VolumeMeta meta;
  auto need = [&](const char* key) -> std::string {
    auto it = kv.find(key);
    require(it != kv.end(), Errc::config, std::string("metadata is missing '") + key + "'");
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto dim = [&](const char* key) {
    long long v = detail::parse_int(key, need(key));
    require(v > 0, Errc::config, std::string("metadata '") + key + "' must be positive");
    return static_cast<std::size_t>(v);
  };
  meta.dims = {dim("nx"), dim("ny"), dim("nz")};
  meta.voxel_size_um = detail::parse_double("voxel_size_um", need("voxel_size_um"));
  require(meta.voxel_size_um > 0.0, Errc::config, "metadata 'voxel_size_um' must be positive");
  if (auto it = kv.find("format"); it != kv.end()) {
    if (it->second == "float32") meta.format = SampleFormat::float32;
    else require(it->second == "uint8", Errc::config, "unknown sample format '" + it->second + "'");
    kv.erase(it);
  }
  if (auto it = kv.find("pore_value"); it != kv.end()) {
    long long v = detail::parse_int("pore_value", it->second);
    require(v >= 0 && v <= 255, Errc::config, "pore_value must be a byte value");
    meta.pore_value = static_cast<int>(v);
    kv.erase(it);
  } else {
    require(meta.format == SampleFormat::float32, Errc::config, "metadata is missing 'pore_value'");
  }
  meta.extra = std::move(kv);
  return meta;
}

inline VolumeMeta read_meta(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::path, "cannot open metadata " + path.string());
  return parse_meta(in);
}

inline std::string format_meta(const VolumeMeta& meta) {
  std::ostringstream out;
  out.precision(17);
  out << "nx = " << meta.dims.nx << "\n"
      << "ny = " << meta.dims.ny << "\n"
      << "nz = " << meta.dims.nz << "\n"
      << "voxel_size_um = " << meta.voxel_size_um << "\n";
  if (meta.format == SampleFormat::float32) out << "format = float32\n";
  else out << "pore_value = " << meta.pore_value << "\n";
  for (const auto& [k, v] : meta.extra) out << k << " = " << v << "\n";
  return out.str();
}

/// Sidecar path convention: "<volume>.meta".
inline std::filesystem::path meta_path_for(const std::filesystem::path& volume) {
  return std::filesystem::path(volume.string() + ".meta");
}

namespace detail {
inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::path, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

/// Writes to a temporary sibling and renames, so readers never see partial files.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), Errc::io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), Errc::io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}
}  // namespace detail

inline VoxelGrid decode_raw(std::span<const std::uint8_t> bytes, const VolumeMeta& meta) {
  detail::check_dims(meta.dims);
  require(meta.format == SampleFormat::uint8, Errc::config, "binary volume must be uint8");
  require(bytes.size() == meta.dims.count(), Errc::size_mismatch,
          "raw file holds " + std::to_string(bytes.size()) + " bytes but " + to_string(meta.dims) +
              " needs " + std::to_string(meta.dims.count()));
  std::vector<std::uint8_t> phase(bytes.size());
  const auto pore = static_cast<std::uint8_t>(meta.pore_value);
  for (std::size_t i = 0; i < bytes.size(); ++i) phase[i] = bytes[i] == pore ? 1 : 0;
  return VoxelGrid(meta.dims, std::move(phase), meta.voxel_size_um);
}

inline VoxelGrid load_raw(const std::filesystem::path& data_path, const VolumeMeta& meta) {
  detail::check_dims(meta.dims);
  auto bytes = detail::read_file(data_path);
  return decode_raw({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()}, meta);
}

/// Writes pore voxels as 255 and grain as 0, plus the sidecar.
inline void save_raw(const VoxelGrid& grid, const std::filesystem::path& path,
                     std::map<std::string, std::string> extra = {}) {
  std::string bytes(grid.size(), '\0');
  for (std::size_t i = 0; i < grid.size(); ++i) bytes[i] = grid[i] ? static_cast<char>(255) : 0;
  detail::write_file_atomic(path, bytes);
  VolumeMeta meta{grid.dims(), grid.voxel_size_um(), 255, SampleFormat::uint8, std::move(extra)};
  detail::write_file_atomic(meta_path_for(path), format_meta(meta));
}

namespace detail {
inline void append_f32_le(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}
inline float read_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}
}  // namespace detail

/// Gray variant of the raw format: one little-endian float32 per voxel.
inline void save_gray_raw(const GrayGrid& grid, const std::filesystem::path& path,
                          std::map<std::string, std::string> extra = {}) {
  std::string bytes;
  bytes.reserve(grid.size() * 4);
  for (float v : grid.values()) detail::append_f32_le(bytes, v);
  detail::write_file_atomic(path, bytes);
  VolumeMeta meta{grid.dims(), grid.voxel_size_um(), 0, SampleFormat::float32, std::move(extra)};
  detail::write_file_atomic(meta_path_for(path), format_meta(meta));
}

inline GrayGrid load_gray_raw(const std::filesystem::path& path, const VolumeMeta& meta) {
  detail::check_dims(meta.dims);
  require(meta.format == SampleFormat::float32, Errc::config, "gray volume must be float32");
  auto bytes = detail::read_file(path);
  require(bytes.size() == meta.dims.count() * 4, Errc::size_mismatch,
          "gray raw file " + path.string() + " has wrong length for " + to_string(meta.dims));
  std::vector<float> values(meta.dims.count());
  auto p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = detail::read_f32_le(p + 4 * i);
  return GrayGrid(meta.dims, std::move(values), meta.voxel_size_um);
}

// ---------------------------------------------------------------------------
// Patches

using Origin = std::array<std::size_t, 3>;

inline std::size_t patches_per_axis(std::size_t n, std::size_t patch, std::size_t stride) {
  return (n - patch) / stride + 1;
}

inline void check_patch(const Dims& dims, std::size_t patch, std::size_t stride) {
  require(patch > 0 && patch <= dims.min_extent(), Errc::invalid_patch,
          "patch " + std::to_string(patch) + " does not fit in " + to_string(dims));
  require(stride >= 1, Errc::invalid_patch, "stride must be at least 1");
}

inline std::size_t patch_count(const Dims& dims, std::size_t patch, std::size_t stride) {
  check_patch(dims, patch, stride);
  return patches_per_axis(dims.nx, patch, stride) * patches_per_axis(dims.ny, patch, stride) *
         patches_per_axis(dims.nz, patch, stride);
}

/// Corner offsets of every cube that fits, ordered z-major (then y, then x).
inline std::vector<Origin> patch_origins(const Dims& dims, std::size_t patch, std::size_t stride) {
  check_patch(dims, patch, stride);
  std::vector<Origin> out;
  out.reserve(patch_count(dims, patch, stride));
  for (std::size_t z = 0; z + patch <= dims.nz; z += stride)
    for (std::size_t y = 0; y + patch <= dims.ny; y += stride)
      for (std::size_t x = 0; x + patch <= dims.nx; x += stride) out.push_back({x, y, z});
  return out;
}

inline VoxelGrid extract_patch(const VoxelGrid& grid, const Origin& o, std::size_t patch) {
  require(o[0] + patch <= grid.nx() && o[1] + patch <= grid.ny() && o[2] + patch <= grid.nz(),
          Errc::invalid_patch, "patch exceeds grid bounds");
  VoxelGrid out({patch, patch, patch}, grid.voxel_size_um());
  for (std::size_t z = 0; z < patch; ++z)
    for (std::size_t y = 0; y < patch; ++y) {
      const auto* src = &grid(o[0], o[1] + y, o[2] + z);
      std::copy(src, src + patch, &out(0, y, z));
    }
  return out;
}

inline std::vector<VoxelGrid> extract_patches(const VoxelGrid& grid, std::size_t patch, std::size_t stride) {
  std::vector<VoxelGrid> out;
  for (const auto& o : patch_origins(grid.dims(), patch, stride)) out.push_back(extract_patch(grid, o, patch));
  return out;
}

// ---------------------------------------------------------------------------
// Resampling and filters

/// Majority vote over 2x2x2 blocks; a 4/4 tie goes to pore. Odd remainders are dropped.
inline VoxelGrid downsample_by_two(const VoxelGrid& grid) {
  require(grid.nx() >= 2 && grid.ny() >= 2 && grid.nz() >= 2, Errc::config,
          "downsampling needs every dimension >= 2");
  Dims out_dims{grid.nx() / 2, grid.ny() / 2, grid.nz() / 2};
  VoxelGrid out(out_dims, grid.voxel_size_um() * 2.0);
  for (std::size_t z = 0; z < out_dims.nz; ++z)
    for (std::size_t y = 0; y < out_dims.ny; ++y)
      for (std::size_t x = 0; x < out_dims.nx; ++x) {
        int pores = 0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) pores += grid(2 * x + dx, 2 * y + dy, 2 * z + dz);
        out(x, y, z) = pores >= 4 ? VoxelGrid::pore : VoxelGrid::grain;
      }
  return out;
}

/// 3x3x3 median. Windows are clipped at the boundary; even-sized windows take
/// the lower of the two middle order statistics.
inline GrayGrid median_filter_3(const GrayGrid& gray) {
  const Dims d = gray.dims();
  std::vector<float> out(d.count());
  parallel_for(0, d.nz, [&](std::size_t z) {
    std::array<float, 27> window;
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x) {
        std::size_t n = 0;
        for (std::size_t zz = z ? z - 1 : 0; zz <= std::min(z + 1, d.nz - 1); ++zz)
          for (std::size_t yy = y ? y - 1 : 0; yy <= std::min(y + 1, d.ny - 1); ++yy)
            for (std::size_t xx = x ? x - 1 : 0; xx <= std::min(x + 1, d.nx - 1); ++xx)
              window[n++] = gray(xx, yy, zz);
        const std::size_t mid = (n - 1) / 2;
        std::nth_element(window.begin(), window.begin() + static_cast<std::ptrdiff_t>(mid),
                         window.begin() + static_cast<std::ptrdiff_t>(n));
        out[gray.index(x, y, z)] = window[mid];
      }
  });
  return GrayGrid(d, std::move(out), gray.voxel_size_um());
}

inline constexpr std::size_t otsu_bins = 256;

inline std::size_t otsu_bin(float v) {
  auto b = static_cast<std::size_t>(static_cast<double>(v) * otsu_bins);
  return std::min(b, otsu_bins - 1);
}

struct OtsuResult {
  VoxelGrid grid;
  std::size_t last_grain_bin = 0;  // bins above this one are pore
  double threshold = 0.0;          // upper edge of last_grain_bin
};

/// Otsu segmentation on a 256-bin histogram over [0,1]. Ties in the
/// between-class variance resolve to the lowest split bin.
inline OtsuResult otsu_segment(const GrayGrid& gray) {
  require(gray.size() > 0, Errc::config, "empty grid");
  std::array<std::uint64_t, otsu_bins> hist{};
  for (float v : gray.values()) ++hist[otsu_bin(v)];
  const std::size_t occupied =
      static_cast<std::size_t>(std::count_if(hist.begin(), hist.end(), [](auto c) { return c > 0; }));
  require(occupied >= 2, Errc::degenerate_histogram, "all voxels fall in one histogram bin");

  const double total = static_cast<double>(gray.size());
  double sum_all = 0.0;
  for (std::size_t b = 0; b < otsu_bins; ++b) sum_all += static_cast<double>(b) * static_cast<double>(hist[b]);

  double n0 = 0.0, sum0 = 0.0, best = -1.0;
  std::size_t best_bin = 0;
  for (std::size_t k = 0; k + 1 < otsu_bins; ++k) {
    n0 += static_cast<double>(hist[k]);
    sum0 += static_cast<double>(k) * static_cast<double>(hist[k]);
    const double n1 = total - n0;
    if (n0 == 0.0 || n1 == 0.0) continue;
    const double diff = sum0 / n0 - (sum_all - sum0) / n1;
    const double between = n0 * n1 * diff * diff;
    if (between > best) {
      best = between;
      best_bin = k;
    }
  }

  std::vector<std::uint8_t> phase(gray.size());
  for (std::size_t i = 0; i < gray.size(); ++i) phase[i] = otsu_bin(gray[i]) > best_bin ? 1 : 0;
  return {VoxelGrid(gray.dims(), std::move(phase), gray.voxel_size_um()), best_bin,
          static_cast<double>(best_bin + 1) / static_cast<double>(otsu_bins)};
}

inline VoxelGrid otsu_threshold(const GrayGrid& gray) { return otsu_segment(gray).grid; }

/// Median filter followed by Otsu segmentation.
inline VoxelGrid postprocess(const GrayGrid& gray) { return otsu_threshold(median_filter_3(gray)); }

inline GrayGrid to_gray(const VoxelGrid& grid) {
  std::vector<float> v(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) v[i] = grid[i];
  return GrayGrid(grid.dims(), std::move(v), grid.voxel_size_um());
}

// ---------------------------------------------------------------------------
// Connectivity

enum class Connectivity { six = 6, twenty_six = 26 };

/// Labels the voxels of `phase` by breadth-first flood fill. Labels are
/// assigned in order of each component's first voxel in storage order.
inline LabelGrid connected_components(const VoxelGrid& grid, std::uint8_t phase = VoxelGrid::pore,
                                      Connectivity conn = Connectivity::six) {
  const Dims d = grid.dims();
  LabelGrid out{Volume<std::uint32_t>(d, 0u), 0};
  std::vector<std::array<int, 3>> offsets;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0) continue;
        if (conn == Connectivity::six && manhattan != 1) continue;
        offsets.push_back({dx, dy, dz});
      }

  std::deque<std::size_t> queue;
  std::uint32_t next = 0;
  for (std::size_t start = 0; start < grid.size(); ++start) {
    if (grid[start] != phase || out.labels[start] != 0) continue;
    ++next;
    out.labels[start] = next;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      const auto x = static_cast<long long>(i % d.nx);
      const auto y = static_cast<long long>((i / d.nx) % d.ny);
      const auto z = static_cast<long long>(i / (d.nx * d.ny));
      for (const auto& o : offsets) {
        const long long xx = x + o[0], yy = y + o[1], zz = z + o[2];
        if (xx < 0 || yy < 0 || zz < 0 || xx >= static_cast<long long>(d.nx) ||
            yy >= static_cast<long long>(d.ny) || zz >= static_cast<long long>(d.nz))
          continue;
        const std::size_t j = grid.index(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy),
                                         static_cast<std::size_t>(zz));
        if (grid[j] == phase && out.labels[j] == 0) {
          out.labels[j] = next;
          queue.push_back(j);
        }
      }
    }
  }
  out.component_count = next;
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic volumes

/// Grains are spheres centred on a simple cubic lattice of the given period
/// (periodic in every axis when the edge is a multiple of the period). The
/// radius is bisected until the discrete pore fraction is closest to `porosity`.
inline VoxelGrid sphere_lattice(std::size_t edge, std::size_t period, double porosity, double voxel_size_um = 1.0) {
  require(period >= 2 && edge >= period, Errc::config, "sphere lattice needs edge >= period >= 2");
  require(porosity > 0.0 && porosity < 1.0, Errc::config, "porosity must be in (0,1)");
  const double c = static_cast<double>(period) / 2.0;
  auto cell_pores = [&](double r) {
    std::size_t n = 0;
    for (std::size_t z = 0; z < period; ++z)
      for (std::size_t y = 0; y < period; ++y)
        for (std::size_t x = 0; x < period; ++x) {
          const double dx = x + 0.5 - c, dy = y + 0.5 - c, dz = z + 0.5 - c;
          n += dx * dx + dy * dy + dz * dz > r * r;
        }
    return static_cast<double>(n) / static_cast<double>(period * period * period);
  };
  double lo = 0.0, hi = std::sqrt(3.0) * c;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (cell_pores(mid) > porosity) lo = mid;
    else hi = mid;
  }
  const double r = std::abs(cell_pores(lo) - porosity) < std::abs(cell_pores(hi) - porosity) ? lo : hi;
  VoxelGrid grid({edge, edge, edge}, voxel_size_um);
  for (std::size_t z = 0; z < edge; ++z)
    for (std::size_t y = 0; y < edge; ++y)
      for (std::size_t x = 0; x < edge; ++x) {
        const double dx = (x % period) + 0.5 - c, dy = (y % period) + 0.5 - c, dz = (z % period) + 0.5 - c;
        grid(x, y, z) = dx * dx + dy * dy + dz * dz > r * r ? VoxelGrid::pore : VoxelGrid::grain;
      }
  return grid;
}

}  // namespace porogan
