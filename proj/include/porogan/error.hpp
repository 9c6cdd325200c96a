#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace porogan {

/// Error categories raised by the library. The CLI maps each onto an exit code.
enum class Errc {
  config,
  path,
  io,
  size_mismatch,
  invalid_patch,
  degenerate_histogram,
  invalid_lag,
  invalid_curve,
  no_interface,
  shape,
  degenerate_batch,
  graph,
  divergence,
  corrupt_checkpoint,
  unsupported_version,
  impermeable,
  non_convergence,
  capacity,
  internal,
};

constexpr std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::config: return "config";
    case Errc::path: return "path";
    case Errc::io: return "io";
    case Errc::size_mismatch: return "size-mismatch";
    case Errc::invalid_patch: return "invalid-patch";
    case Errc::degenerate_histogram: return "degenerate-histogram";
    case Errc::invalid_lag: return "invalid-lag";
    case Errc::invalid_curve: return "invalid-curve";
    case Errc::no_interface: return "no-interface";
    case Errc::shape: return "shape";
    case Errc::degenerate_batch: return "degenerate-batch";
    case Errc::graph: return "graph";
    case Errc::divergence: return "divergence";
    case Errc::corrupt_checkpoint: return "corrupt-checkpoint";
    case Errc::unsupported_version: return "unsupported-version";
    case Errc::impermeable: return "impermeable";
    case Errc::non_convergence: return "non-convergence";
    case Errc::capacity: return "capacity";
    case Errc::internal: return "internal";
  }
  return "unknown";
}

/// Process exit codes, grouped by error class.
namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int internal = 1;
inline constexpr int config = 2;
inline constexpr int io = 3;
inline constexpr int divergence = 4;
inline constexpr int non_convergence = 5;
inline constexpr int data = 6;
}  // namespace exit_code

constexpr int exit_code_for(Errc code) {
  switch (code) {
    case Errc::config:
    case Errc::path:
    case Errc::invalid_patch:
    case Errc::invalid_lag:
    case Errc::shape:
    case Errc::graph:
      return exit_code::config;
    case Errc::io:
    case Errc::size_mismatch:
    case Errc::corrupt_checkpoint:
    case Errc::unsupported_version:
    case Errc::capacity:
      return exit_code::io;
    case Errc::divergence:
      return exit_code::divergence;
    case Errc::non_convergence:
      return exit_code::non_convergence;
    case Errc::degenerate_histogram:
    case Errc::invalid_curve:
    case Errc::no_interface:
    case Errc::degenerate_batch:
    case Errc::impermeable:
      return exit_code::data;
    case Errc::internal:
      return exit_code::internal;
  }
  return exit_code::internal;
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, Errc code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace porogan
