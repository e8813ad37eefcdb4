#pragma once

#include <stdexcept>
#include <string>

namespace ppcf {

//! Failure categories raised across the library. Every throw site uses
//! ppcf::error so callers can branch on code() instead of parsing messages.
enum class errc {
  degenerate_window,
  decomposition_failure,
  mismatched_lattice,
  non_finite_output,
  bound_violation,
  invalid_argument,
  invalid_folds,
  unmarked_pattern,
  nonpositive_intensity,
  non_convergence,
  singular_hessian,
  zero_mass,
  zero_denominator,
  singular_sensitivity,
  insufficient_points,
  window_mismatch,
  parse_error,
  all_folds_failed,
  scenario_infeasible,
};

inline const char* to_string(errc code) {
  switch (code) {
    case errc::degenerate_window: return "degenerate window";
    case errc::decomposition_failure: return "decomposition failure";
    case errc::mismatched_lattice: return "mismatched lattice";
    case errc::non_finite_output: return "non-finite output";
    case errc::bound_violation: return "bound violation";
    case errc::invalid_argument: return "invalid argument";
    case errc::invalid_folds: return "invalid fold count";
    case errc::unmarked_pattern: return "unmarked pattern";
    case errc::nonpositive_intensity: return "nonpositive intensity";
    case errc::non_convergence: return "non-convergence";
    case errc::singular_hessian: return "singular Hessian";
    case errc::zero_mass: return "zero kernel mass";
    case errc::zero_denominator: return "zero denominator";
    case errc::singular_sensitivity: return "singular sensitivity matrix";
    case errc::insufficient_points: return "insufficient points";
    case errc::window_mismatch: return "window mismatch";
    case errc::parse_error: return "parse error";
    case errc::all_folds_failed: return "all folds failed";
    case errc::scenario_infeasible: return "scenario infeasible";
  }
  return "unknown error";
}

class error : public std::runtime_error {
public:
  error(errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  errc code() const noexcept { return code_; }

private:
  errc code_;
};

} // namespace ppcf
