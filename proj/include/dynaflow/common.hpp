#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace dynaflow {

// Raised when inputs or configuration violate a documented precondition.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Raised when a computation produced non-finite values or an I/O payload is
// numerically unusable.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

// Maps an angle difference into (-pi, pi].
inline double wrap_angle(double a) {
  double w = std::remainder(a, kTwoPi);
  if (w <= -kPi) w += kTwoPi;
  return w;
}

// Per-dimension statistics used to map raw states (and actions, when present)
// into the normalized space the flow operates in.
struct Normalization {
  std::vector<double> state_mean;
  std::vector<double> state_std;
  std::vector<double> action_mean;  // empty for state-only datasets
  std::vector<double> action_std;

  bool has_actions() const { return !action_mean.empty(); }
};

inline double safe_std(double s) { return s > 1e-8 ? s : 1e-8; }

}  // namespace dynaflow
