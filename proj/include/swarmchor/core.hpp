#ifndef SWARMCHOR_CORE_HPP
#define SWARMCHOR_CORE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace swarmchor {

using Vec3 = Eigen::Vector3d;

/// Position samples of one drone at a uniform rate.
using Track = std::vector<Vec3>;

/// One Track per drone, all at the same rate.
using SwarmTracks = std::vector<Track>;

/// Error classes surfaced across the pipeline. The string form is the wire
/// code used by the service and the CLI.
enum class ErrorCode {
  EmptyAudio,
  InsufficientAudio,
  ParseError,
  NonMonotonicBeats,
  Io,
  TooManyBeats,
  EmptyReprompt,
  BackendUnavailable,
  BackendRefused,
  MalformedResponse,
  MissingBeats,
  DroneCountMismatch,
  DegenerateExtent,
  SeparationFailed,
  InfeasibleWindow,
  FilteringFailed,
  LengthMismatch,
  InconsistentInputs,
  EmptyBatch,
  UnknownSong,
  TooManyDrones,
  StageOrderViolation,
  SessionNotFound,
  Busy,
  NotImplemented,
  InvalidArgument,
};

inline std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::EmptyAudio: return "EmptyAudio";
    case ErrorCode::InsufficientAudio: return "InsufficientAudio";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::NonMonotonicBeats: return "NonMonotonicBeats";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::TooManyBeats: return "TooManyBeats";
    case ErrorCode::EmptyReprompt: return "EmptyReprompt";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::BackendRefused: return "BackendRefused";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::MissingBeats: return "MissingBeats";
    case ErrorCode::DroneCountMismatch: return "DroneCountMismatch";
    case ErrorCode::DegenerateExtent: return "DegenerateExtent";
    case ErrorCode::SeparationFailed: return "SeparationFailed";
    case ErrorCode::InfeasibleWindow: return "InfeasibleWindow";
    case ErrorCode::FilteringFailed: return "FilteringFailed";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InconsistentInputs: return "InconsistentInputs";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::UnknownSong: return "UnknownSong";
    case ErrorCode::TooManyDrones: return "TooManyDrones";
    case ErrorCode::StageOrderViolation: return "StageOrderViolation";
    case ErrorCode::SessionNotFound: return "SessionNotFound";
    case ErrorCode::Busy: return "Busy";
    case ErrorCode::NotImplemented: return "NotImplemented";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised when filtering gives up; carries the index of the window that failed.
class FilteringError : public Error {
 public:
  FilteringError(std::size_t window, const std::string& what)
      : Error(ErrorCode::FilteringFailed, "window " + std::to_string(window) + ": " + what),
        window_(window) {}

  std::size_t window() const noexcept { return window_; }

 private:
  std::size_t window_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline bool all_finite(const Vec3& v) { return v.allFinite(); }

/// Axis-aligned flight volume [lower, upper].
struct FlightVolume {
  Vec3 lower{-1.5, -1.5, 0.3};
  Vec3 upper{1.5, 1.5, 2.0};

  bool contains(const Vec3& p) const {
    return (p.array() >= lower.array()).all() && (p.array() <= upper.array()).all();
  }

  Vec3 clamp(const Vec3& p) const { return p.cwiseMax(lower).cwiseMin(upper); }

  void validate() const {
    if (!((lower.array() < upper.array()).all()))
      fail(ErrorCode::InvalidArgument, "flight volume lower bound must be below upper bound");
    if (!(lower.z() > 0.0)) fail(ErrorCode::InvalidArgument, "flight volume floor must be above z = 0");
  }
};

/// Axis-aligned ellipsoid around a drone; semi-axes form the diagonal of Theta.
struct EllipsoidEnvelope {
  Vec3 semi_axes{0.25, 0.25, 0.6};

  void validate() const {
    if (!((semi_axes.array() > 0.0).all()))
      fail(ErrorCode::InvalidArgument, "envelope semi-axes must be positive");
    if (semi_axes.z() < semi_axes.x())
      fail(ErrorCode::InvalidArgument, "envelope must be elongated vertically (a_z >= a_x)");
  }

  /// Theta^{-1} (p_i - p_j).
  Vec3 normalize(const Vec3& rel) const { return rel.cwiseQuotient(semi_axes); }

  /// h_ij = ||Theta^{-1}(p_i - p_j)||^2 - 1
  double clearance(const Vec3& pi, const Vec3& pj) const {
    return normalize(pi - pj).squaredNorm() - 1.0;
  }
};

inline constexpr double kGravity = 9.81;

inline Vec3 gravity_vector() { return Vec3(0.0, 0.0, -kGravity); }

/// Speed and specific-thrust limits.
struct DroneLimits {
  double max_speed = 1.0;
  double min_thrust = 4.9;
  double max_thrust = 14.7;

  void validate() const {
    if (!(max_speed > 0.0)) fail(ErrorCode::InvalidArgument, "max_speed must be positive");
    if (!(0.0 < min_thrust && min_thrust < kGravity && kGravity < max_thrust))
      fail(ErrorCode::InvalidArgument, "thrust limits must satisfy 0 < f_min < |g| < f_max");
  }

  /// Magnitude of the specific thrust needed to realize acceleration a.
  static double thrust(const Vec3& a) { return (a - gravity_vector()).norm(); }
};

}  // namespace swarmchor

#endif  // SWARMCHOR_CORE_HPP
