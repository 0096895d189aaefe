#include "idpose/pose.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "idpose/errors.hpp"

namespace idpose {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}  // namespace

bool is_valid(const SphericalPose& p) {
  return std::isfinite(p.d_polar) && std::isfinite(p.d_azimuth) &&
         std::isfinite(p.d_radius) && p.d_radius > -1.0;
}

bool is_valid(const AbsoluteCamera& c) {
  return std::isfinite(c.polar) && std::isfinite(c.azimuth) &&
         std::isfinite(c.radius) && c.polar > 0.0 && c.polar < kPi &&
         c.radius > 0.0;
}

bool is_valid_rotation(const RotationMatrix& r, double tol) {
  if (!r.allFinite()) return false;
  const double ortho =
      (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

double wrap_angle(double radians) {
  double a = std::remainder(radians, kTwoPi);
  if (a <= -kPi) a += kTwoPi;
  return a;
}

double wrap_positive(double radians) {
  double a = std::fmod(radians, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  // fmod of a tiny negative value can round up to exactly 2pi.
  if (a >= kTwoPi) a -= kTwoPi;
  return a;
}

SphericalPose reverse(const SphericalPose& p) {
  return {-p.d_polar, -p.d_azimuth, -p.d_radius};
}

SphericalPose compose(const SphericalPose& p_rev, const SphericalPose& q) {
  SphericalPose out{p_rev.d_polar + q.d_polar, p_rev.d_azimuth + q.d_azimuth,
                    p_rev.d_radius + q.d_radius};
  if (!(out.d_radius > -1.0)) {
    throw Error(ErrorCode::kDegenerateRadius,
                "composed d_radius must stay above -1");
  }
  return out;
}

bool polar_clamped(const AbsoluteCamera& anchor, const SphericalPose& p) {
  const double polar = anchor.polar + p.d_polar;
  return polar < kPolarEpsilon || polar > kPi - kPolarEpsilon;
}

AbsoluteCamera apply_relative(const AbsoluteCamera& anchor,
                              const SphericalPose& p) {
  AbsoluteCamera out;
  out.polar =
      std::clamp(anchor.polar + p.d_polar, kPolarEpsilon, kPi - kPolarEpsilon);
  out.azimuth = wrap_positive(anchor.azimuth + p.d_azimuth);
  out.radius = anchor.radius * (1.0 + p.d_radius);
  if (!(out.radius > 0.0)) {
    throw Error(ErrorCode::kDegenerateRadius,
                "relative pose collapses the camera radius");
  }
  return out;
}

SphericalPose relative_between(const AbsoluteCamera& from,
                               const AbsoluteCamera& to) {
  return {to.polar - from.polar, wrap_angle(to.azimuth - from.azimuth),
          to.radius / from.radius - 1.0};
}

Eigen::Vector3d camera_position(const AbsoluteCamera& c) {
  const double s = std::sin(c.polar);
  return c.radius * Eigen::Vector3d(s * std::cos(c.azimuth),
                                    s * std::sin(c.azimuth), std::cos(c.polar));
}

Extrinsics camera_to_extrinsics(const AbsoluteCamera& c) {
  if (!(c.polar > 0.0 && c.polar < kPi) || std::sin(c.polar) < 1e-12) {
    throw Error(ErrorCode::kSingularOrientation,
                "camera at a pole has no well-defined look-at frame");
  }
  const double st = std::sin(c.polar), ct = std::cos(c.polar);
  const double sp = std::sin(c.azimuth), cp = std::cos(c.azimuth);
  // Spherical unit vectors: e_r points from the origin to the camera.
  const Eigen::Vector3d e_r(st * cp, st * sp, ct);
  const Eigen::Vector3d e_theta(ct * cp, ct * sp, -st);
  const Eigen::Vector3d e_phi(-sp, cp, 0.0);

  Extrinsics ext;
  ext.rotation.col(0) = e_phi;     // right
  ext.rotation.col(1) = -e_theta;  // up, positive z component
  ext.rotation.col(2) = e_r;       // backward (camera looks along -e_r)
  ext.position = c.radius * e_r;
  return ext;
}

double rotation_angle_deg(const RotationMatrix& a, const RotationMatrix& b) {
  const Eigen::Matrix3d rel = a.transpose() * b;
  // atan2 of the sine and cosine parts of the angle; stays accurate near 0
  // and 180 degrees where a bare arccos loses precision.
  const double cos_part = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  const Eigen::Vector3d skew(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0),
                             rel(1, 0) - rel(0, 1));
  const double sin_part = 0.5 * skew.norm();
  return std::atan2(sin_part, cos_part) * 180.0 / kPi;
}

double normalized_position_error(const Eigen::Vector3d& est,
                                 const Eigen::Vector3d& gt, double gt_radius) {
  return (est - gt).norm() / gt_radius;
}

Eigen::Vector3d pose_difference(const SphericalPose& a, const SphericalPose& b) {
  return {a.d_polar - b.d_polar, wrap_angle(a.d_azimuth - b.d_azimuth),
          a.d_radius - b.d_radius};
}

}  // namespace idpose
