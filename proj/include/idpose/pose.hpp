#pragma once

#include <Eigen/Core>

namespace idpose {

// Relative camera transformation on an object-centred sphere. Azimuth is kept
// unwrapped so optimization never sees a seam at 0/2pi; wrapping happens only
// when converting to an absolute camera or comparing poses.
struct SphericalPose {
  double d_polar = 0.0;    // radians
  double d_azimuth = 0.0;  // radians
  double d_radius = 0.0;   // fraction of the anchor radius, > -1

  Eigen::Vector3d as_vector() const { return {d_polar, d_azimuth, d_radius}; }
  static SphericalPose from_vector(const Eigen::Vector3d& v) {
    return {v.x(), v.y(), v.z()};
  }

  friend bool operator==(const SphericalPose&, const SphericalPose&) = default;
};

// Absolute camera on a sphere around the world origin, looking at the origin
// with world +z as the up reference and no roll.
struct AbsoluteCamera {
  double polar = 0.0;    // (0, pi)
  double azimuth = 0.0;  // [0, 2pi)
  double radius = 1.0;   // > 0
};

// Camera-to-world rotation; columns are the camera right, up and backward
// axes expressed in world coordinates.
using RotationMatrix = Eigen::Matrix3d;

struct Extrinsics {
  RotationMatrix rotation;
  Eigen::Vector3d position;
};

inline constexpr double kPolarEpsilon = 1e-4;

bool is_valid(const SphericalPose& p);
bool is_valid(const AbsoluteCamera& c);
bool is_valid_rotation(const RotationMatrix& r, double tol = 1e-9);

// Wraps an angle into (-pi, pi].
double wrap_angle(double radians);
// Wraps an angle into [0, 2pi).
double wrap_positive(double radians);

SphericalPose reverse(const SphericalPose& p);

// Field-wise sum. Throws kDegenerateRadius if the summed d_radius <= -1.
SphericalPose compose(const SphericalPose& p_rev, const SphericalPose& q);

// Moves `anchor` by `p`: polar is clamped away from the poles, azimuth wraps,
// radius scales multiplicatively by (1 + d_radius).
AbsoluteCamera apply_relative(const AbsoluteCamera& anchor,
                              const SphericalPose& p);

// True when apply_relative's polar clamp is active for this (anchor, p).
bool polar_clamped(const AbsoluteCamera& anchor, const SphericalPose& p);

// The pose q with apply_relative(from, q) == to (azimuth offset in (-pi, pi]).
SphericalPose relative_between(const AbsoluteCamera& from,
                               const AbsoluteCamera& to);

Eigen::Vector3d camera_position(const AbsoluteCamera& c);

// Throws kSingularOrientation when the view direction is parallel to +z.
Extrinsics camera_to_extrinsics(const AbsoluteCamera& c);

// Geodesic angle between two rotations in degrees, in [0, 180].
double rotation_angle_deg(const RotationMatrix& a, const RotationMatrix& b);

double normalized_position_error(const Eigen::Vector3d& est,
                                 const Eigen::Vector3d& gt, double gt_radius);

// Azimuth-aware distance between two poses: the per-field difference with the
// azimuth component wrapped into (-pi, pi].
Eigen::Vector3d pose_difference(const SphericalPose& a, const SphericalPose& b);

}  // namespace idpose
