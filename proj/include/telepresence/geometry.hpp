#pragma once

#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace telepresence {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Rigid transform on SE(3). Rotation is kept as a matrix; construction
/// rejects anything that is not a proper rotation (max |R^T R - I| > 1e-6 or
/// det <= 0).
class Pose {
 public:
  Pose() = default;
  Pose(const Mat3& rotation, const Vec3& translation,
       std::optional<double> timestamp = std::nullopt);

  static Pose identity() { return Pose(); }
  static Pose from_translation(const Vec3& t) { return Pose(Mat3::Identity(), t); }
  /// Normalizes `q` before conversion.
  static Pose from_quaternion(const Eigen::Quaterniond& q, const Vec3& t);
  /// Projects an approximately orthonormal matrix onto SO(3) first (SVD).
  static Pose from_approximate(const Mat3& rotation, const Vec3& translation);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  std::optional<double> timestamp() const { return timestamp_; }

  Pose with_timestamp(std::optional<double> t) const;
  Eigen::Quaterniond quaternion() const;
  Mat4 matrix() const;

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }

 private:
  struct Unchecked {};
  Pose(Unchecked, const Mat3& r, const Vec3& t, std::optional<double> stamp)
      : rotation_(r), translation_(t), timestamp_(stamp) {}

  friend Pose compose(const Pose& a, const Pose& b);
  friend Pose inverse(const Pose& p);
  friend Pose se3_exp(const Vec6& xi);

  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
  std::optional<double> timestamp_;
};

/// a ∘ b: rotation a.R*b.R, translation a.R*b.t + a.t. The result carries
/// b's timestamp.
Pose compose(const Pose& a, const Pose& b);
inline Pose operator*(const Pose& a, const Pose& b) { return compose(a, b); }
Pose inverse(const Pose& p);

/// Geodesic angle between two rotations, in [0, pi].
double rotation_angle(const Mat3& a, const Mat3& b);
inline double rotation_angle(const Pose& a, const Pose& b) {
  return rotation_angle(a.rotation(), b.rotation());
}
inline double translation_distance(const Pose& a, const Pose& b) {
  return (a.translation() - b.translation()).norm();
}

/// max_ij |R^T R - I|_ij
double orthonormality_error(const Mat3& r);
bool is_rotation(const Mat3& r, double tol = 1e-6);
Mat3 nearest_rotation(const Mat3& m);

Mat3 skew(const Vec3& v);
Mat3 so3_exp(const Vec3& omega);
Vec3 so3_log(const Mat3& r);
/// d/dt exp(phi(t)) = [J_l(phi) phi']x exp(phi(t))
Mat3 so3_left_jacobian(const Vec3& phi);
Mat3 rot_x(double angle);
Mat3 rot_y(double angle);
Mat3 rot_z(double angle);

// Twist ordering is (translation part, rotation part).
Pose se3_exp(const Vec6& xi);
Vec6 se3_log(const Pose& p);
/// Adjoint for the (rho, phi) ordering: [[R, [t]x R], [0, R]].
Mat6 adjoint(const Pose& p);

struct CameraIntrinsics {
  double focal_x = 0.0;
  double focal_y = 0.0;
  double center_x = 0.0;
  double center_y = 0.0;
  int image_width = 0;
  int image_height = 0;

  /// Throws InvalidArgument when focal lengths are not positive or the
  /// principal point lies outside the image.
  void validate() const;
  bool in_image(const Vec2& px) const;
  /// Pinhole projection of a camera-frame point; empty when z <= 0.
  std::optional<Vec2> project(const Vec3& p_cam) const;
  Mat3 matrix() const;
};

}  // namespace telepresence
