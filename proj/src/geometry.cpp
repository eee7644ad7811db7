#include "telepresence/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "telepresence/error.hpp"

namespace telepresence {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidPose: return "InvalidPose";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::ImmutableEdge: return "ImmutableEdge";
    case ErrorCode::StaleUpdate: return "StaleUpdate";
    case ErrorCode::DegenerateCorners: return "DegenerateCorners";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::TimestampOrder: return "TimestampOrder";
    case ErrorCode::NegativeDelay: return "NegativeDelay";
    case ErrorCode::NotInitialized: return "NotInitialized";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::ZeroWeights: return "ZeroWeights";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::NoCorrespondences: return "NoCorrespondences";
    case ErrorCode::BadEndpoints: return "BadEndpoints";
    case ErrorCode::Disconnected: return "Disconnected";
    case ErrorCode::SingularNormalEquations: return "SingularNormalEquations";
    case ErrorCode::EmptyCrop: return "EmptyCrop";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::UnknownMethod: return "UnknownMethod";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Pose::Pose(const Mat3& rotation, const Vec3& translation, std::optional<double> timestamp)
    : rotation_(rotation), translation_(translation), timestamp_(timestamp) {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw Error(ErrorCode::InvalidPose, "non-finite pose entries");
  }
  if (!is_rotation(rotation)) {
    throw Error(ErrorCode::InvalidPose, "rotation is not orthonormal with det +1");
  }
}

Pose Pose::from_quaternion(const Eigen::Quaterniond& q, const Vec3& t) {
  if (!(q.norm() > 0.0)) throw Error(ErrorCode::InvalidPose, "zero quaternion");
  return Pose(q.normalized().toRotationMatrix(), t);
}

Pose Pose::from_approximate(const Mat3& rotation, const Vec3& translation) {
  return Pose(nearest_rotation(rotation), translation);
}

Pose Pose::with_timestamp(std::optional<double> t) const {
  return Pose(Unchecked{}, rotation_, translation_, t);
}

Eigen::Quaterniond Pose::quaternion() const { return Eigen::Quaterniond(rotation_).normalized(); }

Mat4 Pose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Pose compose(const Pose& a, const Pose& b) {
  return Pose(Pose::Unchecked{}, a.rotation_ * b.rotation_,
              a.rotation_ * b.translation_ + a.translation_, b.timestamp_);
}

Pose inverse(const Pose& p) {
  const Mat3 rt = p.rotation_.transpose();
  return Pose(Pose::Unchecked{}, rt, -(rt * p.translation_), p.timestamp_);
}

double rotation_angle(const Mat3& a, const Mat3& b) {
  // Relative rotation M = a^T b. atan2 of (sin, cos) is the same angle as
  // arccos((tr M - 1)/2) but keeps full precision near 0 and pi.
  const Mat3 m = a.transpose() * b;
  const double cos_part = std::clamp((m.trace() - 1.0) / 2.0, -1.0, 1.0);
  const Vec3 v(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
  const double sin_part = 0.5 * v.norm();
  return std::atan2(sin_part, cos_part);
}

double orthonormality_error(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
}

bool is_rotation(const Mat3& r, double tol) {
  return orthonormality_error(r) <= tol && std::abs(r.determinant() - 1.0) <= 10.0 * tol;
}

Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return s;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 k = skew(omega);
  if (theta < 1e-8) {
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

Vec3 so3_log(const Mat3& r) {
  const Vec3 v(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double cos_theta = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double sin_theta = 0.5 * v.norm();
  const double theta = std::atan2(sin_theta, cos_theta);
  if (theta < 1e-8) {
    return 0.5 * v;
  }
  if (M_PI - theta < 1e-5) {
    // Near pi the antisymmetric part vanishes; read the axis from R + I.
    const Mat3 s = 0.5 * (r + Mat3::Identity());
    int col = 0;
    s.diagonal().maxCoeff(&col);
    Vec3 axis = s.col(col).normalized();
    if (axis.dot(v) < 0.0) axis = -axis;
    return theta * axis;
  }
  return theta / (2.0 * std::sin(theta)) * v;
}

Mat3 rot_x(double angle) { return so3_exp(Vec3(angle, 0.0, 0.0)); }
Mat3 rot_y(double angle) { return so3_exp(Vec3(0.0, angle, 0.0)); }
Mat3 rot_z(double angle) { return so3_exp(Vec3(0.0, 0.0, angle)); }

Mat3 so3_left_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = skew(phi);
  if (theta < 1e-6) return Mat3::Identity() + 0.5 * k + k * k / 6.0;
  const double t2 = theta * theta;
  return Mat3::Identity() + (1.0 - std::cos(theta)) / t2 * k +
         (theta - std::sin(theta)) / (t2 * theta) * k * k;
}

namespace {

Mat3 left_jacobian_inverse(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = skew(phi);
  if (theta < 1e-6) return Mat3::Identity() - 0.5 * k + k * k / 12.0;
  const double half = 0.5 * theta;
  const double coeff = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
  return Mat3::Identity() - 0.5 * k + coeff * k * k;
}

}  // namespace

Pose se3_exp(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  return Pose(Pose::Unchecked{}, so3_exp(phi), so3_left_jacobian(phi) * rho, std::nullopt);
}

Vec6 se3_log(const Pose& p) {
  const Vec3 phi = so3_log(p.rotation());
  Vec6 xi;
  xi.head<3>() = left_jacobian_inverse(phi) * p.translation();
  xi.tail<3>() = phi;
  return xi;
}

Mat6 adjoint(const Pose& p) {
  Mat6 ad = Mat6::Zero();
  ad.topLeftCorner<3, 3>() = p.rotation();
  ad.topRightCorner<3, 3>() = skew(p.translation()) * p.rotation();
  ad.bottomRightCorner<3, 3>() = p.rotation();
  return ad;
}

void CameraIntrinsics::validate() const {
  if (!(focal_x > 0.0) || !(focal_y > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  }
  if (image_width <= 0 || image_height <= 0 || center_x < 0.0 || center_y < 0.0 ||
      center_x > image_width || center_y > image_height) {
    throw Error(ErrorCode::InvalidArgument, "principal point outside image");
  }
}

bool CameraIntrinsics::in_image(const Vec2& px) const {
  return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= image_width && px.y() <= image_height;
}

std::optional<Vec2> CameraIntrinsics::project(const Vec3& p_cam) const {
  if (!(p_cam.z() > 0.0)) return std::nullopt;
  return Vec2(focal_x * p_cam.x() / p_cam.z() + center_x,
              focal_y * p_cam.y() / p_cam.z() + center_y);
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << focal_x, 0.0, center_x,
       0.0, focal_y, center_y,
       0.0, 0.0, 1.0;
  return k;
}

}  // namespace telepresence
