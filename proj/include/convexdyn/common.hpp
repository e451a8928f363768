#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <string_view>

namespace convexdyn {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using Mat9 = Eigen::Matrix<double, 9, 9>;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using MatX3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Rgb = Eigen::Vector3d;

enum class ErrorKind {
  DegenerateHull,
  InvalidMaterial,
  ElementInversion,
  EmptyField,
  NonFiniteLoss,
  SolverDiverged,
  NonFinite,
  BehindCamera,
  DegenerateProjection,
  ShapeMismatch,
  ConfigParse,
  FileIO,
  UnsupportedVersion,
  InvalidArgument,
};

std::string_view error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Reduced DOF layout: handle m occupies z[12m, 12m+12), stored row-major as
// the 3x4 affine block Z_m.
constexpr int kDofsPerHandle = 12;

inline Mat34 handle_block(const VecX& z, int m) {
  Mat34 block;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) block(r, c) = z[kDofsPerHandle * m + 4 * r + c];
  return block;
}

inline int dof_index(int m, int row, int col) { return kDofsPerHandle * m + 4 * row + col; }

inline Vec4 homogeneous(const Vec3& x) { return Vec4(x.x(), x.y(), x.z(), 1.0); }

}  // namespace convexdyn
