#pragma once

#include <array>
#include <cmath>

namespace pixpoint {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;  // row-major

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  return n > 0 ? (1.0 / n) * a : Vec3{0, 0, 0};
}

inline Vec3 apply(const Mat3& m, const Vec3& v) { return {dot(m[0], v), dot(m[1], v), dot(m[2], v)}; }

inline Mat3 transpose(const Mat3& m) {
  return {Vec3{m[0][0], m[1][0], m[2][0]}, Vec3{m[0][1], m[1][1], m[2][1]}, Vec3{m[0][2], m[1][2], m[2][2]}};
}

inline Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  const Mat3 bt = transpose(b);
  Mat3 out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[r][c] = dot(a[r], bt[c]);
  return out;
}

inline Mat3 identity3() { return {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}}; }

/// Rotation from XYZ Euler angles (radians), applied as Rz·Ry·Rx.
inline Mat3 euler_xyz(const Vec3& angles) {
  const double cx = std::cos(angles[0]), sx = std::sin(angles[0]);
  const double cy = std::cos(angles[1]), sy = std::sin(angles[1]);
  const double cz = std::cos(angles[2]), sz = std::sin(angles[2]);
  const Mat3 rx{Vec3{1, 0, 0}, Vec3{0, cx, -sx}, Vec3{0, sx, cx}};
  const Mat3 ry{Vec3{cy, 0, sy}, Vec3{0, 1, 0}, Vec3{-sy, 0, cy}};
  const Mat3 rz{Vec3{cz, -sz, 0}, Vec3{sz, cz, 0}, Vec3{0, 0, 1}};
  return mat_mul(rz, mat_mul(ry, rx));
}

/// x ↦ R·x + t
struct RigidTransform {
  Mat3 rotation = identity3();
  Vec3 translation{0, 0, 0};

  Vec3 apply_point(const Vec3& p) const { return pixpoint::apply(rotation, p) + translation; }
  Vec3 apply_vector(const Vec3& v) const { return pixpoint::apply(rotation, v); }
};

/// max |R·Rᵀ − I| entry
inline double orthonormality_error(const Mat3& r) {
  const Mat3 p = mat_mul(r, transpose(r));
  const Mat3 id = identity3();
  double err = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) err = std::fmax(err, std::fabs(p[i][j] - id[i][j]));
  return err;
}

}  // namespace pixpoint
