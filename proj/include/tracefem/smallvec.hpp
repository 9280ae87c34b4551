// Small fixed-size vector/matrix types used throughout the library.
#pragma once

#include <array>
#include <cmath>
#include <ostream>

namespace tracefem {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3 operator+(const Vec3& b) const { return {x + b.x, y + b.y, z + b.z}; }
  Vec3 operator-(const Vec3& b) const { return {x - b.x, y - b.y, z - b.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3& operator+=(const Vec3& b) { x += b.x; y += b.y; z += b.z; return *this; }
  Vec3& operator-=(const Vec3& b) { x -= b.x; y -= b.y; z -= b.z; return *this; }
  Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline double norm2(const Vec3& v) { return dot(v, v); }
inline Vec3 normalized(const Vec3& v) { return v / norm(v); }

inline std::ostream& operator<<(std::ostream& os, const Vec3& v) {
  return os << "(" << v.x << ", " << v.y << ", " << v.z << ")";
}

// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> a{};

  double& operator()(int i, int j) { return a[3 * i + j]; }
  double operator()(int i, int j) const { return a[3 * i + j]; }

  static Mat3 zero() { return {}; }
  static Mat3 identity() {
    Mat3 m;
    m(0, 0) = m(1, 1) = m(2, 2) = 1.0;
    return m;
  }
  // n * n^T
  static Mat3 outer(const Vec3& u, const Vec3& v) {
    Mat3 m;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m(i, j) = u[i] * v[j];
    return m;
  }

  Mat3 operator+(const Mat3& b) const {
    Mat3 m;
    for (int i = 0; i < 9; ++i) m.a[i] = a[i] + b.a[i];
    return m;
  }
  Mat3 operator-(const Mat3& b) const {
    Mat3 m;
    for (int i = 0; i < 9; ++i) m.a[i] = a[i] - b.a[i];
    return m;
  }
  Mat3 operator*(double s) const {
    Mat3 m;
    for (int i = 0; i < 9; ++i) m.a[i] = a[i] * s;
    return m;
  }
  Mat3 operator*(const Mat3& b) const {
    Mat3 m;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += (*this)(i, k) * b(k, j);
        m(i, j) = s;
      }
    return m;
  }
  Vec3 operator*(const Vec3& v) const {
    return {a[0] * v.x + a[1] * v.y + a[2] * v.z,
            a[3] * v.x + a[4] * v.y + a[5] * v.z,
            a[6] * v.x + a[7] * v.y + a[8] * v.z};
  }

  Mat3 transposed() const {
    Mat3 m;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m(i, j) = (*this)(j, i);
    return m;
  }
  double trace() const { return a[0] + a[4] + a[8]; }
  double frobenius() const {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
  }
  double max_abs() const {
    double s = 0.0;
    for (double v : a) s = std::max(s, std::abs(v));
    return s;
  }
};

inline Mat3 operator*(double s, const Mat3& m) { return m * s; }

// I - n n^T for a unit vector n.
inline Mat3 tangential_projector(const Vec3& n) {
  return Mat3::identity() - Mat3::outer(n, n);
}

}  // namespace tracefem
