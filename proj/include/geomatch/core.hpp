/*=========================================================================
 *
 *  Copyright the geomatch authors
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *         http://www.apache.org/licenses/LICENSE-2.0.txt
 *
 *  Unless required by applicable law or agreed to in writing, software
 *  distributed under the License is distributed on an "AS IS" BASIS,
 *  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 *  See the License for the specific language governing permissions and
 *  limitations under the License.
 *
 *=========================================================================*/
#ifndef GEOMATCH_CORE_HPP
#define GEOMATCH_CORE_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace geomatch {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteError : NumericalError {
  using NumericalError::NumericalError;
};
struct JacobianCollapseError : NumericalError {
  using NumericalError::NumericalError;
};
struct SingularDifferentialError : NumericalError {
  using NumericalError::NumericalError;
};
struct LineSearchStallError : NumericalError {
  using NumericalError::NumericalError;
};

struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PartitionGapError : GeometryError {
  using GeometryError::GeometryError;
};
struct OnJumpError : GeometryError {
  using GeometryError::GeometryError;
};
struct OutsideDomainError : GeometryError {
  using GeometryError::GeometryError;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Small fixed-size linear algebra (2-D problems only)
// ---------------------------------------------------------------------------

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double xx, double yy) : x(xx), y(yy) {}

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator-() const { return {-x, -y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator/(double s) const { return {x / s, y / s}; }
  Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  Vec2& operator-=(Vec2 o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  Vec2& operator*=(double s) {
    x *= s;
    y *= s;
    return *this;
  }
};

inline Vec2 operator*(double s, Vec2 v) { return v * s; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm_sq(Vec2 a) { return dot(a, a); }
inline double norm(Vec2 a) { return std::sqrt(norm_sq(a)); }
// rotate by +90 degrees: the left-hand normal of a direction vector
inline Vec2 perp_left(Vec2 d) { return {-d.y, d.x}; }

/// Row-major 2x2 matrix.
struct Mat2 {
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;  // [a b; c d]

  static Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }
  static Mat2 zero() { return {}; }
  static Mat2 outer(Vec2 u, Vec2 v) { return {u.x * v.x, u.x * v.y, u.y * v.x, u.y * v.y}; }

  double det() const { return a * d - b * c; }
  double trace() const { return a + d; }
  Mat2 transpose() const { return {a, c, b, d}; }
  double frobenius() const { return std::sqrt(a * a + b * b + c * c + d * d); }

  Mat2 operator+(const Mat2& o) const { return {a + o.a, b + o.b, c + o.c, d + o.d}; }
  Mat2 operator-(const Mat2& o) const { return {a - o.a, b - o.b, c - o.c, d - o.d}; }
  Mat2 operator*(double s) const { return {a * s, b * s, c * s, d * s}; }
  Mat2& operator+=(const Mat2& o) {
    a += o.a;
    b += o.b;
    c += o.c;
    d += o.d;
    return *this;
  }
  Mat2 operator*(const Mat2& o) const {
    return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
  }
  Vec2 operator*(Vec2 v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
};

inline Mat2 operator*(double s, const Mat2& m) { return m * s; }

/// Inverse; throws SingularDifferentialError below the determinant floor.
inline Mat2 inverse(const Mat2& m, double det_floor = 1e-10) {
  const double det = m.det();
  if (std::abs(det) < det_floor)
    throw SingularDifferentialError("2x2 matrix inverse: |det| = " + std::to_string(std::abs(det)));
  const double s = 1.0 / det;
  return {m.d * s, -m.b * s, -m.c * s, m.a * s};
}

/// Solve A^T y = x (used for inverse-adjoint momentum transport).
inline Vec2 solve_transposed(const Mat2& m, Vec2 rhs, double det_floor = 1e-10) {
  const double det = m.det();
  if (std::abs(det) < det_floor)
    throw SingularDifferentialError("2x2 transposed solve: |det| = " + std::to_string(std::abs(det)));
  const double s = 1.0 / det;
  // inverse of transpose = transpose of inverse = [d -c; -b a]/det
  return {(m.d * rhs.x - m.c * rhs.y) * s, (-m.b * rhs.x + m.a * rhs.y) * s};
}

inline bool finite(Vec2 v) { return std::isfinite(v.x) && std::isfinite(v.y); }
inline bool finite(const Mat2& m) {
  return std::isfinite(m.a) && std::isfinite(m.b) && std::isfinite(m.c) && std::isfinite(m.d);
}

// ---------------------------------------------------------------------------
// Summation
// ---------------------------------------------------------------------------

/// Index-ascending accumulator with optional Kahan compensation.
class Accumulator {
 public:
  explicit Accumulator(bool compensated = false) : compensated_(compensated) {}
  void add(double x) {
    if (compensated_) {
      const double y = x - comp_;
      const double t = sum_ + y;
      comp_ = (t - sum_) - y;
      sum_ = t;
    } else {
      sum_ += x;
    }
  }
  double value() const { return sum_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
  bool compensated_ = false;
};

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

/// Worker cap from GEOMATCH_THREADS (unset or 0 means sequential).
int worker_cap();

/// Runs fn(i) for i in [0, n). Each index writes only its own outputs, so the
/// result does not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// ---------------------------------------------------------------------------
// Cell-centered quadrature grid on M = [0,1]^2
// ---------------------------------------------------------------------------

struct CellGrid {
  int n = 0;  // cells per side

  double spacing() const { return 1.0 / n; }
  double weight() const { return 1.0 / (double(n) * double(n)); }
  int size() const { return n * n; }
  Vec2 node(int i, int j) const {
    const double h = spacing();
    return {(i + 0.5) * h, (j + 0.5) * h};
  }
  Vec2 node(int flat) const { return node(flat % n, flat / n); }
  int flat(int i, int j) const { return i + n * j; }
  std::vector<Vec2> nodes() const {
    std::vector<Vec2> out(size());
    for (int f = 0; f < size(); ++f) out[f] = node(f);
    return out;
  }
};

/// Bilinear interpolation of values living at the cell centers of a CellGrid.
/// Clamped outside [h/2, 1-h/2].
double eval_cell_grid(const std::vector<double>& values, int n, Vec2 x);

}  // namespace geomatch

#endif
