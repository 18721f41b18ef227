#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>

namespace gshider {

struct Vec2 {
    double x = 0.0, y = 0.0;
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
};

struct Vec4 {
    double w = 0.0, x = 0.0, y = 0.0, z = 0.0;

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
};

/// 2x2 symmetric matrix stored as (xx, xy, yy).
struct Sym2 {
    double xx = 0.0, xy = 0.0, yy = 0.0;

    double det() const { return xx * yy - xy * xy; }
    /// Largest eigenvalue; both eigenvalues are real for symmetric input.
    double max_eigenvalue() const {
        double mid = 0.5 * (xx + yy);
        double d = 0.5 * (xx - yy);
        return mid + std::sqrt(d * d + xy * xy);
    }
    double min_eigenvalue() const {
        double mid = 0.5 * (xx + yy);
        double d = 0.5 * (xx - yy);
        return mid - std::sqrt(d * d + xy * xy);
    }
    Sym2 inverse() const {
        double d = det();
        return {yy / d, -xy / d, xx / d};
    }
};

/// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{};

    double& operator()(int r, int c) { return m[r * 3 + c]; }
    double operator()(int r, int c) const { return m[r * 3 + c]; }

    static Mat3 identity() {
        Mat3 out;
        out(0, 0) = out(1, 1) = out(2, 2) = 1.0;
        return out;
    }
    static Mat3 diagonal(double a, double b, double c) {
        Mat3 out;
        out(0, 0) = a;
        out(1, 1) = b;
        out(2, 2) = c;
        return out;
    }

    Mat3 transposed() const {
        Mat3 out;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) out(r, c) = (*this)(c, r);
        return out;
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 out;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int k = 0; k < 3; ++k) acc += (*this)(r, k) * o(k, c);
                out(r, c) = acc;
            }
        return out;
    }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 operator+(const Mat3& o) const {
        Mat3 out;
        for (int i = 0; i < 9; ++i) out.m[i] = m[i] + o.m[i];
        return out;
    }
    Mat3 operator*(double s) const {
        Mat3 out;
        for (int i = 0; i < 9; ++i) out.m[i] = m[i] * s;
        return out;
    }
};

/// Rotation matrix of a quaternion (w, x, y, z). The quaternion is
/// normalized internally; a zero quaternion is invalid.
inline Mat3 quat_to_rotation(const Vec4& q) {
    double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n))
        throw std::invalid_argument("quat_to_rotation: non-finite or zero quaternion");
    double w = q.w / n, x = q.x / n, y = q.y / n, z = q.z / n;
    Mat3 r;
    r(0, 0) = 1.0 - 2.0 * (y * y + z * z);
    r(0, 1) = 2.0 * (x * y - w * z);
    r(0, 2) = 2.0 * (x * z + w * y);
    r(1, 0) = 2.0 * (x * y + w * z);
    r(1, 1) = 1.0 - 2.0 * (x * x + z * z);
    r(1, 2) = 2.0 * (y * z - w * x);
    r(2, 0) = 2.0 * (x * z - w * y);
    r(2, 1) = 2.0 * (y * z + w * x);
    r(2, 2) = 1.0 - 2.0 * (x * x + y * y);
    return r;
}

/// Partial derivatives of quat_to_rotation's matrix w.r.t. the *normalized*
/// components, indexed 0..3 = (w, x, y, z).
inline Mat3 quat_rotation_derivative(const Vec4& qn, int comp) {
    double w = qn.w, x = qn.x, y = qn.y, z = qn.z;
    Mat3 d;
    switch (comp) {
    case 0:
        d(0, 0) = 0;       d(0, 1) = -2 * z;  d(0, 2) = 2 * y;
        d(1, 0) = 2 * z;   d(1, 1) = 0;       d(1, 2) = -2 * x;
        d(2, 0) = -2 * y;  d(2, 1) = 2 * x;   d(2, 2) = 0;
        break;
    case 1:
        d(0, 0) = 0;       d(0, 1) = 2 * y;   d(0, 2) = 2 * z;
        d(1, 0) = 2 * y;   d(1, 1) = -4 * x;  d(1, 2) = -2 * w;
        d(2, 0) = 2 * z;   d(2, 1) = 2 * w;   d(2, 2) = -4 * x;
        break;
    case 2:
        d(0, 0) = -4 * y;  d(0, 1) = 2 * x;   d(0, 2) = 2 * w;
        d(1, 0) = 2 * x;   d(1, 1) = 0;       d(1, 2) = 2 * z;
        d(2, 0) = -2 * w;  d(2, 1) = 2 * z;   d(2, 2) = -4 * y;
        break;
    default:
        d(0, 0) = -4 * z;  d(0, 1) = -2 * w;  d(0, 2) = 2 * x;
        d(1, 0) = 2 * w;   d(1, 1) = -4 * z;  d(1, 2) = 2 * y;
        d(2, 0) = 2 * x;   d(2, 1) = 2 * y;   d(2, 2) = 0;
        break;
    }
    return d;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace gshider
