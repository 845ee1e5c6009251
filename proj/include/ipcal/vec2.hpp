#pragma once

#include <cmath>
#include <type_traits>

namespace ipcal {

/// Planar vector over a floating-point scalar. Everything outside the
/// high-precision finite-difference path uses Vec2.
template <class T>
struct BasicVec2 {
    T x = T(0);
    T y = T(0);

    constexpr BasicVec2& operator+=(BasicVec2 o) { x += o.x; y += o.y; return *this; }
    constexpr BasicVec2& operator-=(BasicVec2 o) { x -= o.x; y -= o.y; return *this; }
    constexpr BasicVec2& operator*=(T s) { x *= s; y *= s; return *this; }
    friend constexpr bool operator==(const BasicVec2&, const BasicVec2&) = default;
};

using Vec2 = BasicVec2<double>;

template <class T>
constexpr BasicVec2<T> operator+(BasicVec2<T> a, BasicVec2<T> b) { return {a.x + b.x, a.y + b.y}; }
template <class T>
constexpr BasicVec2<T> operator-(BasicVec2<T> a, BasicVec2<T> b) { return {a.x - b.x, a.y - b.y}; }
template <class T>
constexpr BasicVec2<T> operator-(BasicVec2<T> a) { return {-a.x, -a.y}; }
template <class T>
constexpr BasicVec2<T> operator*(std::type_identity_t<T> s, BasicVec2<T> a) { return {s * a.x, s * a.y}; }
template <class T>
constexpr BasicVec2<T> operator*(BasicVec2<T> a, std::type_identity_t<T> s) { return {s * a.x, s * a.y}; }
template <class T>
constexpr T dot(BasicVec2<T> a, BasicVec2<T> b) { return a.x * b.x + a.y * b.y; }

template <class T>
T norm(BasicVec2<T> a) {
    if constexpr (std::is_floating_point_v<T>) {
        return std::hypot(a.x, a.y);
    } else {
        using std::sqrt;
        return sqrt(a.x * a.x + a.y * a.y);
    }
}

/// Counter-clockwise quarter turn: (x, y) -> (-y, x).
template <class T>
constexpr BasicVec2<T> perp(BasicVec2<T> a) { return {-a.y, a.x}; }

template <class T>
constexpr BasicVec2<T> lift(Vec2 v) { return {T(v.x), T(v.y)}; }

/// Row-major 2x2 matrix.
struct Mat2 {
    double a = 0.0, b = 0.0;
    double c = 0.0, d = 0.0;

    static constexpr Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }
    static constexpr Mat2 outer(Vec2 u, Vec2 v) { return {u.x * v.x, u.x * v.y, u.y * v.x, u.y * v.y}; }

    constexpr Mat2& operator+=(const Mat2& o) { a += o.a; b += o.b; c += o.c; d += o.d; return *this; }
    constexpr Mat2 transposed() const { return {a, c, b, d}; }
};

constexpr Mat2 operator+(Mat2 m, const Mat2& o) { return m += o; }
constexpr Mat2 operator-(const Mat2& m, const Mat2& o) { return {m.a - o.a, m.b - o.b, m.c - o.c, m.d - o.d}; }
constexpr Mat2 operator*(double s, const Mat2& m) { return {s * m.a, s * m.b, s * m.c, s * m.d}; }
constexpr Mat2 operator*(const Mat2& m, const Mat2& o) {
    return {m.a * o.a + m.b * o.c, m.a * o.b + m.b * o.d, m.c * o.a + m.d * o.c, m.c * o.b + m.d * o.d};
}
constexpr Vec2 operator*(const Mat2& m, Vec2 v) { return {m.a * v.x + m.b * v.y, m.c * v.x + m.d * v.y}; }

/// mᵀ v, the pullback of a cotangent through a linear map.
constexpr Vec2 transpose_apply(const Mat2& m, Vec2 v) { return {m.a * v.x + m.c * v.y, m.b * v.x + m.d * v.y}; }

} // namespace ipcal
