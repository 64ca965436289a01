#pragma once

#include <cmath>

namespace cqa {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    const double n = norm();
    return n > 0 ? Vec3{x / n, y / n, z / n} : Vec3{};
  }
};

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }
inline double distance_sq(const Vec3& a, const Vec3& b) {
  const Vec3 d = a - b;
  return d.dot(d);
}

// Signed dihedral about b-c for the chain a-b-c-d, in degrees in (-180, 180].
inline double dihedral_deg(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  const Vec3 b1 = b - a;
  const Vec3 b2 = c - b;
  const Vec3 b3 = d - c;
  const Vec3 n1 = b1.cross(b2);
  const Vec3 n2 = b2.cross(b3);
  const Vec3 m1 = n1.cross(b2.normalized());
  const double x = n1.dot(n2);
  const double y = m1.dot(n2);
  return std::atan2(y, x) * 180.0 / M_PI;
}

// Place a fourth point given three reference points and internal coordinates
// (bond length to c, angle b-c-p, torsion a-b-c-p in degrees). Used to build
// synthetic backbones and to approximate missing atoms.
inline Vec3 place_internal(const Vec3& a, const Vec3& b, const Vec3& c, double bond,
                           double angle_deg, double torsion_deg) {
  const double ang = angle_deg * M_PI / 180.0;
  const double tor = torsion_deg * M_PI / 180.0;
  const Vec3 bc = (c - b).normalized();
  const Vec3 ab = b - a;
  const Vec3 n = ab.cross(bc).normalized();
  const Vec3 m = n.cross(bc);
  const Vec3 d2{-bond * std::cos(ang), bond * std::sin(ang) * std::cos(tor),
                bond * std::sin(ang) * std::sin(tor)};
  return c + bc * d2.x + m * d2.y + n * d2.z;
}

}  // namespace cqa
