#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>

namespace starid {

constexpr double kDegPerRad = 57.29577951308232;
constexpr double kRadPerDeg = 0.017453292519943295;

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const;
};

// A Vec3 that is guaranteed unit length at construction. Functions that
// require unit input take this type so the invariant lives in one place.
class UnitVec3 {
public:
    // Throws std::domain_error if v is too short to normalize.
    static UnitVec3 normalize(const Vec3& v);

    const Vec3& vec() const { return v_; }
    double x() const { return v_.x; }
    double y() const { return v_.y; }
    double z() const { return v_.z; }

private:
    explicit UnitVec3(const Vec3& v) : v_(v) {}
    Vec3 v_;
};

// Row-major 3x3 matrix. Only what the attitude path needs.
struct Mat3 {
    double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};

    static Mat3 identity();
    static Mat3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2);
    Vec3 row(int i) const { return {m[i][0], m[i][1], m[i][2]}; }
    Mat3 transpose() const;
    Mat3 operator*(const Mat3& o) const;
    Vec3 operator*(const Vec3& v) const;
};

// Celestial (ra, dec) in degrees to a unit vector; ra is measured in the
// x-y plane from +x, dec toward +z. Throws std::domain_error for dec outside
// [-90, 90]. ra is accepted modulo 360.
UnitVec3 radec_to_unit(double ra_deg, double dec_deg);

// Great-circle separation of two unit vectors, in degrees.
double angular_distance_deg(const UnitVec3& a, const UnitVec3& b);

// TRIAD: the rotation taking inertial-frame vectors (cs1, cs2) onto
// sensor-frame observations (os1, os2), pairs ordered consistently. Returns
// the direction cosine matrix C with os ~= C * cs, or nullopt when either
// pair is too close to collinear for the cross products to define a triad
// (cross-product norm < 1e-8).
std::optional<Mat3> triad_attitude(const UnitVec3& cs1, const UnitVec3& cs2,
                                   const UnitVec3& os1, const UnitVec3& os2);

// Attitude as right ascension / declination of the boresight plus roll about
// it, all degrees. ra in [0, 360), dec in [-90, 90], roll in [0, 360).
struct EulerAngles {
    double ra = 0.0;
    double dec = 0.0;
    double roll = 0.0;
    // |dec| > 89.999: ra and roll are individually meaningless (only their
    // combination is observable), callers should not difference them.
    bool near_pole = false;
};

// Rotation matrix for a camera whose boresight points at (ra, dec) with the
// given roll. The matrix maps inertial vectors into the camera frame; the
// camera z axis is the boresight (third row), x and y span the focal plane.
Mat3 euler_to_matrix(const EulerAngles& e);

// Inverse of euler_to_matrix for proper rotations. Sets near_pole when the
// boresight is within 0.001 deg of a celestial pole.
EulerAngles matrix_to_euler(const Mat3& c);

// Euler triple snapped to an fnx-degree grid, stored in grid steps so equal
// attitudes compare exactly. ra and roll wrap modulo 360 after rounding.
struct QuantizedAttitude {
    int64_t qra = 0;
    int64_t qdec = 0;
    int64_t qroll = 0;

    bool operator==(const QuantizedAttitude&) const = default;
    bool operator<(const QuantizedAttitude& o) const {
        if (qra != o.qra) return qra < o.qra;
        if (qdec != o.qdec) return qdec < o.qdec;
        return qroll < o.qroll;
    }
};

// Rounds half away from zero, like round(), never to even.
QuantizedAttitude quantize_attitude(const EulerAngles& e, double fnx_deg);

// Number of ra/roll grid steps per revolution for this fnx.
int64_t quantize_wrap_steps(double fnx_deg);

struct QuantizedAttitudeHash {
    size_t operator()(const QuantizedAttitude& q) const {
        uint64_t h = 0xCBF29CE484222325ull;
        for (uint64_t v : {static_cast<uint64_t>(q.qra), static_cast<uint64_t>(q.qdec),
                           static_cast<uint64_t>(q.qroll)}) {
            h ^= v;
            h *= 0x100000001B3ull;
        }
        return static_cast<size_t>(h);
    }
};

}  // namespace starid
