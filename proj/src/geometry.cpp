#include "geometry.hpp"

#include <algorithm>
#include <cmath>

namespace starid {

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

UnitVec3 UnitVec3::normalize(const Vec3& v) {
    double n = v.norm();
    if (n < 1e-12) {
        throw std::domain_error("cannot normalize a near-zero vector");
    }
    return UnitVec3(v * (1.0 / n));
}

Mat3 Mat3::identity() {
    Mat3 r;
    r.m[0][0] = r.m[1][1] = r.m[2][2] = 1.0;
    return r;
}

Mat3 Mat3::from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
    Mat3 r;
    r.m[0][0] = r0.x; r.m[0][1] = r0.y; r.m[0][2] = r0.z;
    r.m[1][0] = r1.x; r.m[1][1] = r1.y; r.m[1][2] = r1.z;
    r.m[2][0] = r2.x; r.m[2][1] = r2.y; r.m[2][2] = r2.z;
    return r;
}

Mat3 Mat3::transpose() const {
    Mat3 r;
    for (int i = 0; i < 3; i++)
        for (int j = 0; j < 3; j++) r.m[i][j] = m[j][i];
    return r;
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; i++)
        for (int j = 0; j < 3; j++)
            r.m[i][j] = m[i][0] * o.m[0][j] + m[i][1] * o.m[1][j] + m[i][2] * o.m[2][j];
    return r;
}

Vec3 Mat3::operator*(const Vec3& v) const {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
}

UnitVec3 radec_to_unit(double ra_deg, double dec_deg) {
    if (dec_deg < -90.0 || dec_deg > 90.0) {
        throw std::domain_error("declination outside [-90, 90]");
    }
    double ra = ra_deg * kRadPerDeg;
    double dec = dec_deg * kRadPerDeg;
    Vec3 v{std::cos(dec) * std::cos(ra), std::cos(dec) * std::sin(ra), std::sin(dec)};
    return UnitVec3::normalize(v);
}

double angular_distance_deg(const UnitVec3& a, const UnitVec3& b) {
    double d = std::clamp(a.vec().dot(b.vec()), -1.0, 1.0);
    return std::acos(d) * kDegPerRad;
}

std::optional<Mat3> triad_attitude(const UnitVec3& cs1, const UnitVec3& cs2,
                                   const UnitVec3& os1, const UnitVec3& os2) {
    Vec3 ocross = os1.vec().cross(os2.vec());
    Vec3 rcross = cs1.vec().cross(cs2.vec());
    if (ocross.norm() < 1e-8 || rcross.norm() < 1e-8) {
        return std::nullopt;
    }
    Vec3 ob = ocross * (1.0 / ocross.norm());
    Vec3 rb = rcross * (1.0 / rcross.norm());
    // Each frame gets an orthogonal triad: the primary vector, the pair
    // normal, and their cross product, stacked as matrix rows. Composing the
    // sensor triad (transposed) with the inertial triad yields the rotation
    // that takes inertial vectors onto sensor observations.
    Mat3 cobs = Mat3::from_rows(os1.vec(), ob, os1.vec().cross(ob));
    Mat3 cref = Mat3::from_rows(cs1.vec(), rb, cs1.vec().cross(rb));
    return cobs.transpose() * cref;
}

// Focal-plane basis for a boresight at (ra, dec): east (increasing ra) and
// north (increasing dec). Roll rotates the camera x axis from east toward
// north.
static void boresight_basis(double ra, double dec, Vec3& east, Vec3& north) {
    double sra = std::sin(ra), cra = std::cos(ra);
    double sdec = std::sin(dec), cdec = std::cos(dec);
    east = {-sra, cra, 0.0};
    north = {-sdec * cra, -sdec * sra, cdec};
}

Mat3 euler_to_matrix(const EulerAngles& e) {
    double ra = e.ra * kRadPerDeg;
    double dec = e.dec * kRadPerDeg;
    double roll = e.roll * kRadPerDeg;
    Vec3 b = radec_to_unit(e.ra, e.dec).vec();
    Vec3 east, north;
    boresight_basis(ra, dec, east, north);
    Vec3 xcam = east * std::cos(roll) + north * std::sin(roll);
    Vec3 ycam = b.cross(xcam);
    return Mat3::from_rows(xcam, ycam, b);
}

static double wrap360(double deg) {
    double w = std::fmod(deg, 360.0);
    if (w < 0.0) w += 360.0;
    return w;
}

EulerAngles matrix_to_euler(const Mat3& c) {
    EulerAngles e;
    Vec3 b = c.row(2);
    double sz = std::clamp(b.z, -1.0, 1.0);
    e.dec = std::asin(sz) * kDegPerRad;
    e.near_pole = std::abs(e.dec) > 89.999;
    e.ra = wrap360(std::atan2(b.y, b.x) * kDegPerRad);
    Vec3 east, north;
    boresight_basis(e.ra * kRadPerDeg, e.dec * kRadPerDeg, east, north);
    Vec3 xcam = c.row(0);
    e.roll = wrap360(std::atan2(xcam.dot(north), xcam.dot(east)) * kDegPerRad);
    return e;
}

static int64_t round_half_away(double x) {
    // std::round is specified to round halves away from zero.
    return static_cast<int64_t>(std::round(x));
}

int64_t quantize_wrap_steps(double fnx_deg) {
    return round_half_away(360.0 / fnx_deg);
}

QuantizedAttitude quantize_attitude(const EulerAngles& e, double fnx_deg) {
    int64_t wrap = quantize_wrap_steps(fnx_deg);
    auto wrap_steps = [wrap](int64_t q) {
        int64_t w = q % wrap;
        if (w < 0) w += wrap;
        return w;
    };
    QuantizedAttitude q;
    q.qra = wrap_steps(round_half_away(e.ra / fnx_deg));
    q.qdec = round_half_away(e.dec / fnx_deg);
    q.qroll = wrap_steps(round_half_away(e.roll / fnx_deg));
    return q;
}

}  // namespace starid
