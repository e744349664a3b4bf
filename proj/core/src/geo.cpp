#include "textloc/geo.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace textloc {

namespace {

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
constexpr double kSemiMajorKm = 6378.137;             // WGS-84 a
constexpr double kFlattening = 1.0 / 298.257223563;   // WGS-84 f
constexpr double kSemiMinorKm = kSemiMajorKm * (1.0 - kFlattening);
constexpr double kMeanRadiusKm = 6371.0088;
constexpr double kLambdaTol = 1e-12;  // rad
constexpr int kMaxIterations = 200;

[[noreturn]] void reject(const GeoPoint& p) {
    throw std::invalid_argument("invalid geographic point lat=" + std::to_string(p.lat) +
                                " lon=" + std::to_string(p.lon));
}

}  // namespace

bool valid_geo_point(const GeoPoint& p) {
    return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
           p.lon > -180.0 && p.lon <= 180.0;
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
    const double phi1 = a.lat * kDegToRad, phi2 = b.lat * kDegToRad;
    const double dphi = (b.lat - a.lat) * kDegToRad;
    const double dlam = (b.lon - a.lon) * kDegToRad;
    const double s1 = std::sin(dphi / 2.0), s2 = std::sin(dlam / 2.0);
    const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
    return 2.0 * kMeanRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

GeodesicResult vincenty_distance(const GeoPoint& a, const GeoPoint& b) {
    if (!valid_geo_point(a)) reject(a);
    if (!valid_geo_point(b)) reject(b);

    // Canonical argument order makes the result exactly symmetric.
    const GeoPoint* p = &a;
    const GeoPoint* q = &b;
    if (q->lat < p->lat || (q->lat == p->lat && q->lon < p->lon)) std::swap(p, q);

    if (p->lat == q->lat && p->lon == q->lon) return {0.0, false};

    const double U1 = std::atan((1.0 - kFlattening) * std::tan(p->lat * kDegToRad));
    const double U2 = std::atan((1.0 - kFlattening) * std::tan(q->lat * kDegToRad));
    const double sinU1 = std::sin(U1), cosU1 = std::cos(U1);
    const double sinU2 = std::sin(U2), cosU2 = std::cos(U2);

    double L = (q->lon - p->lon) * kDegToRad;
    if (L > 3.14159265358979323846) L -= 2.0 * 3.14159265358979323846;
    if (L < -3.14159265358979323846) L += 2.0 * 3.14159265358979323846;

    double lambda = L;
    double sin_sigma = 0.0, cos_sigma = 0.0, sigma = 0.0;
    double cos2_alpha = 0.0, cos_2sigma_m = 0.0;
    bool converged = false;

    for (int it = 0; it < kMaxIterations; ++it) {
        const double sin_lambda = std::sin(lambda);
        const double cos_lambda = std::cos(lambda);
        const double t1 = cosU2 * sin_lambda;
        const double t2 = cosU1 * sinU2 - sinU1 * cosU2 * cos_lambda;
        sin_sigma = std::sqrt(t1 * t1 + t2 * t2);
        if (sin_sigma == 0.0) return {0.0, false};  // coincident on the auxiliary sphere
        cos_sigma = sinU1 * sinU2 + cosU1 * cosU2 * cos_lambda;
        sigma = std::atan2(sin_sigma, cos_sigma);
        const double sin_alpha = cosU1 * cosU2 * sin_lambda / sin_sigma;
        cos2_alpha = 1.0 - sin_alpha * sin_alpha;
        cos_2sigma_m = cos2_alpha == 0.0 ? 0.0 : cos_sigma - 2.0 * sinU1 * sinU2 / cos2_alpha;
        const double C = kFlattening / 16.0 * cos2_alpha *
                         (4.0 + kFlattening * (4.0 - 3.0 * cos2_alpha));
        const double prev = lambda;
        lambda = L + (1.0 - C) * kFlattening * sin_alpha *
                         (sigma + C * sin_sigma *
                                      (cos_2sigma_m +
                                       C * cos_sigma * (-1.0 + 2.0 * cos_2sigma_m * cos_2sigma_m)));
        if (std::fabs(lambda) > 3.14159265358979323846) break;  // diverging: near-antipodal
        if (std::fabs(lambda - prev) < kLambdaTol) {
            converged = true;
            break;
        }
    }

    if (!converged) return {haversine_km(*p, *q), true};

    const double u2 = cos2_alpha * (kSemiMajorKm * kSemiMajorKm - kSemiMinorKm * kSemiMinorKm) /
                      (kSemiMinorKm * kSemiMinorKm);
    const double A = 1.0 + u2 / 16384.0 * (4096.0 + u2 * (-768.0 + u2 * (320.0 - 175.0 * u2)));
    const double B = u2 / 1024.0 * (256.0 + u2 * (-128.0 + u2 * (74.0 - 47.0 * u2)));
    const double delta_sigma =
        B * sin_sigma *
        (cos_2sigma_m + B / 4.0 *
                            (cos_sigma * (-1.0 + 2.0 * cos_2sigma_m * cos_2sigma_m) -
                             B / 6.0 * cos_2sigma_m * (-3.0 + 4.0 * sin_sigma * sin_sigma) *
                                 (-3.0 + 4.0 * cos_2sigma_m * cos_2sigma_m)));
    return {kSemiMinorKm * A * (sigma - delta_sigma), false};
}

}  // namespace textloc
