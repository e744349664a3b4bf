#pragma once

namespace textloc {

// Geographic point in degrees. lat in [-90, 90], lon in (-180, 180].
struct GeoPoint {
    double lat = 0.0;
    double lon = 0.0;
};

bool valid_geo_point(const GeoPoint& p);

struct GeodesicResult {
    double km = 0.0;
    // True when the iteration did not converge (near-antipodal input) and the
    // spherical great-circle distance was used instead.
    bool fallback = false;
};

// Iterative inverse geodesic on the WGS-84 ellipsoid. Arguments are ordered
// canonically before computing, so distance(a, b) == distance(b, a) holds
// bit for bit. Throws std::invalid_argument for coordinates outside the
// GeoPoint ranges.
GeodesicResult vincenty_distance(const GeoPoint& a, const GeoPoint& b);

// Spherical great-circle distance (mean radius 6371.0088 km); the
// non-convergence fallback and a coarse cross-check in tests.
double haversine_km(const GeoPoint& a, const GeoPoint& b);

}  // namespace textloc
