#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "olbp/common.hpp"
#include "olbp/image.hpp"

namespace olbp {

namespace detail {

constexpr double kEdtInf = std::numeric_limits<double>::infinity();

// 1D squared-distance lower envelope (Felzenszwalb-Huttenlocher).
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
    const int n = static_cast<int>(f.size());
    static thread_local std::vector<int> v;
    static thread_local std::vector<double> z;
    v.assign(static_cast<std::size_t>(n), 0);
    z.assign(static_cast<std::size_t>(n + 1), 0.0);
    int k = 0;
    v[0] = 0;
    z[0] = -kEdtInf;
    z[1] = kEdtInf;
    for (int q = 1; q < n; ++q) {
        if (f[std::size_t(q)] == kEdtInf) continue;
        double s;
        while (true) {
            const int p = v[std::size_t(k)];
            if (f[std::size_t(p)] == kEdtInf) {
                s = -kEdtInf;
            } else {
                s = ((f[std::size_t(q)] + double(q) * q) - (f[std::size_t(p)] + double(p) * p)) /
                    (2.0 * q - 2.0 * p);
            }
            if (s <= z[std::size_t(k)] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        if (f[std::size_t(v[std::size_t(k)])] == kEdtInf) {
            v[std::size_t(k)] = q;  // replace an unreachable site
            z[std::size_t(k + 1)] = kEdtInf;
        } else {
            ++k;
            v[std::size_t(k)] = q;
            z[std::size_t(k)] = s;
            z[std::size_t(k + 1)] = kEdtInf;
        }
    }
    int kk = 0;
    for (int q = 0; q < n; ++q) {
        while (z[std::size_t(kk + 1)] < double(q)) ++kk;
        const int p = v[std::size_t(kk)];
        d[std::size_t(q)] = f[std::size_t(p)] == kEdtInf
                                ? kEdtInf
                                : double(q - p) * (q - p) + f[std::size_t(p)];
    }
}

}  // namespace detail

// Exact squared Euclidean distance from every pixel to the nearest nonzero
// pixel of `mask`. Pixels inside the mask get 0; an empty mask yields +inf
// everywhere.
inline Plane<double> squared_distance_transform(const Plane<std::uint8_t>& mask) {
    Plane<double> d(mask.h, mask.w, detail::kEdtInf);
    // column pass
    std::vector<double> f(static_cast<std::size_t>(mask.h)),
        dd(static_cast<std::size_t>(mask.h));
    for (std::int64_t j = 0; j < mask.w; ++j) {
        for (std::int64_t i = 0; i < mask.h; ++i)
            f[std::size_t(i)] = mask.at(i, j) ? 0.0 : detail::kEdtInf;
        detail::edt_1d(f, dd);
        for (std::int64_t i = 0; i < mask.h; ++i) d.at(i, j) = dd[std::size_t(i)];
    }
    // row pass over the column distances
    std::vector<double> g(static_cast<std::size_t>(mask.w)),
        gg(static_cast<std::size_t>(mask.w));
    for (std::int64_t i = 0; i < mask.h; ++i) {
        for (std::int64_t j = 0; j < mask.w; ++j) g[std::size_t(j)] = d.at(i, j);
        detail::edt_1d(g, gg);
        for (std::int64_t j = 0; j < mask.w; ++j) d.at(i, j) = gg[std::size_t(j)];
    }
    return d;
}

// Ring of width theta strictly outside the mask: dilation with a Euclidean
// disk of radius theta, minus the mask itself.
struct BoundaryGT {
    Plane<std::uint8_t> mask;
    int theta = 2;
};

inline BoundaryGT make_boundary_gt(const Plane<std::uint8_t>& gs, int theta = 2) {
    if (theta < 1) throw DataError("make_boundary_gt: theta must be >= 1");
    BoundaryGT out{Plane<std::uint8_t>(gs.h, gs.w), theta};
    bool any = false;
    for (auto v : gs.v) any = any || (v != 0);
    if (!any) return out;  // empty segmentation has an empty boundary
    const Plane<double> d2 = squared_distance_transform(gs);
    const double limit = static_cast<double>(theta) * theta;
    for (std::int64_t i = 0; i < gs.size(); ++i)
        out.mask.v[std::size_t(i)] =
            (d2.v[std::size_t(i)] > 0.0 && d2.v[std::size_t(i)] <= limit) ? 1 : 0;
    return out;
}

}  // namespace olbp
