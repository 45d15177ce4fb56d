#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "olbp/common.hpp"
#include "olbp/image.hpp"
#include "olbp/ops.hpp"
#include "olbp/tensor.hpp"

#include <json.hpp>

namespace olbp {

// Sparse per-subject gaze points on one image. Duplicates are legal
// (repeated gaze on the same pixel).
struct FixationMap {
    std::vector<std::pair<int, int>> points;  // (x, y)
    std::int64_t width = 0, height = 0;

    void validate() const {
        for (const auto& [x, y] : points)
            if (x < 0 || x >= width || y < 0 || y >= height)
                throw DataError("fixation (" + std::to_string(x) + "," + std::to_string(y) +
                                ") outside " + std::to_string(width) + "x" +
                                std::to_string(height));
    }
    bool empty() const { return points.empty(); }
};

// Dense min-max-normalized Gaussian blur of a fixation map.
struct FixationDensityMap {
    Plane<double> grid;  // values in [0,1], min 0 and max 1 for non-empty sources
    double sigma = 0.0;
};

constexpr double kDefaultFdmSigma = 24.0;  // 1 degree visual angle at 800x600

// Fixation file format: one "x,y" pair per line, '#' starts a comment.
inline std::vector<std::pair<int, int>> parse_fixation_points(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open fixation file: " + path);
    std::vector<std::pair<int, int>> pts;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::string trimmed;
        for (char ch : line)
            if (!std::isspace(static_cast<unsigned char>(ch))) trimmed += ch;
        if (trimmed.empty()) continue;
        const auto comma = trimmed.find(',');
        if (comma == std::string::npos)
            throw DataError(path + ":" + std::to_string(lineno) + ": expected \"x,y\"");
        try {
            pts.emplace_back(std::stoi(trimmed.substr(0, comma)),
                             std::stoi(trimmed.substr(comma + 1)));
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(lineno) + ": bad integer pair");
        }
    }
    return pts;
}

inline FixationMap load_fixation_map(const std::string& path, std::int64_t width,
                                     std::int64_t height) {
    FixationMap fm{parse_fixation_points(path), width, height};
    fm.validate();
    return fm;
}

inline void save_fixation_map(const std::string& path, const FixationMap& fm) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write fixation file: " + path);
    for (const auto& [x, y] : fm.points) out << x << "," << y << "\n";
}

namespace detail {

// 1D Gaussian taps truncated at radius ceil(3*sigma), normalized to sum 1.
inline std::vector<double> gaussian_kernel_1d(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (double(i) * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable blur with zero padding outside the grid.
inline Plane<double> gaussian_blur(const Plane<double>& in, double sigma) {
    const std::vector<double> k = gaussian_kernel_1d(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    Plane<double> tmp(in.h, in.w), out(in.h, in.w);
    for (std::int64_t i = 0; i < in.h; ++i)
        for (std::int64_t j = 0; j < in.w; ++j) {
            double acc = 0.0;
            const std::int64_t lo = std::max<std::int64_t>(0, j - radius);
            const std::int64_t hi = std::min<std::int64_t>(in.w - 1, j + radius);
            for (std::int64_t t = lo; t <= hi; ++t)
                acc += in.at(i, t) * k[static_cast<std::size_t>(t - j + radius)];
            tmp.at(i, j) = acc;
        }
    for (std::int64_t i = 0; i < in.h; ++i)
        for (std::int64_t j = 0; j < in.w; ++j) {
            double acc = 0.0;
            const std::int64_t lo = std::max<std::int64_t>(0, i - radius);
            const std::int64_t hi = std::min<std::int64_t>(in.h - 1, i + radius);
            for (std::int64_t t = lo; t <= hi; ++t)
                acc += tmp.at(t, j) * k[static_cast<std::size_t>(t - i + radius)];
            out.at(i, j) = acc;
        }
    return out;
}

inline void min_max_normalize(Plane<double>& g) {
    double lo = g.v[0], hi = g.v[0];
    for (double v : g.v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo <= 0.0)
        throw NumericError("density map is constant; min-max normalization undefined");
    for (double& v : g.v) v = (v - lo) / (hi - lo);
}

}  // namespace detail

// Rasterizes fixations as unit impulses (duplicates add), blurs with a
// Gaussian of the given standard deviation and min-max normalizes to [0,1].
inline FixationDensityMap make_fdm(const FixationMap& fm, double sigma = kDefaultFdmSigma) {
    if (fm.empty()) throw DataError("make_fdm: empty fixation map");
    if (sigma <= 0.0) throw DataError("make_fdm: sigma must be positive");
    fm.validate();
    Plane<double> impulses(fm.height, fm.width);
    for (const auto& [x, y] : fm.points) impulses.at(y, x) += 1.0;
    Plane<double> blurred = detail::gaussian_blur(impulses, sigma);
    detail::min_max_normalize(blurred);
    return {std::move(blurred), sigma};
}

// Density map for a network whose input resolution differs from the image:
// computed at native resolution, bilinearly resized, then re-normalized so
// the [0,1] range survives interpolation.
inline FixationDensityMap resize_fdm(const FixationDensityMap& fdm, std::int64_t h_out,
                                     std::int64_t w_out) {
    if (fdm.grid.h == h_out && fdm.grid.w == w_out) return fdm;
    Plane<double> g = resize_bilinear(fdm.grid, h_out, w_out);
    detail::min_max_normalize(g);
    return {std::move(g), fdm.sigma};
}

template <typename T>
Tensor4<T> fdm_to_tensor(const FixationDensityMap& fdm) {
    Tensor4<T> t({1, 1, fdm.grid.h, fdm.grid.w});
    for (std::int64_t i = 0; i < fdm.grid.size(); ++i)
        t.data()[i] = static_cast<T>(fdm.grid.v[std::size_t(i)]);
    return t;
}

// Level-i pyramid entry: max pooling with kernel and stride 2^(i-1), so the
// peak value 1 survives every level.
template <typename T>
Tensor4<T> downsample_fdm(const Tensor4<T>& fdm, int level) {
    if (level < 1 || level > 5)
        throw DataError("downsample_fdm: level " + std::to_string(level) + " outside 1..5");
    const int k = 1 << (level - 1);
    if (k == 1) return fdm;
    return maxpool2d<T>(nullptr, fdm, k, k);
}

template <typename T>
Tensor4<T> downsample_fdm(const FixationDensityMap& fdm, int level) {
    return downsample_fdm(fdm_to_tensor<T>(fdm), level);
}

// 16-bit grayscale export with a sidecar recording sigma.
inline void write_fdm_png(const std::string& path, const FixationDensityMap& fdm) {
    Plane<std::uint16_t> img(fdm.grid.h, fdm.grid.w);
    for (std::int64_t i = 0; i < fdm.grid.size(); ++i)
        img.v[std::size_t(i)] = static_cast<std::uint16_t>(
            std::lround(std::clamp(fdm.grid.v[std::size_t(i)], 0.0, 1.0) * 65535.0));
    write_png_gray16(path, img);
    nlohmann::json side{{"sigma", fdm.sigma}, {"width", fdm.grid.w}, {"height", fdm.grid.h},
                        {"bits", 16}};
    std::ofstream out(path + ".json");
    if (!out) throw DataError("cannot write sidecar: " + path + ".json");
    out << side.dump(2) << "\n";
}

}  // namespace olbp
