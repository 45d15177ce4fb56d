#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "olbp/common.hpp"
#include "olbp/dataset.hpp"
#include "olbp/fixation.hpp"
#include "olbp/image.hpp"

namespace olbp {

// Desk-scale scene source: labeled shapes on a textured background with
// simulated per-subject gaze. Every quantity is a pure function of the seed.
struct SynthSpec {
    std::int64_t width = 64, height = 64;
    int min_objects = 2, max_objects = 4;
    std::vector<std::string> shapes = {"rectangle", "ellipse", "blob"};
    int subjects = 3;
    int min_fixations = 6, max_fixations = 12;
    double bg_fix_prob = 0.2;  // chance that a non-designated fixation hits background
    int max_gazed = 2;         // objects of interest per subject
    int max_retries = 200;     // placement attempts before giving up
    double fdm_sigma = 2.0;
};

struct SynthScene {
    ImageRGB8 image;
    SemanticGT semantic;
    std::vector<FixationMap> fixations;          // one per subject
    std::vector<std::set<std::int32_t>> gazed;   // designated objects per subject
    std::vector<bool> constrained;               // generator truth per subject
};

namespace detail {

inline void rasterize_shape(Plane<std::int32_t>& labels, const std::string& kind,
                            std::int32_t label, std::mt19937_64& rng,
                            std::vector<std::pair<int, int>>& pixels) {
    const std::int64_t h = labels.h, w = labels.w;
    const std::int64_t min_dim = std::min(h, w);
    std::uniform_int_distribution<std::int64_t> size_d(std::max<std::int64_t>(4, min_dim / 10),
                                                       std::max<std::int64_t>(6, min_dim / 3));
    const std::int64_t sh = size_d(rng), sw = size_d(rng);
    std::uniform_int_distribution<std::int64_t> y_d(1, std::max<std::int64_t>(1, h - sh - 1));
    std::uniform_int_distribution<std::int64_t> x_d(1, std::max<std::int64_t>(1, w - sw - 1));
    const std::int64_t y0 = y_d(rng), x0 = x_d(rng);

    pixels.clear();
    auto emit = [&](std::int64_t i, std::int64_t j) {
        if (i >= 0 && i < h && j >= 0 && j < w)
            pixels.emplace_back(static_cast<int>(j), static_cast<int>(i));
    };
    if (kind == "rectangle") {
        for (std::int64_t i = y0; i < y0 + sh; ++i)
            for (std::int64_t j = x0; j < x0 + sw; ++j) emit(i, j);
    } else if (kind == "ellipse") {
        const double cy = y0 + sh / 2.0, cx = x0 + sw / 2.0;
        const double ry = std::max(2.0, sh / 2.0), rx = std::max(2.0, sw / 2.0);
        for (std::int64_t i = y0; i < y0 + sh; ++i)
            for (std::int64_t j = x0; j < x0 + sw; ++j) {
                const double dy = (i + 0.5 - cy) / ry, dx = (j + 0.5 - cx) / rx;
                if (dy * dy + dx * dx <= 1.0) emit(i, j);
            }
    } else if (kind == "blob") {
        // a few overlapping disks around one anchor keeps the region connected
        const double cy = y0 + sh / 2.0, cx = x0 + sw / 2.0;
        const double r0 = std::max(2.0, std::min(sh, sw) / 2.5);
        std::uniform_real_distribution<double> jitter(-r0 * 0.8, r0 * 0.8);
        std::uniform_real_distribution<double> rad(r0 * 0.5, r0);
        std::vector<std::array<double, 3>> disks{{cy, cx, r0}};
        const int extra = 2 + static_cast<int>(rng() % 2);
        for (int d = 0; d < extra; ++d)
            disks.push_back({cy + jitter(rng), cx + jitter(rng), rad(rng)});
        for (std::int64_t i = std::max<std::int64_t>(0, y0 - sh); i < std::min(h, y0 + 2 * sh); ++i)
            for (std::int64_t j = std::max<std::int64_t>(0, x0 - sw); j < std::min(w, x0 + 2 * sw); ++j)
                for (const auto& [dy, dx, r] : disks) {
                    const double a = i + 0.5 - dy, b = j + 0.5 - dx;
                    if (a * a + b * b <= r * r) {
                        emit(i, j);
                        break;
                    }
                }
    } else {
        throw DataError("unknown shape kind: " + kind);
    }
    (void)label;
}

inline std::array<std::uint8_t, 3> object_color(std::uint64_t seed, std::int32_t label) {
    const std::uint64_t m = mix_seed(seed, 0x0b1ec7ULL + std::uint64_t(label));
    return {static_cast<std::uint8_t>(80 + (m & 0xaf)),
            static_cast<std::uint8_t>(80 + ((m >> 8) & 0xaf)),
            static_cast<std::uint8_t>(80 + ((m >> 16) & 0xaf))};
}

}  // namespace detail

inline SynthScene gen_synthetic_scene(const SynthSpec& spec, std::uint64_t rng_seed) {
    if (spec.min_objects < 1 || spec.max_objects < spec.min_objects)
        throw DataError("gen_synthetic_scene: bad object count range");
    if (spec.subjects < 1) throw DataError("gen_synthetic_scene: need at least one subject");
    if (spec.shapes.empty()) throw DataError("gen_synthetic_scene: empty shape vocabulary");

    std::mt19937_64 rng(mix_seed(rng_seed, 0x5ce9eULL));
    SynthScene scene;
    scene.semantic.labels = Plane<std::int32_t>(spec.height, spec.width);
    auto& labels = scene.semantic.labels;

    std::uniform_int_distribution<int> count_d(spec.min_objects, spec.max_objects);
    const int n_objects = count_d(rng);
    std::vector<std::vector<std::pair<int, int>>> object_pixels;

    std::vector<std::pair<int, int>> candidate;
    for (std::int32_t label = 1; label <= n_objects; ++label) {
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
            const std::string& kind = spec.shapes[rng() % spec.shapes.size()];
            detail::rasterize_shape(labels, kind, label, rng, candidate);
            if (candidate.size() < 9) continue;
            bool overlap = false;
            for (const auto& [x, y] : candidate)
                if (labels.at(y, x) != 0) {
                    overlap = true;
                    break;
                }
            if (overlap) continue;
            for (const auto& [x, y] : candidate) labels.at(y, x) = label;
            object_pixels.push_back(candidate);
            placed = true;
        }
        if (!placed)
            throw DataError("gen_synthetic_scene: could not place object " +
                            std::to_string(label) + " after " +
                            std::to_string(spec.max_retries) + " attempts");
    }

    std::vector<std::pair<int, int>> background;
    for (std::int64_t i = 0; i < labels.h; ++i)
        for (std::int64_t j = 0; j < labels.w; ++j)
            if (labels.at(i, j) == 0)
                background.emplace_back(static_cast<int>(j), static_cast<int>(i));
    if (background.empty())
        throw DataError("gen_synthetic_scene: objects cover the whole canvas");

    // textured image: gradient background plus per-pixel noise, solid-ish objects
    scene.image = ImageRGB8(spec.height, spec.width);
    const auto bg_a = detail::object_color(rng_seed, 300), bg_b = detail::object_color(rng_seed, 301);
    std::uniform_int_distribution<int> noise_d(-12, 12);
    for (std::int64_t i = 0; i < spec.height; ++i)
        for (std::int64_t j = 0; j < spec.width; ++j) {
            const std::int32_t label = labels.at(i, j);
            for (int c = 0; c < 3; ++c) {
                double base;
                if (label == 0) {
                    const double t = double(i + j) / double(spec.height + spec.width);
                    base = (1.0 - t) * bg_a[std::size_t(c)] + t * bg_b[std::size_t(c)];
                } else {
                    base = detail::object_color(rng_seed, label)[std::size_t(c)];
                }
                const int v = static_cast<int>(base) + noise_d(rng);
                scene.image.at(i, j, c) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
            }
        }

    // per-subject gaze: one guaranteed fixation inside each designated object,
    // the remainder split between designated objects and background
    std::uniform_int_distribution<int> gaze_d(1, std::max(1, std::min(spec.max_gazed, n_objects)));
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (int s = 0; s < spec.subjects; ++s) {
        std::set<std::int32_t> chosen;
        const int want = gaze_d(rng);
        while (static_cast<int>(chosen.size()) < want)
            chosen.insert(1 + static_cast<std::int32_t>(rng() % n_objects));

        std::uniform_int_distribution<int> fix_d(spec.min_fixations, spec.max_fixations);
        int m = std::max(fix_d(rng), static_cast<int>(chosen.size()) + 1);

        FixationMap fm;
        fm.width = spec.width;
        fm.height = spec.height;
        bool hit_background = false;
        for (std::int32_t obj : chosen) {
            const auto& px = object_pixels[std::size_t(obj - 1)];
            fm.points.push_back(px[rng() % px.size()]);
        }
        std::vector<std::int32_t> pool(chosen.begin(), chosen.end());
        for (int k = static_cast<int>(chosen.size()); k < m; ++k) {
            if (coin(rng) < spec.bg_fix_prob) {
                fm.points.push_back(background[rng() % background.size()]);
                hit_background = true;
            } else {
                const auto& px = object_pixels[std::size_t(pool[rng() % pool.size()] - 1)];
                fm.points.push_back(px[rng() % px.size()]);
            }
        }
        fm.validate();
        scene.fixations.push_back(std::move(fm));
        scene.gazed.push_back(std::move(chosen));
        scene.constrained.push_back(!hit_background);
    }
    return scene;
}

// Union of the subject's designated object regions; by construction this is
// exactly what the three-step transformation must reproduce.
inline BinarySegGT synth_expected_gt(const SynthScene& scene, int subject) {
    const auto& gazed = scene.gazed.at(static_cast<std::size_t>(subject));
    BinarySegGT gt{Plane<std::uint8_t>(scene.semantic.labels.h, scene.semantic.labels.w)};
    for (std::int64_t i = 0; i < scene.semantic.labels.size(); ++i)
        gt.mask.v[std::size_t(i)] =
            gazed.count(scene.semantic.labels.v[std::size_t(i)]) ? 1 : 0;
    return gt;
}

}  // namespace olbp
