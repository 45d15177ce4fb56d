#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "olbp/common.hpp"
#include "olbp/dataset.hpp"
#include "olbp/image.hpp"
#include "olbp/morphology.hpp"
#include "olbp/parallel.hpp"

namespace olbp {

namespace metric_detail {
constexpr double kEps = std::numeric_limits<double>::epsilon();

inline double mean_of(const Plane<double>& p) {
    double acc = 0.0;
    for (double v : p.v) acc += v;
    return acc / static_cast<double>(p.size());
}

inline std::int64_t count_fg(const Plane<std::uint8_t>& m) {
    std::int64_t n = 0;
    for (auto v : m.v) n += v;
    return n;
}

inline void check_same_dims(const char* who, std::int64_t h1, std::int64_t w1, std::int64_t h2,
                            std::int64_t w2) {
    if (h1 != h2 || w1 != w2)
        throw ShapeError(std::string(who) + ": dimension mismatch " + std::to_string(h1) + "x" +
                         std::to_string(w1) + " vs " + std::to_string(h2) + "x" +
                         std::to_string(w2));
}
}  // namespace metric_detail

// ---------------------------------------------------------------------------
// OTSU binarization
// ---------------------------------------------------------------------------

struct OtsuResult {
    Plane<std::uint8_t> mask;  // {0,1}
    double threshold = 1.0;    // mask is (p > threshold)
    int level = -1;            // chosen histogram bin, -1 if degenerate
    bool degenerate = false;   // constant input; mask is all zero
};

// 256-bin histogram threshold maximizing the between-class variance; ties go
// to the lowest bin. Values map to bins as min(255, floor(p*256)).
inline OtsuResult otsu_binarize(const Plane<double>& p) {
    OtsuResult res;
    res.mask = Plane<std::uint8_t>(p.h, p.w);
    std::vector<std::int64_t> hist(256, 0);
    std::vector<int> levels(static_cast<std::size_t>(p.size()));
    for (std::int64_t i = 0; i < p.size(); ++i) {
        const double v = p.v[std::size_t(i)];
        if (v < 0.0 || v > 1.0)
            throw DataError("otsu_binarize: value " + std::to_string(v) + " outside [0,1]");
        const int level = std::min(255, static_cast<int>(v * 256.0));
        levels[std::size_t(i)] = level;
        ++hist[std::size_t(level)];
    }
    int lo = 255, hi = 0;
    for (int l = 0; l < 256; ++l)
        if (hist[std::size_t(l)]) {
            lo = std::min(lo, l);
            hi = std::max(hi, l);
        }
    if (lo == hi) {
        res.degenerate = true;
        return res;
    }
    const double total = static_cast<double>(p.size());
    double sum_all = 0.0;
    for (int l = 0; l < 256; ++l) sum_all += double(l) * double(hist[std::size_t(l)]);
    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    int best_k = lo;
    for (int k = 0; k < 255; ++k) {
        w0 += double(hist[std::size_t(k)]);
        sum0 += double(k) * double(hist[std::size_t(k)]);
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0, mu1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best) {
            best = between;
            best_k = k;
        }
    }
    res.level = best_k;
    res.threshold = double(best_k + 1) / 256.0;
    for (std::int64_t i = 0; i < p.size(); ++i)
        res.mask.v[std::size_t(i)] = levels[std::size_t(i)] > best_k ? 1 : 0;
    return res;
}

// ---------------------------------------------------------------------------
// Region metrics
// ---------------------------------------------------------------------------

// Intersection-over-union. Both masks empty counts as a perfect match.
inline double jaccard(const Plane<std::uint8_t>& s, const Plane<std::uint8_t>& g) {
    metric_detail::check_same_dims("jaccard", s.h, s.w, g.h, g.w);
    std::int64_t inter = 0, uni = 0;
    for (std::int64_t i = 0; i < s.size(); ++i) {
        const bool a = s.v[std::size_t(i)] != 0, b = g.v[std::size_t(i)] != 0;
        inter += (a && b);
        uni += (a || b);
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// Weighted harmonic mean of precision and recall over binary maps.
inline double f_measure(const Plane<std::uint8_t>& s, const Plane<std::uint8_t>& g,
                        double beta2 = 0.3) {
    metric_detail::check_same_dims("f_measure", s.h, s.w, g.h, g.w);
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::int64_t i = 0; i < s.size(); ++i) {
        const bool a = s.v[std::size_t(i)] != 0, b = g.v[std::size_t(i)] != 0;
        tp += (a && b);
        fp += (a && !b);
        fn += (!a && b);
    }
    const double precision = (tp + fp) == 0 ? 0.0 : double(tp) / double(tp + fp);
    const double recall = (tp + fn) == 0 ? 0.0 : double(tp) / double(tp + fn);
    const double denom = beta2 * precision + recall;
    if (denom == 0.0) return 0.0;
    return (1.0 + beta2) * precision * recall / denom;
}

// Weighted F-measure over a probability map. Errors are spread by a 7x7
// Gaussian (sigma 5) dependency kernel; background errors decay with base-0.5
// exponential of the Euclidean distance to the object (unit 5 px).
inline double weighted_f(const Plane<double>& p, const Plane<std::uint8_t>& g,
                         double beta2 = 1.0, bool* empty_gt_flag = nullptr) {
    metric_detail::check_same_dims("weighted_f", p.h, p.w, g.h, g.w);
    const std::int64_t h = p.h, w = p.w, n = p.size();
    const std::int64_t fg = metric_detail::count_fg(g);
    if (empty_gt_flag) *empty_gt_flag = fg == 0;
    if (fg == 0) return 0.0;

    std::vector<double> err(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        err[std::size_t(i)] = std::fabs(p.v[std::size_t(i)] - double(g.v[std::size_t(i)]));

    const Plane<double> d2 = squared_distance_transform(g);

    // background pixels whose dependency value can reach a foreground pixel
    // through the 7x7 kernel, i.e. within Chebyshev distance 3 of the object
    Plane<std::uint8_t> near(h, w);
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j)
            if (g.at(i, j))
                for (std::int64_t a = std::max<std::int64_t>(0, i - 3);
                     a <= std::min(h - 1, i + 3); ++a)
                    for (std::int64_t b = std::max<std::int64_t>(0, j - 3);
                         b <= std::min(w - 1, j + 3); ++b)
                        near.at(a, b) = 1;

    // dependency field: background pixels take the error at their nearest
    // foreground pixel (ties: smallest squared distance, then row-major order)
    std::vector<double> et = err;
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
            if (g.at(i, j) || !near.at(i, j)) continue;
            const double want = d2.at(i, j);
            double best_d2 = std::numeric_limits<double>::infinity();
            std::int64_t best_idx = -1;
            for (std::int64_t a = std::max<std::int64_t>(0, i - 5);
                 a <= std::min(h - 1, i + 5); ++a)
                for (std::int64_t b = std::max<std::int64_t>(0, j - 5);
                     b <= std::min(w - 1, j + 5); ++b) {
                    if (!g.at(a, b)) continue;
                    const double dd = double((i - a) * (i - a) + (j - b) * (j - b));
                    if (dd < best_d2) {
                        best_d2 = dd;
                        best_idx = a * w + b;
                    }
                }
            if (best_idx >= 0 && best_d2 <= want + 1e-9)
                et[std::size_t(i * w + j)] = err[std::size_t(best_idx)];
        }

    // separable 7x7 Gaussian, sigma 5, zero padded, kernel normalized to sum 1
    std::array<double, 7> k1{};
    double ksum = 0.0;
    for (int t = -3; t <= 3; ++t) {
        k1[std::size_t(t + 3)] = std::exp(-0.5 * double(t) * t / 25.0);
        ksum += k1[std::size_t(t + 3)];
    }
    for (double& v : k1) v /= ksum;
    std::vector<double> tmp(static_cast<std::size_t>(n), 0.0), ea(static_cast<std::size_t>(n), 0.0);
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int t = -3; t <= 3; ++t) {
                const std::int64_t jj = j + t;
                if (jj >= 0 && jj < w) acc += et[std::size_t(i * w + jj)] * k1[std::size_t(t + 3)];
            }
            tmp[std::size_t(i * w + j)] = acc;
        }
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int t = -3; t <= 3; ++t) {
                const std::int64_t ii = i + t;
                if (ii >= 0 && ii < h) acc += tmp[std::size_t(ii * w + j)] * k1[std::size_t(t + 3)];
            }
            ea[std::size_t(i * w + j)] = acc;
        }

    double ew_fg = 0.0, ew_bg = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (g.v[std::size_t(i)]) {
            const double e = std::min(err[std::size_t(i)], ea[std::size_t(i)]);
            ew_fg += e;  // importance weight 1 inside the object
        } else {
            const double dist = std::sqrt(d2.v[std::size_t(i)]);
            const double importance = 2.0 - std::exp(std::log(0.5) / 5.0 * dist);
            ew_bg += err[std::size_t(i)] * importance;
        }
    }
    const double tpw = double(fg) - ew_fg;
    const double recall = 1.0 - ew_fg / double(fg);
    const double precision = tpw / (metric_detail::kEps + tpw + ew_bg);
    const double denom = beta2 * precision + recall;
    if (denom == 0.0) return 0.0;
    return (1.0 + beta2) * precision * recall / denom;
}

namespace metric_detail {

inline double sample_std(const std::vector<double>& vals, double mean) {
    if (vals.size() <= 1) return 0.0;
    double acc = 0.0;
    for (double v : vals) acc += (v - mean) * (v - mean);
    return std::sqrt(acc / double(vals.size() - 1));
}

inline double object_score(const std::vector<double>& region_vals) {
    if (region_vals.empty()) return 0.0;
    double mean = 0.0;
    for (double v : region_vals) mean += v;
    mean /= double(region_vals.size());
    const double sigma = sample_std(region_vals, mean);
    return 2.0 * mean / (mean * mean + 1.0 + sigma + kEps);
}

// region-level structural statistic between a probability patch and a binary
// patch, computed from means and (co)variances
inline double region_ssim(const Plane<double>& p, const Plane<std::uint8_t>& g, std::int64_t i0,
                          std::int64_t i1, std::int64_t j0, std::int64_t j1) {
    const std::int64_t cnt = (i1 - i0) * (j1 - j0);
    if (cnt <= 0) return 0.0;
    double x = 0.0, y = 0.0;
    for (std::int64_t i = i0; i < i1; ++i)
        for (std::int64_t j = j0; j < j1; ++j) {
            x += p.at(i, j);
            y += double(g.at(i, j));
        }
    x /= double(cnt);
    y /= double(cnt);
    double sx2 = 0.0, sy2 = 0.0, sxy = 0.0;
    for (std::int64_t i = i0; i < i1; ++i)
        for (std::int64_t j = j0; j < j1; ++j) {
            const double a = p.at(i, j) - x, b = double(g.at(i, j)) - y;
            sx2 += a * a;
            sy2 += b * b;
            sxy += a * b;
        }
    const double norm = double(cnt) - 1.0 + kEps;
    sx2 /= norm;
    sy2 /= norm;
    sxy /= norm;
    const double alpha = 4.0 * x * y * sxy;
    const double beta = (x * x + y * y) * (sx2 + sy2);
    if (alpha != 0.0) return alpha / (beta + kEps);
    return beta == 0.0 ? 1.0 : 0.0;
}

}  // namespace metric_detail

// Structure measure: object-aware similarity of foreground/background means
// and dispersion, plus region-aware structural similarity over the four
// quadrants split at the (1-based, rounded) foreground centroid.
inline double s_measure(const Plane<double>& p, const Plane<std::uint8_t>& g,
                        double lambda = 0.5) {
    metric_detail::check_same_dims("s_measure", p.h, p.w, g.h, g.w);
    const std::int64_t h = p.h, w = p.w, n = p.size();
    const std::int64_t fg = metric_detail::count_fg(g);
    if (fg == 0) return std::clamp(1.0 - metric_detail::mean_of(p), 0.0, 1.0);
    if (fg == n) return std::clamp(metric_detail::mean_of(p), 0.0, 1.0);

    // object-aware part
    std::vector<double> fg_vals, bg_vals;
    fg_vals.reserve(std::size_t(fg));
    bg_vals.reserve(std::size_t(n - fg));
    for (std::int64_t i = 0; i < n; ++i) {
        if (g.v[std::size_t(i)]) fg_vals.push_back(p.v[std::size_t(i)]);
        else bg_vals.push_back(1.0 - p.v[std::size_t(i)]);
    }
    const double u = double(fg) / double(n);
    const double so = u * metric_detail::object_score(fg_vals) +
                      (1.0 - u) * metric_detail::object_score(bg_vals);

    // region-aware part: centroid in 1-based coordinates, rounded
    double cx = 0.0, cy = 0.0;
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j)
            if (g.at(i, j)) {
                cy += double(i + 1);
                cx += double(j + 1);
            }
    const std::int64_t X = std::clamp<std::int64_t>(std::llround(cx / double(fg)), 1, w);
    const std::int64_t Y = std::clamp<std::int64_t>(std::llround(cy / double(fg)), 1, h);
    const double area = double(n);
    const double w1 = double(X * Y) / area;
    const double w2 = double((w - X) * Y) / area;
    const double w3 = double(X * (h - Y)) / area;
    const double w4 = 1.0 - w1 - w2 - w3;
    const double q1 = metric_detail::region_ssim(p, g, 0, Y, 0, X);
    const double q2 = metric_detail::region_ssim(p, g, 0, Y, X, w);
    const double q3 = metric_detail::region_ssim(p, g, Y, h, 0, X);
    const double q4 = metric_detail::region_ssim(p, g, Y, h, X, w);
    const double sr = w1 * q1 + w2 * q2 + w3 * q3 + w4 * q4;

    return std::clamp(lambda * so + (1.0 - lambda) * sr, 0.0, 1.0);
}

// Enhanced-alignment measure between binary maps: the mean of
// f(xi) = (1 + xi)^2 / 4 where xi correlates the mean-centred maps.
// All-zero GT scores the prediction alone (1 - s), all-one GT scores s.
inline double e_measure(const Plane<std::uint8_t>& s, const Plane<std::uint8_t>& g,
                        bool* degenerate_flag = nullptr) {
    metric_detail::check_same_dims("e_measure", s.h, s.w, g.h, g.w);
    const std::int64_t n = s.size();
    const std::int64_t fg = metric_detail::count_fg(g);
    if (degenerate_flag) *degenerate_flag = (fg == 0 || fg == n);
    double acc = 0.0;
    if (fg == 0) {
        for (std::int64_t i = 0; i < n; ++i) acc += 1.0 - double(s.v[std::size_t(i)]);
        return acc / double(n);
    }
    if (fg == n) {
        for (std::int64_t i = 0; i < n; ++i) acc += double(s.v[std::size_t(i)]);
        return acc / double(n);
    }
    const double mu_s = [&] {
        double m = 0.0;
        for (std::int64_t i = 0; i < n; ++i) m += double(s.v[std::size_t(i)]);
        return m / double(n);
    }();
    const double mu_g = double(fg) / double(n);
    for (std::int64_t i = 0; i < n; ++i) {
        const double phi_s = double(s.v[std::size_t(i)]) - mu_s;
        const double phi_g = double(g.v[std::size_t(i)]) - mu_g;
        const double xi = 2.0 * phi_g * phi_s /
                          (phi_g * phi_g + phi_s * phi_s + metric_detail::kEps);
        acc += (1.0 + xi) * (1.0 + xi) / 4.0;
    }
    return acc / double(n);
}

// ---------------------------------------------------------------------------
// Distribution divergences (base-2 logs, so JS lands in [0,1])
// ---------------------------------------------------------------------------

inline Plane<double> normalize_distribution(const Plane<double>& p) {
    double sum = 0.0;
    for (double v : p.v) {
        if (v < 0.0) throw DataError("normalize_distribution: negative mass");
        sum += v;
    }
    if (sum <= 0.0) throw DataError("normalize_distribution: all-zero input");
    Plane<double> out = p;
    for (double& v : out.v) v /= sum;
    return out;
}

inline double kl_divergence(const Plane<double>& p, const Plane<double>& q,
                            double eps = 1e-12) {
    metric_detail::check_same_dims("kl_divergence", p.h, p.w, q.h, q.w);
    double acc = 0.0;
    for (std::int64_t i = 0; i < p.size(); ++i) {
        const double pi = p.v[std::size_t(i)], qi = q.v[std::size_t(i)];
        if (pi <= 0.0) continue;
        acc += pi * std::log2(eps + pi / (eps + qi));
    }
    return acc;
}

inline double js_divergence(const Plane<double>& p, const Plane<double>& q,
                            double eps = 1e-12) {
    metric_detail::check_same_dims("js_divergence", p.h, p.w, q.h, q.w);
    Plane<double> m(p.h, p.w);
    for (std::int64_t i = 0; i < p.size(); ++i)
        m.v[std::size_t(i)] = 0.5 * (p.v[std::size_t(i)] + q.v[std::size_t(i)]);
    return 0.5 * kl_divergence(p, m, eps) + 0.5 * kl_divergence(q, m, eps);
}

// Mean pairwise JS over one scene's subject density maps (renormalized to
// probability distributions first); all k*(k-1)/2 unordered pairs.
inline double mean_pairwise_js(const std::vector<Plane<double>>& fdms, double eps = 1e-12) {
    if (fdms.size() < 2) throw DataError("mean_pairwise_js: need at least two maps");
    std::vector<Plane<double>> dist;
    dist.reserve(fdms.size());
    for (const auto& f : fdms) dist.push_back(normalize_distribution(f));
    double acc = 0.0;
    std::int64_t pairs = 0;
    for (std::size_t a = 0; a < dist.size(); ++a)
        for (std::size_t b = a + 1; b < dist.size(); ++b) {
            acc += js_divergence(dist[a], dist[b], eps);
            ++pairs;
        }
    return acc / double(pairs);
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation
// ---------------------------------------------------------------------------

struct SampleEval {
    std::string id;
    double j = 0, s = 0, wf = 0, e = 0, f = 0;  // stored in [0,1]
    bool otsu_degenerate = false, wf_empty_gt = false, e_degenerate = false;
};

struct EvalReport {
    std::vector<SampleEval> samples;
    std::vector<std::string> missing;  // ids without a prediction, excluded from means
    double mean_j = 0, mean_s = 0, mean_wf = 0, mean_e = 0, mean_f = 0;
    std::map<std::string, double> js_per_image;
    std::optional<double> mean_js;
};

inline SampleEval evaluate_sample(const std::string& id, const Plane<double>& pred,
                                  const Plane<std::uint8_t>& gt) {
    Plane<double> p = pred;
    if (p.h != gt.h || p.w != gt.w) p = resize_bilinear(p, gt.h, gt.w);
    SampleEval ev;
    ev.id = id;
    OtsuResult ot = otsu_binarize(p);
    ev.otsu_degenerate = ot.degenerate;
    ev.j = jaccard(ot.mask, gt);
    ev.f = f_measure(ot.mask, gt);
    ev.e = e_measure(ot.mask, gt, &ev.e_degenerate);
    ev.s = s_measure(p, gt);
    ev.wf = weighted_f(p, gt, 1.0, &ev.wf_empty_gt);
    return ev;
}

// `load_pred` returns the probability map for a record or nullopt when it is
// missing; missing samples are listed and excluded from the means. Samples
// are scored on a worker pool (OLBP_THREADS caps it); slots keep the
// reduction order deterministic. Loaders must tolerate concurrent calls on
// distinct records.
inline EvalReport evaluate_dataset(
    const std::vector<SampleRecord>& records,
    const std::function<std::optional<Plane<double>>(const SampleRecord&)>& load_pred,
    const std::function<Plane<std::uint8_t>(const SampleRecord&)>& load_gt) {
    EvalReport rep;
    std::vector<std::optional<SampleEval>> slots(records.size());
    parallel_for(records.size(), [&](std::size_t i) {
        auto pred = load_pred(records[i]);
        if (pred) slots[i] = evaluate_sample(records[i].id, *pred, load_gt(records[i]));
    });
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (slots[i]) rep.samples.push_back(*slots[i]);
        else rep.missing.push_back(records[i].id);
    }
    if (!rep.samples.empty()) {
        for (const auto& ev : rep.samples) {
            rep.mean_j += ev.j;
            rep.mean_s += ev.s;
            rep.mean_wf += ev.wf;
            rep.mean_e += ev.e;
            rep.mean_f += ev.f;
        }
        const double n = double(rep.samples.size());
        rep.mean_j /= n;
        rep.mean_s /= n;
        rep.mean_wf /= n;
        rep.mean_e /= n;
        rep.mean_f /= n;
    }
    return rep;
}

inline double as_percent(double v) { return std::round(v * 1000.0) / 10.0; }

// Per-sample CSV, columns in the reporting order J, S, wF, E, F (percent).
inline void write_report_csv(const std::string& path, const EvalReport& rep) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);
    out << "id,J,S,wF,E,F\n";
    out.setf(std::ios::fixed);
    out.precision(1);
    for (const auto& ev : rep.samples)
        out << ev.id << "," << as_percent(ev.j) << "," << as_percent(ev.s) << ","
            << as_percent(ev.wf) << "," << as_percent(ev.e) << "," << as_percent(ev.f) << "\n";
}

inline nlohmann::json report_to_json(const EvalReport& rep) {
    nlohmann::json j{{"count", rep.samples.size()},
                     {"missing", rep.missing},
                     {"means",
                      {{"J", as_percent(rep.mean_j)},
                       {"S", as_percent(rep.mean_s)},
                       {"wF", as_percent(rep.mean_wf)},
                       {"E", as_percent(rep.mean_e)},
                       {"F", as_percent(rep.mean_f)}}}};
    if (rep.mean_js) {
        j["js"] = {{"mean", *rep.mean_js}};
        for (const auto& [img, v] : rep.js_per_image) j["js"]["per_image"][img] = v;
    }
    return j;
}

inline void write_report_json(const std::string& path, const EvalReport& rep) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);
    out << report_to_json(rep).dump(2) << "\n";
}

}  // namespace olbp
