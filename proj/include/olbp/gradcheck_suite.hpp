#pragma once

#include <random>
#include <string>
#include <vector>

#include "olbp/gradcheck.hpp"
#include "olbp/model.hpp"
#include "olbp/morphology.hpp"
#include "olbp/ops.hpp"

namespace olbp {

struct OpCheckResult {
    std::string op;
    std::uint64_t seed;
    double max_rel_error;
};

namespace gradcheck_detail {

inline Tensor4<double> rand_t(Shape4 s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(lo, hi);
    Tensor4<double> t(s);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = uni(rng);
    return t;
}

inline Tensor4<double> rand_nonzero(Shape4 s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> mag(0.1, 1.0);
    Tensor4<double> t(s);
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = (rng() & 1 ? 1.0 : -1.0) * mag(rng);
    return t;
}

}  // namespace gradcheck_detail

// Finite-difference checks for every differentiable op, a few seeds each.
// Returns one record per (op, seed).
inline std::vector<OpCheckResult> op_gradcheck_suite(int seeds = 5, double step = 1e-5) {
    using gradcheck_detail::rand_nonzero;
    using gradcheck_detail::rand_t;
    std::vector<OpCheckResult> results;
    auto run = [&](const std::string& name, std::uint64_t seed, auto closure,
                   std::vector<Tensor4<double>> inputs) {
        results.push_back({name, seed, grad_check(closure, std::move(inputs), step, 1.0).max_rel_error});
    };

    for (std::uint64_t s = 1; s <= std::uint64_t(seeds); ++s) {
        run("conv2d", s,
            [](Tape<double>* t, std::vector<Tensor4<double>>& in) {
                return sum_all(t, sigmoid(t, conv2d(t, in[0], in[1], in[2], 1, 1, 1)));
            },
            {rand_t({2, 4, 8, 8}, s * 11 + 1), rand_t({3, 4, 3, 3}, s * 11 + 2),
             rand_t({1, 3, 1, 1}, s * 11 + 3)});
        run("conv2d_dilated", s,
            [](Tape<double>* t, std::vector<Tensor4<double>>& in) {
                return sum_all(t, sigmoid(t, conv2d(t, in[0], in[1], in[2], 1, 3, 3)));
            },
            {rand_t({1, 2, 9, 9}, s * 13 + 1), rand_t({2, 2, 3, 3}, s * 13 + 2),
             rand_t({1, 2, 1, 1}, s * 13 + 3)});
        run("deconv2d", s,
            [](Tape<double>* t, std::vector<Tensor4<double>>& in) {
                return sum_all(t, sigmoid(t, deconv2d(t, in[0], in[1], in[2], 2, 1, true)));
            },
            {rand_t({1, 3, 5, 5}, s * 17 + 1), rand_t({3, 2, 4, 4}, s * 17 + 2),
             rand_t({1, 2, 1, 1}, s * 17 + 3)});
        run("maxpool2d", s,
            [](Tape<double>* t, std::vector<Tensor4<double>>& in) {
                return sum_all(t, sigmoid(t, maxpool2d(t, in[0], 2, 2)));
            },
            {rand_t({1, 2, 8, 8}, s * 19 + 1)});
        run("eltwise_mul", s,
            [](Tape<double>* t, std::vector<Tensor4<double>>& in) {
                return sum_all(t, sigmoid(t, eltwise_mul(t, in[0], in[1])));
            },
            {rand_t({1, 3, 4, 4}, s * 23 + 1), rand_t({1, 3, 4, 4}, s * 23 + 2)});
        run("add", s,
            [](Tape<double>* t, std::vector<Tensor4<double>>& in) {
                return sum_all(t, sigmoid(t, add(t, in[0], in[1])));
            },
            {rand_t({1, 3, 4, 4}, s * 29 + 1), rand_t({1, 3, 4, 4}, s * 29 + 2)});
        {
            auto mix = rand_t({1, 5, 3, 3}, s * 31 + 3);
            run("concat_channels", s,
                [mix](Tape<double>* t, std::vector<Tensor4<double>>& in) {
                    return sum_all(t, eltwise_mul(t, concat_channels(t, {in[0], in[1]}), mix));
                },
                {rand_t({1, 2, 3, 3}, s * 31 + 1), rand_t({1, 3, 3, 3}, s * 31 + 2)});
        }
        run("sigmoid", s,
            [](Tape<double>* t, std::vector<Tensor4<double>>& in) {
                return sum_all(t, sigmoid(t, in[0]));
            },
            {rand_t({1, 2, 5, 5}, s * 37 + 1, -4.0, 4.0)});
        run("relu", s,
            [](Tape<double>* t, std::vector<Tensor4<double>>& in) {
                return sum_all(t, sigmoid(t, relu(t, in[0])));
            },
            {rand_nonzero({1, 2, 5, 5}, s * 41 + 1)});
        {
            auto mix = rand_t({1, 1, 4, 4}, s * 43 + 2);
            run("softmax_fg_prob", s,
                [mix](Tape<double>* t, std::vector<Tensor4<double>>& in) {
                    return sum_all(t, eltwise_mul(t, softmax_fg_prob(t, in[0]), mix));
                },
                {rand_t({1, 2, 4, 4}, s * 43 + 1, -3.0, 3.0)});
        }
        {
            Tensor4<double> target({1, 1, 4, 4});
            std::mt19937_64 rng(s * 47 + 2);
            for (std::int64_t i = 0; i < 16; ++i) target.data()[i] = double(rng() % 2);
            run("softmax_ce_loss", s,
                [target](Tape<double>* t, std::vector<Tensor4<double>>& in) {
                    return softmax_ce_loss(t, in[0], target);
                },
                {rand_t({1, 2, 4, 4}, s * 47 + 1, -2.0, 2.0)});
        }
        run("dropout", s,
            [s](Tape<double>* t, std::vector<Tensor4<double>>& in) {
                return sum_all(t, sigmoid(t, dropout(t, in[0], 0.5, true, s)));
            },
            {rand_t({1, 2, 5, 5}, s * 53 + 1)});
        {
            auto mix = rand_t({1, 1, 6, 6}, s * 59 + 2);
            run("resize_nearest", s,
                [mix](Tape<double>* t, std::vector<Tensor4<double>>& in) {
                    return sum_all(t, eltwise_mul(t, resize_nearest(t, in[0], 6, 6), mix));
                },
                {rand_t({1, 1, 3, 3}, s * 59 + 1)});
        }
        run("sum_all", s,
            [](Tape<double>* t, std::vector<Tensor4<double>>& in) { return sum_all(t, in[0]); },
            {rand_t({1, 2, 4, 4}, s * 61 + 1)});
    }
    return results;
}

struct NetworkCheckResult {
    std::string parameter;
    std::int64_t element;
    double analytic;
    double numeric;
    double rel_error;
};

// Whole-network check at the smallest admissible geometry (16x16 input,
// channels {2,2,4,4,4}): analytic vs central finite-difference gradient of
// the total loss for `samples` randomly chosen parameter elements.
//
// The check runs at a generic parameter point: biases are jittered off their
// zero initialization first. At exactly zero bias, narrow layers can emit
// exact zeros and park every rectifier on its kink, where the one-sided slope
// that central differences measure legitimately differs from the subgradient
// the tape reports.
inline std::vector<NetworkCheckResult> network_gradcheck(int samples = 50, double step = 1e-5,
                                                         std::uint64_t seed = 1) {
    using gradcheck_detail::rand_t;
    auto cfg = micro_config();
    cfg.rng_seed = seed;
    Network<double> net(cfg);
    {
        std::mt19937_64 brng(mix_seed(seed, 4));
        std::uniform_real_distribution<double> jitter(-0.05, 0.05);
        for (auto& p : net.parameters())
            if (p.name.ends_with(".b"))
                for (std::int64_t i = 0; i < p.tensor.numel(); ++i)
                    p.tensor.data()[i] = jitter(brng);
    }

    auto img = rand_t({1, 3, 16, 16}, mix_seed(seed, 1), 0.0, 1.0);
    auto fdm = rand_t({1, 1, 16, 16}, mix_seed(seed, 2), 0.0, 1.0);
    Plane<std::uint8_t> gs_mask(16, 16);
    for (std::int64_t i = 4; i < 10; ++i)
        for (std::int64_t j = 3; j < 12; ++j) gs_mask.at(i, j) = 1;
    auto gb_mask = make_boundary_gt(gs_mask, 2);
    Tensor4<double> gs({1, 1, 16, 16}), gb({1, 1, 16, 16});
    for (std::int64_t i = 0; i < 256; ++i) {
        gs.data()[i] = double(gs_mask.v[std::size_t(i)]);
        gb.data()[i] = double(gb_mask.mask.v[std::size_t(i)]);
    }

    auto loss_value = [&]() {
        auto out = net.forward(nullptr, img, fdm, false, 0.0, 0);
        return double(total_loss<double>(nullptr, out, gs, gb).total.data()[0]);
    };

    Tape<double> tape;
    auto out = net.forward(&tape, img, fdm, false, 0.0, 0);
    auto lb = total_loss(&tape, out, gs, gb);
    tape.backward(lb.total);

    std::mt19937_64 rng(mix_seed(seed, 3));
    std::vector<NetworkCheckResult> results;
    for (int k = 0; k < samples; ++k) {
        auto& p = net.parameters()[rng() % net.parameters().size()];
        const std::int64_t at = std::int64_t(rng() % std::uint64_t(p.tensor.numel()));
        const double analytic = p.tensor.grad()[at];
        const double orig = p.tensor.data()[at];
        p.tensor.data()[at] = orig + step;
        const double fp = loss_value();
        p.tensor.data()[at] = orig - step;
        const double fm = loss_value();
        p.tensor.data()[at] = orig;
        const double numeric = (fp - fm) / (2.0 * step);
        const double err = std::fabs(analytic - numeric) /
                           std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
        results.push_back({p.name, at, analytic, numeric, err});
    }
    return results;
}

}  // namespace olbp
