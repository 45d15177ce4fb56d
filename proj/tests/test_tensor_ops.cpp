#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <random>
#include <set>
#include <vector>

#include "olbp/init.hpp"
#include "olbp/ops.hpp"

using namespace olbp;

namespace {

template <typename T>
Tensor4<T> rand_tensor(Shape4 s, std::uint64_t seed, T lo = T(-1), T hi = T(1)) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(lo, hi);
    Tensor4<T> t(s);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(uni(rng));
    return t;
}

template <typename T>
Tensor4<T> zero_bias(std::int64_t c) {
    return Tensor4<T>({1, c, 1, 1});
}

}  // namespace

TEST_CASE("tensor4 basics and invariants", "[tensor]") {
    Tensor4<float> t({2, 3, 4, 5});
    REQUIRE(t.numel() == 120);
    REQUIRE(t.shape().str() == "(2,3,4,5)");
    t.at(1, 2, 3, 4) = 7.0f;
    REQUIRE(t.data()[119] == 7.0f);

    REQUIRE_FALSE(t.has_grad());
    t.ensure_grad();
    REQUIRE(t.has_grad());

    Tensor4<float> alias = t;
    REQUIRE(alias.same_storage(t));
    Tensor4<float> deep = t.clone();
    REQUIRE_FALSE(deep.same_storage(t));
    deep.at(0, 0, 0, 0) = 42.0f;
    REQUIRE(t.at(0, 0, 0, 0) != 42.0f);

    REQUIRE_THROWS_AS(Tensor4<float>::from_vector({1, 1, 2, 2}, {1.f, 2.f, 3.f}), ShapeError);
}

TEST_CASE("conv2d all-ones 3x3 kernel", "[tensor]") {
    auto x = Tensor4<float>::full({1, 1, 3, 3}, 1.0f);
    auto w = Tensor4<float>::full({1, 1, 3, 3}, 1.0f);
    auto out = conv2d<float>(nullptr, x, w, zero_bias<float>(1), 1, 1, 1);
    REQUIRE(out.shape() == Shape4{1, 1, 3, 3});
    CHECK(out.at(0, 0, 1, 1) == Catch::Approx(9.0));
    CHECK(out.at(0, 0, 0, 0) == Catch::Approx(4.0));
    CHECK(out.at(0, 0, 2, 2) == Catch::Approx(4.0));
    CHECK(out.at(0, 0, 0, 1) == Catch::Approx(6.0));
}

TEST_CASE("conv2d dilated same-size geometry", "[tensor]") {
    // 3x3 kernel, dilation 3, padding 3 keeps a 288x288 map at 288x288
    auto x = rand_tensor<float>({1, 1, 288, 288}, 11);
    auto w = rand_tensor<float>({1, 1, 3, 3}, 12);
    auto out = conv2d<float>(nullptr, x, w, zero_bias<float>(1), 1, 3, 3);
    REQUIRE(out.shape() == Shape4{1, 1, 288, 288});

    // stride-1 size preservation for padding = dilation * (k-1) / 2, all
    // dilation rates used by the object-localization blocks
    for (int d : {1, 2, 3, 4, 5, 7}) {
        auto y = conv2d<float>(nullptr, rand_tensor<float>({1, 1, 32, 32}, d), w,
                               zero_bias<float>(1), 1, d, d);
        REQUIRE(y.shape().h == 32);
        REQUIRE(y.shape().w == 32);
    }
}

TEST_CASE("conv2d vs direct-summation oracle", "[tensor]") {
    auto x = rand_tensor<double>({2, 3, 7, 9}, 21);
    auto w = rand_tensor<double>({4, 3, 3, 3}, 22);
    auto b = rand_tensor<double>({1, 4, 1, 1}, 23);
    const int stride = 2, pad = 1, dil = 2;
    auto out = conv2d<double>(nullptr, x, w, b, stride, pad, dil);
    const auto os = out.shape();
    REQUIRE(os == Shape4{2, 4, conv_out_size(7, 3, stride, pad, dil),
                         conv_out_size(9, 3, stride, pad, dil)});
    for (std::int64_t n = 0; n < os.n; ++n)
        for (std::int64_t co = 0; co < os.c; ++co)
            for (std::int64_t i = 0; i < os.h; ++i)
                for (std::int64_t j = 0; j < os.w; ++j) {
                    double acc = b.at(0, co, 0, 0);
                    for (std::int64_t ci = 0; ci < 3; ++ci)
                        for (int r = 0; r < 3; ++r)
                            for (int s = 0; s < 3; ++s) {
                                const std::int64_t ih = i * stride - pad + r * dil;
                                const std::int64_t iw = j * stride - pad + s * dil;
                                if (ih >= 0 && ih < 7 && iw >= 0 && iw < 9)
                                    acc += x.at(n, ci, ih, iw) * w.at(co, ci, r, s);
                            }
                    REQUIRE(out.at(n, co, i, j) == Catch::Approx(acc).margin(1e-12));
                }
}

TEST_CASE("conv2d shape errors name the axis", "[tensor]") {
    auto x = Tensor4<float>::full({1, 3, 8, 8}, 1.0f);
    auto w = Tensor4<float>::full({4, 2, 3, 3}, 1.0f);
    REQUIRE_THROWS_MATCHES(conv2d<float>(nullptr, x, w, zero_bias<float>(4)), ShapeError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("channel axis")));
    auto w2 = Tensor4<float>::full({4, 3, 3, 3}, 1.0f);
    REQUIRE_THROWS_AS(conv2d<float>(nullptr, x, w2, zero_bias<float>(3)), ShapeError);
}

TEST_CASE("deconv2d doubles spatial size", "[tensor]") {
    auto x = rand_tensor<float>({1, 4, 18, 18}, 31);
    auto w = rand_tensor<float>({4, 6, 4, 4}, 32);
    auto out = deconv2d<float>(nullptr, x, w, zero_bias<float>(6), 2, 1, true);
    REQUIRE(out.shape() == Shape4{1, 6, 36, 36});

    auto zero = Tensor4<float>::zeros({1, 4, 10, 10});
    auto z = deconv2d<float>(nullptr, zero, w, zero_bias<float>(6), 2, 1, true);
    for (std::int64_t i = 0; i < z.numel(); ++i) REQUIRE(z.data()[i] == 0.0f);

    // non-doubling geometry rejected when exactness is demanded
    auto w3 = rand_tensor<float>({4, 6, 3, 3}, 33);
    REQUIRE_THROWS_AS(deconv2d<float>(nullptr, x, w3, zero_bias<float>(6), 2, 1, true),
                      ShapeError);
}

TEST_CASE("deconv2d vs direct-summation oracle", "[tensor]") {
    auto x = rand_tensor<double>({1, 3, 5, 6}, 41);
    auto w = rand_tensor<double>({3, 2, 4, 4}, 42);
    auto b = rand_tensor<double>({1, 2, 1, 1}, 43);
    auto out = deconv2d<double>(nullptr, x, w, b, 2, 1, true);
    REQUIRE(out.shape() == Shape4{1, 2, 10, 12});
    for (std::int64_t co = 0; co < 2; ++co)
        for (std::int64_t oh = 0; oh < 10; ++oh)
            for (std::int64_t ow = 0; ow < 12; ++ow) {
                double acc = b.at(0, co, 0, 0);
                for (std::int64_t ci = 0; ci < 3; ++ci)
                    for (std::int64_t ih = 0; ih < 5; ++ih)
                        for (std::int64_t iw = 0; iw < 6; ++iw)
                            for (int r = 0; r < 4; ++r)
                                for (int s = 0; s < 4; ++s)
                                    if (ih * 2 + r - 1 == oh && iw * 2 + s - 1 == ow)
                                        acc += x.at(0, ci, ih, iw) * w.at(ci, co, r, s);
                REQUIRE(out.at(0, co, oh, ow) == Catch::Approx(acc).margin(1e-12));
            }
}

TEST_CASE("maxpool2d peak preservation and identity", "[tensor]") {
    Tensor4<float> x({1, 1, 4, 4});
    x.at(0, 0, 2, 1) = 1.0f;
    auto out = maxpool2d<float>(nullptr, x, 2, 2);
    REQUIRE(out.shape() == Shape4{1, 1, 2, 2});
    CHECK(out.at(0, 0, 1, 0) == 1.0f);
    CHECK(out.at(0, 0, 0, 0) == 0.0f);
    CHECK(out.at(0, 0, 0, 1) == 0.0f);
    CHECK(out.at(0, 0, 1, 1) == 0.0f);

    auto y = rand_tensor<float>({2, 3, 5, 5}, 51);
    auto id = maxpool2d<float>(nullptr, y, 1, 1);
    REQUIRE(std::memcmp(id.data(), y.data(), sizeof(float) * y.numel()) == 0);

    REQUIRE_THROWS_AS(maxpool2d<float>(nullptr, rand_tensor<float>({1, 1, 5, 5}, 52), 2, 2),
                      ShapeError);
}

TEST_CASE("maxpool2d equals brute-force window scan", "[tensor]") {
    auto x = rand_tensor<double>({1, 2, 8, 8}, 61);
    auto out = maxpool2d<double>(nullptr, x, 4, 4);
    REQUIRE(out.shape() == Shape4{1, 2, 2, 2});
    for (std::int64_t c = 0; c < 2; ++c)
        for (std::int64_t i = 0; i < 2; ++i)
            for (std::int64_t j = 0; j < 2; ++j) {
                double best = -1e30;
                for (int r = 0; r < 4; ++r)
                    for (int s = 0; s < 4; ++s)
                        best = std::max(best, x.at(0, c, i * 4 + r, j * 4 + s));
                REQUIRE(out.at(0, c, i, j) == best);
            }
}

TEST_CASE("eltwise_mul identities", "[tensor]") {
    auto a = rand_tensor<float>({1, 2, 3, 3}, 71);
    auto ones = Tensor4<float>::full(a.shape(), 1.0f);
    auto same = eltwise_mul<float>(nullptr, a, ones);
    REQUIRE(std::memcmp(same.data(), a.data(), sizeof(float) * a.numel()) == 0);

    auto zeros = Tensor4<float>::zeros(a.shape());
    auto z = eltwise_mul<float>(nullptr, a, zeros);
    for (std::int64_t i = 0; i < z.numel(); ++i) REQUIRE(z.data()[i] == 0.0f);

    REQUIRE_THROWS_AS(eltwise_mul<float>(nullptr, a, rand_tensor<float>({1, 2, 3, 4}, 72)),
                      ShapeError);
}

TEST_CASE("concat_channels stacks channel axis", "[tensor]") {
    std::vector<Tensor4<float>> four;
    for (int i = 0; i < 4; ++i) four.push_back(rand_tensor<float>({1, 32, 288, 288}, 80 + i));
    auto cat = concat_channels<float>(nullptr, four);
    REQUIRE(cat.shape() == Shape4{1, 128, 288, 288});
    REQUIRE(cat.at(0, 33, 100, 100) == four[1].at(0, 1, 100, 100));

    auto one = concat_channels<float>(nullptr, {four[0]});
    REQUIRE(std::memcmp(one.data(), four[0].data(), sizeof(float) * one.numel()) == 0);

    std::vector<Tensor4<float>> two = {rand_tensor<float>({1, 64, 288, 288}, 90),
                                       rand_tensor<float>({1, 64, 288, 288}, 91)};
    REQUIRE(concat_channels<float>(nullptr, two).shape() == Shape4{1, 128, 288, 288});

    REQUIRE_THROWS_AS(concat_channels<float>(
                          nullptr, {four[0], rand_tensor<float>({1, 32, 144, 288}, 92)}),
                      ShapeError);
}

TEST_CASE("sigmoid range and fixed points", "[tensor]") {
    Tensor4<double> x = Tensor4<double>::from_vector({1, 1, 1, 5},
                                                     {0.0, -50.0, 50.0, -1.0, 1.0});
    auto y = sigmoid<double>(nullptr, x);
    CHECK(y.data()[0] == Catch::Approx(0.5));
    CHECK(y.data()[1] < 1e-20);
    CHECK(y.data()[2] > 1.0 - 1e-15);
    CHECK(y.data()[3] < 0.5);
    CHECK(y.data()[4] > 0.5);
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        REQUIRE(y.data()[i] > 0.0);
        REQUIRE(y.data()[i] < 1.0);
    }
}

TEST_CASE("softmax_ce_loss closed forms and oracle", "[tensor]") {
    SECTION("uniform logits give ln 2") {
        auto logits = Tensor4<float>::full({1, 2, 4, 4}, 3.25f);
        Tensor4<float> target({1, 1, 4, 4});
        target.at(0, 0, 1, 2) = 1.0f;
        auto loss = softmax_ce_loss<float>(nullptr, logits, target);
        CHECK(loss.data()[0] == Catch::Approx(std::log(2.0)).epsilon(1e-6));
    }
    SECTION("saturated correct prediction is ~0") {
        Tensor4<float> logits({1, 2, 2, 2});
        Tensor4<float> target({1, 1, 2, 2});
        target.at(0, 0, 0, 0) = 1.0f;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                const bool fgpx = (i == 0 && j == 0);
                logits.at(0, fgpx ? 1 : 0, i, j) = 1000.0f;
            }
        auto loss = softmax_ce_loss<float>(nullptr, logits, target);
        CHECK(loss.data()[0] == Catch::Approx(0.0).margin(1e-6));
    }
    SECTION("matches naive per-pixel oracle") {
        auto logits = rand_tensor<double>({1, 2, 4, 4}, 101, -3.0, 3.0);
        Tensor4<double> target({1, 1, 4, 4});
        std::mt19937_64 rng(102);
        for (std::int64_t i = 0; i < 16; ++i) target.data()[i] = double(rng() % 2);
        auto loss = softmax_ce_loss<double>(nullptr, logits, target);
        double acc = 0.0;
        for (std::int64_t i = 0; i < 16; ++i) {
            const double a0 = logits.data()[i], a1 = logits.data()[16 + i];
            const double p0 = std::exp(a0) / (std::exp(a0) + std::exp(a1));
            const double p1 = 1.0 - p0;
            acc += -std::log(target.data()[i] == 1.0 ? p1 : p0);
        }
        CHECK(loss.data()[0] == Catch::Approx(acc / 16.0).margin(1e-10));
    }
    SECTION("non-binary target rejected") {
        auto logits = Tensor4<float>::full({1, 2, 2, 2}, 0.0f);
        auto target = Tensor4<float>::full({1, 1, 2, 2}, 0.5f);
        REQUIRE_THROWS_AS(softmax_ce_loss<float>(nullptr, logits, target), DataError);
    }
}

TEST_CASE("softmax_fg_prob is the two-class softmax", "[tensor]") {
    auto logits = rand_tensor<double>({2, 2, 3, 3}, 111, -4.0, 4.0);
    auto p = softmax_fg_prob<double>(nullptr, logits);
    REQUIRE(p.shape() == Shape4{2, 1, 3, 3});
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t i = 0; i < 3; ++i)
            for (std::int64_t j = 0; j < 3; ++j) {
                const double a0 = logits.at(n, 0, i, j), a1 = logits.at(n, 1, i, j);
                const double want = std::exp(a1) / (std::exp(a0) + std::exp(a1));
                REQUIRE(p.at(n, 0, i, j) == Catch::Approx(want).margin(1e-12));
            }
}

TEST_CASE("dropout modes and mask statistics", "[tensor]") {
    auto x = rand_tensor<float>({1, 1, 100, 100}, 121);
    auto inference = dropout<float>(nullptr, x, 0.5, false, 7);
    REQUIRE(inference.same_storage(x));

    auto ratio0 = dropout<float>(nullptr, x, 0.0, true, 7);
    REQUIRE(ratio0.same_storage(x));

    auto ones = Tensor4<float>::full({1, 1, 100, 100}, 1.0f);
    auto y = dropout<float>(nullptr, ones, 0.5, true, 7);
    std::int64_t zeroed = 0;
    double mean = 0.0;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        if (y.data()[i] == 0.0f) ++zeroed;
        else REQUIRE(y.data()[i] == Catch::Approx(2.0f));
        mean += y.data()[i];
    }
    mean /= double(y.numel());
    const double frac = double(zeroed) / double(y.numel());
    CHECK(frac > 0.48);
    CHECK(frac < 0.52);
    CHECK(mean == Catch::Approx(1.0).margin(0.05));

    auto y2 = dropout<float>(nullptr, ones, 0.5, true, 7);
    REQUIRE(std::memcmp(y.data(), y2.data(), sizeof(float) * y.numel()) == 0);

    REQUIRE_THROWS_AS(dropout<float>(nullptr, x, 1.0, true, 7), DataError);
}

TEST_CASE("resize_nearest identity, replication, binariness", "[tensor]") {
    auto x = rand_tensor<float>({1, 1, 6, 6}, 131);
    auto id = resize_nearest<float>(nullptr, x, 6, 6);
    REQUIRE(id.same_storage(x));

    Tensor4<float> cb = Tensor4<float>::from_vector({1, 1, 2, 2}, {1.f, 0.f, 0.f, 1.f});
    auto up = resize_nearest<float>(nullptr, cb, 4, 4);
    const std::vector<float> want = {1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1};
    for (int i = 0; i < 16; ++i) REQUIRE(up.data()[i] == want[size_t(i)]);

    std::mt19937_64 rng(132);
    for (int rep = 0; rep < 3; ++rep) {
        Tensor4<float> gt({1, 1, 288, 288});
        for (std::int64_t i = 0; i < gt.numel(); ++i) gt.data()[i] = float(rng() % 2);
        auto small = resize_nearest<float>(nullptr, gt, 18, 18);
        REQUIRE(small.shape() == Shape4{1, 1, 18, 18});
        for (std::int64_t i = 0; i < small.numel(); ++i)
            REQUIRE((small.data()[i] == 0.0f || small.data()[i] == 1.0f));
    }
}

TEST_CASE("xavier_init bound, determinism, mean", "[tensor]") {
    const Shape4 s{64, 64, 3, 3};
    const double bound = xavier_bound<float>(s);
    CHECK(bound == Catch::Approx(std::sqrt(6.0 / (576.0 + 576.0))).epsilon(1e-12));
    CHECK(bound == Catch::Approx(0.0722).margin(5e-4));

    auto p = xavier_init<float>(s, 9001);
    for (std::int64_t i = 0; i < p.numel(); ++i) {
        REQUIRE(p.data()[i] <= bound);
        REQUIRE(p.data()[i] >= -bound);
    }
    auto q = xavier_init<float>(s, 9001);
    REQUIRE(std::memcmp(p.data(), q.data(), sizeof(float) * p.numel()) == 0);

    const Shape4 big{64, 64, 5, 5};  // 102400 draws
    auto r = xavier_init<double>(big, 9002);
    double mean = 0.0;
    for (std::int64_t i = 0; i < r.numel(); ++i) mean += r.data()[i];
    mean /= double(r.numel());
    const double b = xavier_bound<double>(big);
    const double three_sigma = 3.0 * b / std::sqrt(3.0 * double(r.numel()));
    CHECK(std::fabs(mean) < three_sigma);

    REQUIRE_THROWS_AS(xavier_init<float>({0, 4, 3, 3}, 1), ShapeError);
}
