#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <random>

#include "olbp/gradcheck_suite.hpp"
#include "olbp/model.hpp"
#include "olbp/morphology.hpp"

using namespace olbp;

namespace {

template <typename T>
Tensor4<T> rand_image(Shape4 s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Tensor4<T> t(s);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = T(uni(rng));
    return t;
}

template <typename T>
Tensor4<T> rand_fdm(std::int64_t h, std::int64_t w, std::uint64_t seed) {
    auto t = rand_image<T>({1, 1, h, w}, seed);
    t.data()[0] = T(0);
    t.data()[1] = T(1);  // keep the [0,1] range endpoints present
    return t;
}

template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> rand_gts(std::int64_t h, std::int64_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Plane<std::uint8_t> gs(h, w);
    // a solid block plus noise so both classes exist
    for (std::int64_t i = h / 4; i < h / 2; ++i)
        for (std::int64_t j = w / 4; j < 3 * w / 4; ++j) gs.at(i, j) = 1;
    auto gb = make_boundary_gt(gs, 2);
    Tensor4<T> ts({1, 1, h, w}), tb({1, 1, h, w});
    for (std::int64_t i = 0; i < h * w; ++i) {
        ts.data()[i] = T(gs.v[std::size_t(i)]);
        tb.data()[i] = T(gb.mask.v[std::size_t(i)]);
    }
    return {ts, tb};
}

}  // namespace

TEST_CASE("toy network shape schedule", "[model]") {
    auto cfg = OLBPConfig::toy();
    Network<float> net(cfg);
    auto img = rand_image<float>({1, 3, 64, 64}, 1);
    auto fdm = rand_fdm<float>(64, 64, 2);
    auto out = net.infer(img, fdm);

    REQUIRE(out.seg_final.shape() == Shape4{1, 2, 64, 64});
    REQUIRE(out.boundary_final.shape() == Shape4{1, 2, 64, 64});
    REQUIRE(out.olm_side.size() == 5);
    REQUIRE(out.bpm_side_seg.size() == 4);
    REQUIRE(out.bpm_side_boundary.size() == 4);
    REQUIRE(out.supervised_map_count() == 15);

    for (int i = 0; i < 5; ++i) {
        const std::int64_t res = 64 >> i;
        REQUIRE(out.olm_side[std::size_t(i)].shape() == Shape4{1, 2, res, res});
        REQUIRE(out.rloc[std::size_t(i)].shape() ==
                Shape4{1, cfg.block_channels[std::size_t(i)], res, res});
    }
    // decoder side outputs live at the level-(i-1) resolution
    for (int level = 2; level <= 5; ++level) {
        const std::int64_t res = 64 >> (level - 2);
        REQUIRE(out.bpm_side_seg[std::size_t(level - 2)].shape() == Shape4{1, 2, res, res});
        REQUIRE(out.bpm_side_boundary[std::size_t(level - 2)].shape() == Shape4{1, 2, res, res});
    }
}

TEST_CASE("localization response maps live in (0,1) and depend on the fdm only", "[model]") {
    Network<float> net(OLBPConfig::toy());
    auto fdm = rand_fdm<float>(64, 64, 3);
    auto out1 = net.infer(rand_image<float>({1, 3, 64, 64}, 4), fdm);
    auto out2 = net.infer(rand_image<float>({1, 3, 64, 64}, 5), fdm);
    for (std::size_t lvl = 0; lvl < 5; ++lvl) {
        const auto& r1 = out1.rloc[lvl];
        const auto& r2 = out2.rloc[lvl];
        for (std::int64_t i = 0; i < r1.numel(); ++i) {
            REQUIRE(r1.data()[i] > 0.0f);
            REQUIRE(r1.data()[i] < 1.0f);
            REQUIRE(r1.data()[i] == r2.data()[i]);
        }
    }
}

TEST_CASE("inference is bit-deterministic (dropout inactive)", "[model]") {
    Network<float> net(OLBPConfig::toy());
    auto img = rand_image<float>({1, 3, 64, 64}, 7);
    auto fdm = rand_fdm<float>(64, 64, 8);
    auto a = net.infer(img, fdm);
    auto b = net.infer(img, fdm);
    REQUIRE(std::memcmp(a.seg_final.data(), b.seg_final.data(),
                        sizeof(float) * a.seg_final.numel()) == 0);
    REQUIRE(std::memcmp(a.boundary_final.data(), b.boundary_final.data(),
                        sizeof(float) * a.boundary_final.numel()) == 0);
}

TEST_CASE("same seed builds identical parameters", "[model]") {
    auto cfg = OLBPConfig::toy();
    Network<float> a(cfg), b(cfg);
    REQUIRE(a.parameters().size() == b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        REQUIRE(a.parameters()[i].name == b.parameters()[i].name);
        REQUIRE(std::memcmp(a.parameters()[i].tensor.data(), b.parameters()[i].tensor.data(),
                            sizeof(float) * a.parameters()[i].tensor.numel()) == 0);
    }
}

TEST_CASE("loss term counts per configuration", "[model]") {
    auto img = rand_image<float>({1, 3, 64, 64}, 11);
    auto fdm = rand_fdm<float>(64, 64, 12);
    auto [gs, gb] = rand_gts<float>(64, 64, 13);

    auto count_terms = [&](const OLBPConfig& cfg) {
        Network<float> net(cfg);
        auto out = net.infer(img.shape().c == cfg.input_c ? img : img, fdm);
        auto lb = total_loss<float>(nullptr, out, gs, gb);
        return lb.active_count();
    };

    CHECK(count_terms(OLBPConfig::toy()) == 15);
    CHECK(count_terms(apply_ablation(OLBPConfig::toy(), "no_bpm")) == 7);
    CHECK(count_terms(apply_ablation(OLBPConfig::toy(), "ba_star")) == 2);
    CHECK(count_terms(apply_ablation(OLBPConfig::toy(), "ba")) == 2);
    CHECK(count_terms(apply_ablation(OLBPConfig::toy(), "ba_bpm")) == 10);
    // removing the localization segmentation supervision drops its five terms
    CHECK(count_terms(apply_ablation(OLBPConfig::toy(), "no_seg_sup")) == 10);
}

TEST_CASE("uniform logits price each term at ln 2", "[model]") {
    // hand-built outputs with equal logits across both channels
    NetworkOutputs<double> out;
    auto uniform = [](std::int64_t res) { return Tensor4<double>::full({1, 2, res, res}, 1.7); };
    out.seg_final = uniform(16);
    out.boundary_final = uniform(16);
    for (int i = 0; i < 5; ++i) out.olm_side.push_back(uniform(16 >> i));
    for (int i = 2; i <= 5; ++i) {
        out.bpm_side_seg.push_back(uniform(16 >> (i - 2)));
        out.bpm_side_boundary.push_back(uniform(16 >> (i - 2)));
    }
    auto [gs, gb] = rand_gts<double>(16, 16, 21);
    auto lb = total_loss<double>(nullptr, out, gs, gb);
    REQUIRE(lb.active_count() == 15);
    CHECK(lb.total.data()[0] == Catch::Approx(15.0 * std::log(2.0)).margin(1e-9));
    for (const auto& [name, v] : lb.terms)
        CHECK(v == Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("ablation variants build and run", "[model]") {
    auto fdm = rand_fdm<float>(64, 64, 31);
    auto [gs, gb] = rand_gts<float>(64, 64, 32);
    for (const std::string name :
         {"full", "ba", "ba_star", "ba_olm", "ba_bpm", "ba_star_bpm", "no_dilated",
          "no_multiply", "no_concat", "no_seg_sup"}) {
        auto cfg = apply_ablation(OLBPConfig::toy(), name);
        Network<float> net(cfg);
        auto img = rand_image<float>({1, 3, 64, 64}, 33);
        auto out = net.infer(img, fdm);
        REQUIRE(out.seg_final.shape() == Shape4{1, 2, 64, 64});
        auto lb = total_loss<float>(nullptr, out, gs, gb);
        REQUIRE(std::isfinite(double(lb.total.data()[0])));
    }
    REQUIRE_THROWS_AS(apply_ablation(OLBPConfig::toy(), "bogus"), DataError);
}

TEST_CASE("toy forward+backward leaves a finite gradient on every parameter", "[model]") {
    Network<float> net(OLBPConfig::toy());
    auto img = rand_image<float>({1, 3, 64, 64}, 41);
    auto fdm = rand_fdm<float>(64, 64, 42);
    auto [gs, gb] = rand_gts<float>(64, 64, 43);

    Tape<float> tape;
    auto out = net.forward(&tape, img, fdm, true, 0.5, 99);
    auto lb = total_loss(&tape, out, gs, gb);
    tape.backward(lb.total);

    for (auto& p : net.parameters()) {
        REQUIRE(p.tensor.has_grad());
        bool any_nonzero = false;
        for (std::int64_t i = 0; i < p.tensor.numel(); ++i) {
            REQUIRE(std::isfinite(double(p.tensor.grad()[i])));
            any_nonzero = any_nonzero || p.tensor.grad()[i] != 0.0f;
        }
        INFO(p.name);
        CHECK(any_nonzero);
    }
}

TEST_CASE("micro-network gradient check on sampled parameters", "[model]") {
    for (std::uint64_t seed : {1, 2}) {
        auto results = network_gradcheck(20, 1e-5, seed);
        REQUIRE(results.size() == 20);
        for (const auto& r : results) {
            INFO(r.parameter << "[" << r.element << "] analytic " << r.analytic << " numeric "
                             << r.numeric);
            CHECK(r.rel_error < 1e-3);
        }
    }
}

TEST_CASE("config text round trip and hash", "[model]") {
    auto cfg = OLBPConfig::paper();
    cfg.olm_variant = OlmVariant::no_multiply;
    auto text = cfg.to_text();
    auto back = OLBPConfig::parse_text(text);
    REQUIRE(back.to_text() == text);
    REQUIRE(back.hash() == cfg.hash());

    auto toy = OLBPConfig::toy();
    REQUIRE(toy.hash() != cfg.hash());

    REQUIRE_THROWS_AS(OLBPConfig::parse_text("nonsense_key = 3\n"), DataError);
    REQUIRE_THROWS_AS(OLBPConfig::parse_text("input = 20x20x3\n"), DataError);
}

TEST_CASE("paper preset mirrors the published geometry", "[model]") {
    auto cfg = OLBPConfig::paper();
    REQUIRE(cfg.input_h == 288);
    REQUIRE(cfg.block_channels == std::array<std::int64_t, 5>{64, 128, 256, 512, 512});
    REQUIRE(cfg.olm_dilation_rates[0] == std::array<int, 4>{1, 3, 5, 7});
    REQUIRE(cfg.olm_dilation_rates[4] == std::array<int, 4>{1, 2, 3, 4});
    REQUIRE(cfg.olm_dilation_channels == std::array<std::int64_t, 5>{32, 64, 128, 256, 256});
    REQUIRE(cfg.olm_conv2_kernel == std::array<int, 5>{7, 5, 5, 3, 3});
    REQUIRE(cfg.olm_conv2_channels == std::array<std::int64_t, 5>{128, 256, 512, 1024, 1024});
}
