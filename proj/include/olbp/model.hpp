#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "olbp/config.hpp"
#include "olbp/fixation.hpp"
#include "olbp/init.hpp"
#include "olbp/ops.hpp"
#include "olbp/tape.hpp"
#include "olbp/tensor.hpp"

namespace olbp {

// All supervised maps of one forward pass: the multi-task heads at full
// resolution, the per-level localization side outputs and the decoder
// side/boundary outputs (levels 2..5 stored at index level-2).
template <typename T>
struct NetworkOutputs {
    Tensor4<T> seg_final;
    Tensor4<T> boundary_final;
    std::vector<Tensor4<T>> olm_side;
    std::vector<Tensor4<T>> bpm_side_seg;
    std::vector<Tensor4<T>> bpm_side_boundary;
    // retained for inspection and shape auditing
    std::vector<Tensor4<T>> rloc;              // localization response maps
    std::vector<Tensor4<T>> encoder_features;  // F_r per level
    std::vector<Tensor4<T>> olm_features;      // localization block outputs per level

    int supervised_map_count() const {
        return 2 + int(olm_side.size()) + int(bpm_side_seg.size()) +
               int(bpm_side_boundary.size());
    }
};

// Encoder / localization / boundary-preserving decoder network.
template <typename T>
class Network {
    struct Conv {
        Tensor4<T> w, b;
        int pad = 0, dil = 1;
    };
    struct Deconv {
        Tensor4<T> w, b;
    };
    struct Olm {
        std::vector<Conv> dilated;  // four parallel branches, or one when no_dilated
        Conv fuse1, fuse2, rloc, seg;
        bool has_seg = false;
    };
    struct Bpm {
        Conv bound, seg;
    };

public:
    explicit Network(const OLBPConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        build();
    }

    const OLBPConfig& config() const { return cfg_; }

    std::vector<Parameter<T>>& parameters() { return params_; }
    const std::vector<Parameter<T>>& parameters() const { return params_; }

    Tensor4<T>* find_parameter(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return &p.tensor;
        return nullptr;
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& p : params_) n += p.tensor.numel();
        return n;
    }

    // image (1 or n, input_c, H, W); fdm (same n, 1, H, W). Dropout runs only
    // in training; its masks derive from dropout_seed per level.
    NetworkOutputs<T> forward(Tape<T>* tape, const Tensor4<T>& image, const Tensor4<T>& fdm,
                              bool training, double dropout_ratio,
                              std::uint64_t dropout_seed) const {
        const Shape4 is = image.shape();
        if (is.c != cfg_.input_c || is.h != cfg_.input_h || is.w != cfg_.input_w)
            throw ShapeError("forward: image " + is.str() + " does not match configured " +
                             std::to_string(cfg_.input_c) + "x" + std::to_string(cfg_.input_h) +
                             "x" + std::to_string(cfg_.input_w));
        if (fdm.shape() != Shape4{is.n, 1, is.h, is.w})
            throw ShapeError("forward: fdm " + fdm.shape().str() + " must be (n,1,H,W)");

        // density-map pyramid
        std::array<Tensor4<T>, 5> fdm_lvl;
        for (int i = 0; i < 5; ++i) fdm_lvl[std::size_t(i)] = downsample_fdm(fdm, i + 1);

        // encoder
        Tensor4<T> x = cfg_.fdm_input_mode == FdmInputMode::concat_at_input
                           ? concat_channels(tape, {image, fdm})
                           : image;
        std::array<Tensor4<T>, 5> f_r;
        for (int i = 0; i < 5; ++i) {
            if (i > 0) x = maxpool2d(tape, x, 2, 2);
            for (const auto& conv : enc_[std::size_t(i)])
                x = relu(tape, apply(tape, conv, x));
            f_r[std::size_t(i)] = x;
        }

        NetworkOutputs<T> out;
        out.encoder_features.assign(f_r.begin(), f_r.end());

        // per-level skip features
        std::array<Tensor4<T>, 5> skip;
        if (cfg_.use_olm) {
            for (int i = 0; i < 5; ++i) {
                auto [f_olm, s_olm, r] =
                    olm_forward(tape, i + 1, f_r[std::size_t(i)], fdm_lvl[std::size_t(i)]);
                skip[std::size_t(i)] = f_olm;
                out.rloc.push_back(r);
                out.olm_features.push_back(f_olm);
                if (s_olm.valid()) out.olm_side.push_back(s_olm);
            }
        } else if (cfg_.fdm_input_mode == FdmInputMode::per_scale_concat) {
            for (int i = 0; i < 5; ++i)
                skip[std::size_t(i)] =
                    concat_channels(tape, {f_r[std::size_t(i)], fdm_lvl[std::size_t(i)]});
        } else {
            skip = f_r;
        }

        // top-down prediction with boundary preservation
        Tensor4<T> p = pred_block(tape, 5, skip[4]);
        if (cfg_.use_bpm) {
            out.bpm_side_seg.resize(4);
            out.bpm_side_boundary.resize(4);
        }
        for (int level = 5; level >= 2; --level) {
            p = dropout(tape, p, dropout_ratio, training, mix_seed(dropout_seed, level));
            const auto& dc = dec_[std::size_t(level - 2)];
            Tensor4<T> f_p = deconv2d(tape, p, dc.w, dc.b, 2, 1, true);
            Tensor4<T> carry = f_p;
            if (cfg_.use_bpm) {
                const auto& bpm = bpm_[std::size_t(level - 2)];
                Tensor4<T> b_logits = apply(tape, bpm.bound, f_p);
                Tensor4<T> fg = softmax_fg_prob(tape, b_logits);
                carry = concat_channels(tape, {f_p, fg});
                out.bpm_side_boundary[std::size_t(level - 2)] = b_logits;
                out.bpm_side_seg[std::size_t(level - 2)] = apply(tape, bpm.seg, carry);
            }
            Tensor4<T> fused = concat_channels(tape, {carry, skip[std::size_t(level - 2)]});
            p = pred_block(tape, level - 1, fused);
        }
        out.seg_final = apply(tape, head_seg_, p);
        out.boundary_final = apply(tape, head_bound_, p);
        return out;
    }

    NetworkOutputs<T> infer(const Tensor4<T>& image, const Tensor4<T>& fdm) const {
        return forward(nullptr, image, fdm, false, 0.0, 0);
    }

    // (f_olm, s_olm or invalid, r_loc) for encoder feature f_r at `level`
    std::tuple<Tensor4<T>, Tensor4<T>, Tensor4<T>> olm_forward(Tape<T>* tape, int level,
                                                               const Tensor4<T>& f_r,
                                                               const Tensor4<T>& f_fdm) const {
        if (!cfg_.use_olm) throw DataError("olm_forward: localization blocks disabled");
        const auto& olm = olms_[std::size_t(level - 1)];
        if (f_r.shape().c != cfg_.block_channels[std::size_t(level - 1)])
            throw ShapeError("olm_forward: channel axis of f_r " + f_r.shape().str() +
                             " does not match block channels at level " + std::to_string(level));

        Tensor4<T> f_mi;
        if (cfg_.olm_variant == OlmVariant::no_dilated) {
            f_mi = relu(tape, apply(tape, olm.dilated[0], f_fdm));
        } else {
            std::vector<Tensor4<T>> branches;
            for (const auto& conv : olm.dilated)
                branches.push_back(relu(tape, apply(tape, conv, f_fdm)));
            f_mi = concat_channels(tape, branches);
        }
        Tensor4<T> f_int = relu(tape, apply(tape, olm.fuse1, f_mi));
        f_int = relu(tape, apply(tape, olm.fuse2, f_int));
        Tensor4<T> r_loc = sigmoid(tape, apply(tape, olm.rloc, f_int));

        Tensor4<T> f_olm;
        switch (cfg_.olm_variant) {
            case OlmVariant::no_multiply:
                f_olm = concat_channels(tape, {f_r, r_loc});
                break;
            case OlmVariant::no_concat:
                f_olm = eltwise_mul(tape, f_r, r_loc);
                break;
            default:
                f_olm = concat_channels(tape, {f_r, eltwise_mul(tape, f_r, r_loc)});
                break;
        }
        Tensor4<T> s_olm;
        if (olm.has_seg) s_olm = apply(tape, olm.seg, f_olm);
        return {f_olm, s_olm, r_loc};
    }

    // channel count of the skip feature entering the decoder at each level
    std::int64_t skip_channels(int level) const {
        const std::int64_t c = cfg_.block_channels[std::size_t(level - 1)];
        if (cfg_.use_olm)
            return cfg_.olm_variant == OlmVariant::no_concat ? c : 2 * c;
        if (cfg_.fdm_input_mode == FdmInputMode::per_scale_concat) return c + 1;
        return c;
    }

private:
    Tensor4<T> apply(Tape<T>* tape, const Conv& conv, const Tensor4<T>& x) const {
        return conv2d(tape, x, conv.w, conv.b, 1, conv.pad, conv.dil);
    }

    Tensor4<T> pred_block(Tape<T>* tape, int level, const Tensor4<T>& x) const {
        Tensor4<T> h = x;
        for (const auto& conv : pb_[std::size_t(level - 1)]) h = relu(tape, apply(tape, conv, h));
        return h;
    }

    Conv make_conv(std::int64_t c_in, std::int64_t c_out, int k, int pad, int dil,
                   const std::string& name) {
        Conv conv;
        conv.pad = pad;
        conv.dil = dil;
        conv.w = xavier_init<T>({c_out, c_in, k, k}, mix_seed(cfg_.rng_seed, next_param_salt_++));
        conv.b = Tensor4<T>({1, c_out, 1, 1});
        register_param(name + ".w", conv.w);
        register_param(name + ".b", conv.b);
        return conv;
    }

    Deconv make_deconv(std::int64_t c_in, std::int64_t c_out, const std::string& name) {
        Deconv d;
        d.w = xavier_init<T>({c_in, c_out, 4, 4}, mix_seed(cfg_.rng_seed, next_param_salt_++));
        d.b = Tensor4<T>({1, c_out, 1, 1});
        register_param(name + ".w", d.w);
        register_param(name + ".b", d.b);
        return d;
    }

    void register_param(const std::string& name, Tensor4<T>& t) {
        for (const auto& p : params_)
            if (p.name == name) throw DataError("duplicate parameter name " + name);
        t.set_requires_grad(true);
        params_.push_back({t, name, true});
    }

    void build() {
        static constexpr std::array<int, 5> kConvsPerBlock{2, 2, 3, 3, 3};
        std::int64_t c_in =
            cfg_.input_c + (cfg_.fdm_input_mode == FdmInputMode::concat_at_input ? 1 : 0);
        for (int i = 0; i < 5; ++i) {
            const std::int64_t c_out = cfg_.block_channels[std::size_t(i)];
            for (int k = 0; k < kConvsPerBlock[std::size_t(i)]; ++k) {
                enc_[std::size_t(i)].push_back(
                    make_conv(k == 0 ? c_in : c_out, c_out, 3, 1, 1,
                              "enc.b" + std::to_string(i + 1) + ".conv" + std::to_string(k + 1)));
            }
            c_in = c_out;
        }

        if (cfg_.use_olm) {
            for (int i = 0; i < 5; ++i) {
                Olm& olm = olms_[std::size_t(i)];
                const std::string base = "olm" + std::to_string(i + 1);
                const std::int64_t dch = cfg_.olm_dilation_channels[std::size_t(i)];
                if (cfg_.olm_variant == OlmVariant::no_dilated) {
                    olm.dilated.push_back(make_conv(1, 4 * dch, 3, 1, 1, base + ".single"));
                } else {
                    for (int n = 0; n < 4; ++n) {
                        const int rate = cfg_.olm_dilation_rates[std::size_t(i)][std::size_t(n)];
                        olm.dilated.push_back(make_conv(1, dch, 3, rate, rate,
                                                        base + ".dil" + std::to_string(n + 1)));
                    }
                }
                const int k2 = cfg_.olm_conv2_kernel[std::size_t(i)];
                const std::int64_t ch2 = cfg_.olm_conv2_channels[std::size_t(i)];
                olm.fuse1 = make_conv(4 * dch, ch2, k2, (k2 - 1) / 2, 1, base + ".fuse1");
                olm.fuse2 = make_conv(ch2, ch2, k2, (k2 - 1) / 2, 1, base + ".fuse2");
                olm.rloc =
                    make_conv(ch2, cfg_.block_channels[std::size_t(i)], 3, 1, 1, base + ".rloc");
                olm.has_seg = cfg_.olm_variant != OlmVariant::no_seg_sup;
                if (olm.has_seg)
                    olm.seg = make_conv(skip_channels(i + 1), 2, 3, 1, 1, base + ".seg");
            }
        }

        for (int i = 0; i < 5; ++i) {
            const int level = i + 1;
            const std::int64_t c_out = cfg_.block_channels[std::size_t(i)];
            std::int64_t in;
            if (level == 5) {
                in = skip_channels(5);
            } else {
                // deconv output + optional boundary-probability channel + skip
                in = c_out + (cfg_.use_bpm ? 1 : 0) + skip_channels(level);
            }
            for (int k = 0; k < kConvsPerBlock[std::size_t(i)]; ++k) {
                pb_[std::size_t(i)].push_back(
                    make_conv(k == 0 ? in : c_out, c_out, 3, 1, 1,
                              "pb" + std::to_string(level) + ".conv" + std::to_string(k + 1)));
            }
        }

        for (int level = 2; level <= 5; ++level) {
            dec_[std::size_t(level - 2)] =
                make_deconv(cfg_.block_channels[std::size_t(level - 1)],
                            cfg_.block_channels[std::size_t(level - 2)],
                            "dec" + std::to_string(level));
            if (cfg_.use_bpm) {
                Bpm& bpm = bpm_[std::size_t(level - 2)];
                const std::int64_t cp = cfg_.block_channels[std::size_t(level - 2)];
                bpm.bound = make_conv(cp, 2, 3, 1, 1, "bpm" + std::to_string(level) + ".bound");
                bpm.seg = make_conv(cp + 1, 2, 3, 1, 1, "bpm" + std::to_string(level) + ".seg");
            }
        }

        head_seg_ = make_conv(cfg_.block_channels[0], 2, 3, 1, 1, "head.seg");
        head_bound_ = make_conv(cfg_.block_channels[0], 2, 3, 1, 1, "head.bound");
    }

    OLBPConfig cfg_;
    std::vector<Parameter<T>> params_;
    std::uint64_t next_param_salt_ = 0;
    std::array<std::vector<Conv>, 5> enc_;
    std::array<Olm, 5> olms_;
    std::array<std::vector<Conv>, 5> pb_;
    std::array<Deconv, 4> dec_;
    std::array<Bpm, 4> bpm_;
    Conv head_seg_, head_bound_;
};

// ---------------------------------------------------------------------------
// Supervision
// ---------------------------------------------------------------------------

// The canonical term order; inactive terms (under ablation) are simply absent
// from a LossBreakdown but keep their column in training logs.
inline std::vector<std::string> canonical_loss_terms() {
    std::vector<std::string> names{"seg_final", "bound_final"};
    for (int i = 1; i <= 5; ++i) names.push_back("olm_seg_" + std::to_string(i));
    for (int i = 2; i <= 5; ++i) names.push_back("bpm_seg_" + std::to_string(i));
    for (int i = 2; i <= 5; ++i) names.push_back("bpm_bound_" + std::to_string(i));
    return names;
}

template <typename T>
struct LossBreakdown {
    Tensor4<T> total;  // scalar
    std::vector<std::pair<std::string, T>> terms;
    int active_count() const { return static_cast<int>(terms.size()); }
};

// Sums one pixel-level softmax cross-entropy per supervised map, with the
// segmentation and boundary ground truths nearest-resized to each map's
// resolution. Terms are unweighted.
template <typename T>
LossBreakdown<T> total_loss(Tape<T>* tape, const NetworkOutputs<T>& out, const Tensor4<T>& gs,
                            const Tensor4<T>& gb) {
    LossBreakdown<T> lb;
    auto add_term = [&](const std::string& name, const Tensor4<T>& logits, const Tensor4<T>& gt) {
        Tensor4<T> target = resize_nearest<T>(nullptr, gt, logits.shape().h, logits.shape().w);
        Tensor4<T> term = softmax_ce_loss(tape, logits, target);
        lb.terms.emplace_back(name, term.data()[0]);
        lb.total = lb.total.valid() ? add(tape, lb.total, term) : term;
    };
    add_term("seg_final", out.seg_final, gs);
    add_term("bound_final", out.boundary_final, gb);
    for (std::size_t i = 0; i < out.olm_side.size(); ++i)
        add_term("olm_seg_" + std::to_string(i + 1), out.olm_side[i], gs);
    for (std::size_t i = 0; i < out.bpm_side_seg.size(); ++i)
        add_term("bpm_seg_" + std::to_string(i + 2), out.bpm_side_seg[i], gs);
    for (std::size_t i = 0; i < out.bpm_side_boundary.size(); ++i)
        add_term("bpm_bound_" + std::to_string(i + 2), out.bpm_side_boundary[i], gb);
    return lb;
}

// Smallest geometry the five-level pyramid admits (16x16 input); used for
// whole-network gradient checking.
inline OLBPConfig micro_config() {
    OLBPConfig c;
    c.scale_preset = "custom";
    c.input_h = c.input_w = 16;
    c.block_channels = {2, 2, 4, 4, 4};
    c.olm_dilation_channels = {1, 1, 2, 2, 2};
    c.olm_conv2_kernel = {3, 3, 3, 3, 3};
    c.olm_conv2_channels = {2, 2, 4, 4, 4};
    c.fdm_sigma = 1.0;
    return c;
}

}  // namespace olbp
