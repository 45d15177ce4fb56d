#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "olbp/checkpoint.hpp"
#include "olbp/common.hpp"
#include "olbp/config.hpp"
#include "olbp/dataset.hpp"
#include "olbp/model.hpp"

namespace olbp {

struct TrainConfig {
    double lr = 8e-8;
    std::int64_t lr_drop_iter = 14000;
    double lr_drop_factor = 10.0;
    std::int64_t total_iters = 30000;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int batch_size = 1;
    int iter_size = 8;
    double dropout = 0.5;
    std::uint64_t rng_seed = 1;
    std::int64_t checkpoint_every = 1000;
    std::int64_t log_every = 1;

    // published training protocol
    static TrainConfig paper() { return TrainConfig{}; }

    // from-scratch desk-scale regime: the published 8e-8 belongs to a
    // pretrained backbone and stalls a freshly initialized toy network
    static TrainConfig toy() {
        TrainConfig c;
        c.lr = 1e-2;
        c.lr_drop_iter = 1200;
        c.total_iters = 2000;
        c.iter_size = 1;
        c.checkpoint_every = 500;
        return c;
    }

    void validate() const {
        if (lr <= 0 || lr_drop_factor <= 0 || momentum < 0 || weight_decay < 0)
            throw DataError("train config: rates must be positive");
        if (iter_size < 1 || batch_size < 1) throw DataError("train config: iter_size >= 1");
        if (dropout < 0 || dropout >= 1) throw DataError("train config: dropout in [0,1)");
        if (total_iters < 1) throw DataError("train config: total_iters >= 1");
    }

    std::string to_text() const {
        std::ostringstream out;
        out << "train_lr = " << lr << "\n";
        out << "train_lr_drop_iter = " << lr_drop_iter << "\n";
        out << "train_lr_drop_factor = " << lr_drop_factor << "\n";
        out << "train_total_iters = " << total_iters << "\n";
        out << "train_momentum = " << momentum << "\n";
        out << "train_weight_decay = " << weight_decay << "\n";
        out << "train_batch_size = " << batch_size << "\n";
        out << "train_iter_size = " << iter_size << "\n";
        out << "train_dropout = " << dropout << "\n";
        out << "train_rng_seed = " << rng_seed << "\n";
        out << "train_checkpoint_every = " << checkpoint_every << "\n";
        out << "train_log_every = " << log_every << "\n";
        return out.str();
    }

    static TrainConfig from_key_values(const std::map<std::string, std::string>& kv) {
        return from_key_values(kv, TrainConfig{});
    }

    static TrainConfig from_key_values(const std::map<std::string, std::string>& kv,
                                       TrainConfig base) {
        TrainConfig c = base;
        for (const auto& [key, value] : kv) {
            if (key.rfind("train_", 0) != 0) continue;
            const std::string k = key.substr(6);
            if (k == "lr") c.lr = std::stod(value);
            else if (k == "lr_drop_iter") c.lr_drop_iter = std::stoll(value);
            else if (k == "lr_drop_factor") c.lr_drop_factor = std::stod(value);
            else if (k == "total_iters") c.total_iters = std::stoll(value);
            else if (k == "momentum") c.momentum = std::stod(value);
            else if (k == "weight_decay") c.weight_decay = std::stod(value);
            else if (k == "batch_size") c.batch_size = std::stoi(value);
            else if (k == "iter_size") c.iter_size = std::stoi(value);
            else if (k == "dropout") c.dropout = std::stod(value);
            else if (k == "rng_seed") c.rng_seed = std::stoull(value);
            else if (k == "checkpoint_every") c.checkpoint_every = std::stoll(value);
            else if (k == "log_every") c.log_every = std::stoll(value);
            else throw DataError("train config: unknown key " + key);
        }
        c.validate();
        return c;
    }
};

// Single-step learning-rate schedule: divided once after the drop iteration.
inline double lr_schedule(std::int64_t iter, const TrainConfig& cfg) {
    if (iter < 0 || iter >= cfg.total_iters)
        throw DataError("lr_schedule: iteration " + std::to_string(iter) + " outside [0," +
                        std::to_string(cfg.total_iters) + ")");
    return iter < cfg.lr_drop_iter ? cfg.lr : cfg.lr / cfg.lr_drop_factor;
}

template <typename T>
struct SgdState {
    std::map<std::string, Tensor4<T>> velocity;
};

// Classic momentum with the weight-decay term added to the gradient inside
// the velocity update:
//   v <- momentum * v + (grad + weight_decay * param)
//   param <- param - lr * v
template <typename T>
void sgd_step(std::vector<Parameter<T>>& params, SgdState<T>& state, double lr,
              double momentum, double weight_decay) {
    for (auto& p : params) {
        if (!p.learnable) continue;
        auto [it, inserted] = state.velocity.try_emplace(p.name, p.tensor.shape());
        Tensor4<T>& v = it->second;
        if (!(v.shape() == p.tensor.shape()))
            throw DataError("sgd_step: velocity shape mismatch for " + p.name);
        const T* g = p.tensor.has_grad() ? p.tensor.grad() : nullptr;
        T* vd = v.data();
        T* pd = p.tensor.data();
        const std::int64_t n = p.tensor.numel();
        for (std::int64_t i = 0; i < n; ++i) {
            const T gi = g ? g[i] : T(0);
            if (!std::isfinite(double(gi)))
                throw NumericError("sgd_step: non-finite gradient in parameter " + p.name);
            vd[i] = T(momentum) * vd[i] + (gi + T(weight_decay) * pd[i]);
            pd[i] -= T(lr) * vd[i];
        }
    }
}

template <typename T>
struct TrainSample {
    Tensor4<T> image, fdm, gs, gb;
};

template <typename T>
using SampleLoader = std::function<TrainSample<T>(const SampleRecord&)>;

template <typename T>
struct TrainHooks {
    // called after every optimizer step with the iter-size-averaged terms
    std::function<void(std::int64_t iter, double lr,
                       const std::map<std::string, double>& terms, double total)>
        on_step;
};

namespace detail {

// epoch permutation as a pure function of (seed, epoch)
inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed,
                                                  std::int64_t epoch) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(seed, 0xe90c4ULL + std::uint64_t(epoch)));
    std::shuffle(perm.begin(), perm.end(), rng);
    return perm;
}

}  // namespace detail

// Runs optimizer steps `start_iter..total_iters`, each consuming iter_size
// samples at batch 1 with gradient accumulation (grads averaged before the
// step). Sample order is a seeded per-epoch shuffle; running past the end of
// an epoch wraps into the next shuffle, so steps are never partial. Appends
// one CSV row per step to `log`, if given, with every canonical term column
// (blank when inactive under ablation).
template <typename T>
void train_loop(Network<T>& net, const std::vector<SampleRecord>& train_records,
                const SampleLoader<T>& loader, const TrainConfig& cfg, SgdState<T>& state,
                std::int64_t start_iter, std::ostream* log,
                const std::function<void(std::int64_t, Network<T>&, SgdState<T>&)>& checkpoint_cb,
                const TrainHooks<T>& hooks = {}) {
    cfg.validate();
    if (train_records.empty()) throw DataError("train_loop: no training samples");
    auto& params = net.parameters();
    const std::size_t n = train_records.size();
    const auto canonical = canonical_loss_terms();

    if (log && start_iter == 0) {
        *log << "iteration,lr";
        for (const auto& name : canonical) *log << "," << name;
        *log << ",total\n";
    }

    std::int64_t epoch_cached = -1;
    std::vector<std::size_t> perm;
    for (std::int64_t iter = start_iter; iter < cfg.total_iters; ++iter) {
        const double lr = lr_schedule(iter, cfg);
        for (auto& p : params) p.tensor.zero_grad();

        std::map<std::string, double> terms;
        double total = 0.0;
        for (int k = 0; k < cfg.iter_size; ++k) {
            const std::int64_t s = iter * cfg.iter_size + k;
            const std::int64_t epoch = s / std::int64_t(n);
            if (epoch != epoch_cached) {
                perm = detail::epoch_permutation(n, cfg.rng_seed, epoch);
                epoch_cached = epoch;
            }
            const SampleRecord& rec = train_records[perm[std::size_t(s % std::int64_t(n))]];
            TrainSample<T> sample = loader(rec);
            Tape<T> tape;
            auto out = net.forward(&tape, sample.image, sample.fdm, true, cfg.dropout,
                                   mix_seed(cfg.rng_seed, 0xd809ULL + std::uint64_t(s)));
            auto lb = total_loss(&tape, out, sample.gs, sample.gb);
            tape.backward(lb.total);
            for (const auto& [name, v] : lb.terms) terms[name] += double(v);
            total += double(lb.total.data()[0]);
        }
        const double inv = 1.0 / double(cfg.iter_size);
        for (auto& p : params)
            if (p.tensor.has_grad()) {
                T* g = p.tensor.grad();
                for (std::int64_t i = 0; i < p.tensor.numel(); ++i) g[i] = T(double(g[i]) * inv);
            }
        for (auto& [name, v] : terms) v *= inv;
        total *= inv;

        sgd_step(params, state, lr, cfg.momentum, cfg.weight_decay);

        if (log && (iter % cfg.log_every == 0 || iter + 1 == cfg.total_iters)) {
            *log << iter << "," << lr;
            for (const auto& name : canonical) {
                *log << ",";
                if (auto it = terms.find(name); it != terms.end()) *log << it->second;
            }
            *log << "," << total << "\n";
        }
        if (hooks.on_step) hooks.on_step(iter, lr, terms, total);
        if (checkpoint_cb &&
            (((iter + 1) % cfg.checkpoint_every == 0) || iter + 1 == cfg.total_iters))
            checkpoint_cb(iter + 1, net, state);
    }
}

// ---------------------------------------------------------------------------
// Checkpoint glue
// ---------------------------------------------------------------------------

template <typename T>
CheckpointData make_checkpoint(const Network<T>& net, const SgdState<T>& state,
                               std::int64_t iteration, const TrainConfig& tcfg) {
    CheckpointData ckpt;
    for (const auto& p : net.parameters()) ckpt.entries.push_back(tensor_to_entry(p.name, p.tensor));
    for (const auto& [name, v] : state.velocity)
        ckpt.entries.push_back(tensor_to_entry("opt.momentum." + name, v));
    ckpt.meta["iteration"] = iteration;
    ckpt.meta["config_text"] = net.config().to_text();
    ckpt.meta["config_hash"] = net.config().hash();
    ckpt.meta["train_config_text"] = tcfg.to_text();
    ckpt.meta["rng"] = {{"seed", tcfg.rng_seed}, {"note", "all streams derive from seed+counters"}};
    return ckpt;
}

// Restores parameters (and momentum buffers, when present) into an existing
// network; returns the stored iteration.
template <typename T>
std::int64_t restore_checkpoint(const CheckpointData& ckpt, Network<T>& net,
                                SgdState<T>* state) {
    const std::uint64_t want = net.config().hash();
    if (ckpt.meta.contains("config_hash") &&
        ckpt.meta["config_hash"].get<std::uint64_t>() != want)
        throw DataError("checkpoint was produced by a different network configuration");
    for (auto& p : net.parameters()) {
        const CheckpointEntry* e = ckpt.find(p.name);
        if (!e) throw DataError("checkpoint is missing parameter " + p.name);
        entry_to_tensor(*e, p.tensor);
    }
    if (state) {
        state->velocity.clear();
        for (const auto& e : ckpt.entries) {
            if (e.name.rfind("opt.momentum.", 0) != 0) continue;
            Tensor4<T> v(e.shape);
            entry_to_tensor(e, v);
            state->velocity.emplace(e.name.substr(13), std::move(v));
        }
    }
    return ckpt.meta.value("iteration", std::int64_t(0));
}

// Decodes one manifest record into network-ready tensors: image resized
// bilinearly to the input resolution, density map computed at native
// resolution then resized and renormalized, ground truths nearest-resized.
template <typename T>
TrainSample<T> load_sample(const SampleRecord& rec, const std::string& root,
                           const OLBPConfig& cfg) {
    namespace fs = std::filesystem;
    auto resolve = [&](const std::string& rel) { return (fs::path(root) / rel).string(); };

    TrainSample<T> s;
    ImageRGB8 img = read_png_rgb8(resolve(rec.image_path));
    s.image = image_to_tensor<T>(img, cfg.input_h, cfg.input_w);

    FixationMap fm = load_fixation_map(resolve(rec.fixation_path), img.w, img.h);
    FixationDensityMap fdm = make_fdm(fm, rec.fdm_sigma);
    s.fdm = fdm_to_tensor<T>(resize_fdm(fdm, cfg.input_h, cfg.input_w));

    auto to_tensor = [&](const Plane<std::uint8_t>& m) {
        Tensor4<T> t({1, 1, m.h, m.w});
        for (std::int64_t i = 0; i < m.size(); ++i) t.data()[i] = T(m.v[std::size_t(i)]);
        return resize_nearest<T>(nullptr, t, cfg.input_h, cfg.input_w);
    };
    s.gs = to_tensor(read_mask_png(resolve(rec.binary_gt_path)));
    s.gb = to_tensor(read_mask_png(resolve(rec.boundary_gt_path)));
    return s;
}

}  // namespace olbp
