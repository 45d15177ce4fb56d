#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "olbp/common.hpp"

namespace olbp {

struct Shape4 {
    std::int64_t n = 0, c = 0, h = 0, w = 0;

    std::int64_t numel() const { return n * c * h * w; }
    bool operator==(const Shape4& o) const = default;

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

// Dense rank-4 array (batch, channel, height, width), row-major, with an
// optional same-shape gradient slot. Copies are cheap aliasing handles onto
// shared storage, which is what the autodiff tape relies on to accumulate
// gradients; use clone() for a deep copy.
template <typename T>
class Tensor4 {
    struct Storage {
        std::vector<T> data;
        std::vector<T> grad;  // empty until ensure_grad()
        bool requires_grad = false;
    };

public:
    Tensor4() = default;

    explicit Tensor4(Shape4 s, bool requires_grad = false) : shape_(s) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw ShapeError("Tensor4: negative dimension in " + s.str());
        st_ = std::make_shared<Storage>();
        st_->data.assign(static_cast<std::size_t>(s.numel()), T(0));
        st_->requires_grad = requires_grad;
    }

    static Tensor4 zeros(Shape4 s) { return Tensor4(s); }

    static Tensor4 full(Shape4 s, T value) {
        Tensor4 t(s);
        std::fill(t.data(), t.data() + t.numel(), value);
        return t;
    }

    static Tensor4 from_vector(Shape4 s, const std::vector<T>& v) {
        Tensor4 t(s);
        if (static_cast<std::int64_t>(v.size()) != s.numel())
            throw ShapeError("Tensor4::from_vector: value count " +
                             std::to_string(v.size()) + " does not match shape " + s.str());
        std::copy(v.begin(), v.end(), t.data());
        return t;
    }

    bool valid() const { return st_ != nullptr; }
    const Shape4& shape() const { return shape_; }
    std::int64_t numel() const { return shape_.numel(); }

    T* data() { return st_->data.data(); }
    const T* data() const { return st_->data.data(); }

    T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        return st_->data[index(n, c, h, w)];
    }
    T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return st_->data[index(n, c, h, w)];
    }

    bool requires_grad() const { return st_ && st_->requires_grad; }
    void set_requires_grad(bool v) { st_->requires_grad = v; }

    bool has_grad() const { return st_ && !st_->grad.empty(); }

    // Allocates the gradient slot (zero-filled) on first use.
    void ensure_grad() {
        if (st_->grad.empty()) st_->grad.assign(st_->data.size(), T(0));
    }
    T* grad() {
        ensure_grad();
        return st_->grad.data();
    }
    const T* grad() const { return st_->grad.data(); }

    void zero_grad() {
        if (!st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), T(0));
    }

    Tensor4 clone() const {
        Tensor4 t(shape_, requires_grad());
        std::copy(data(), data() + numel(), t.data());
        return t;
    }

    // Same storage identity (aliasing) test; used by the tape for sanity checks.
    bool same_storage(const Tensor4& o) const { return st_ == o.st_; }

    bool all_finite() const {
        for (const T& v : st_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    std::size_t index(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w);
    }

    Shape4 shape_{};
    std::shared_ptr<Storage> st_;
};

}  // namespace olbp
