#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "olbp/common.hpp"
#include "olbp/tensor.hpp"

namespace olbp {

// Records the backward rule of every differentiable op in execution order.
// backward() replays the rules in reverse, so each consumer of a tensor runs
// before its producer and gradients of shared inputs accumulate by summation.
// One tape owns one forward/backward pass; it is not thread-safe.
template <typename T>
class Tape {
public:
    void record(std::function<void()> backward_rule) {
        rules_.push_back(std::move(backward_rule));
    }

    std::size_t size() const { return rules_.size(); }

    // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be a scalar
    // (1x1x1x1) tensor produced under this tape.
    void backward(Tensor4<T>& loss) {
        if (loss.numel() != 1)
            throw ShapeError("Tape::backward: loss must be scalar, got " + loss.shape().str());
        loss.ensure_grad();
        loss.grad()[0] += T(1);
        for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
    }

    void clear() { rules_.clear(); }

private:
    std::vector<std::function<void()>> rules_;
};

// True when any argument participates in gradient computation and a tape is
// attached; ops use this to decide whether to record.
template <typename T, typename... Ts>
bool track_grad(const Tape<T>* tape, const Ts&... tensors) {
    return tape != nullptr && (... || tensors.requires_grad());
}

}  // namespace olbp
