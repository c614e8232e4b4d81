#pragma once

#include "comet/params.hpp"

#include <cstdint>

namespace comet {

/// Adaptive-moment gradient descent with bias correction.
struct AdamState {
    ParamSet m;
    ParamSet v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    /// Moves every path that has a gradient; moments for new paths start at zero.
    void apply(ParamSet& params, const ParamSet& grads, double lr);
    bool operator==(const AdamState& other) const;
};

}  // namespace comet
