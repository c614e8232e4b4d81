#pragma once

#include "comet/dims.hpp"
#include "comet/rng.hpp"
#include "comet/types.hpp"

#include <random>

namespace comet::fixture {

inline Matrix randn(std::uint64_t seed, Index rows, Index cols, double scale = 1.0) {
    Rng rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * n01(rng);
    return m;
}

inline ModelDims small_dims() {
    ModelDims d;
    d.raw_dim = 6;
    d.sem_dim = 4;
    d.spec_dim = 2;
    d.hidden = 8;
    d.context_dim = 4;
    d.q_hidden = 4;
    d.experts = 3;
    d.k_steps = 2;
    return d;
}

}  // namespace comet::fixture
