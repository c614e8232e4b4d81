#pragma once

#include "comet/types.hpp"

namespace comet {

/// Layer widths shared by every module of one model.
struct ModelDims {
    Index raw_dim = 32;
    Index sem_dim = 16;  // also the code dimension
    Index spec_dim = 8;
    Index hidden = 64;
    Index context_dim = 16;
    Index q_hidden = 32;
    int experts = 6;
    int k_steps = 2;
    bool specific_layers = true;

    bool operator==(const ModelDims&) const = default;
};

}  // namespace comet
