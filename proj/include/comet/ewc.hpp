#pragma once

#include "comet/ad.hpp"
#include "comet/cmoe_adapter.hpp"
#include "comet/params.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace comet {

/// Diagonal Fisher F and anchor θ* over a set of adapter paths.
struct FisherSnapshot {
    std::map<std::string, Matrix> fisher;
    std::map<std::string, Matrix> anchor;
    double lambda = 100.0;
    int stage = 0;

    std::vector<std::string> scope() const;
    /// Throws unless F and the anchor share keys and shapes and F >= 0.
    void validate() const;
    bool operator==(const FisherSnapshot& other) const;
};

/// Every expert's common layer plus the specific layers of `seen` modalities
/// that exist in `params`. The router is never included.
std::vector<std::string> select_scope(const ParamSet& params, const AdapterLayout& layout,
                                      const std::vector<ModalityId>& seen);

/// Gradient of the per-example objective for example `i`, restricted to scope.
using ExampleGradient = std::function<ParamSet(std::size_t)>;

/// Mean of squared per-example gradients over `examples` draws.
FisherSnapshot estimate_fisher(const ParamSet& theta, const std::vector<std::string>& scope, std::size_t examples,
                               const ExampleGradient& gradient, double lambda);

/// sum over scope of (λ/2) F (θ - θ*)^2.
double ewc_loss(const ParamSet& theta, const FisherSnapshot& snapshot);
double ewc_loss(const ParamSet& theta, const std::vector<FisherSnapshot>& snapshots);
/// λ F (θ - θ*) on each scope path.
ParamSet ewc_gradient(const ParamSet& theta, const FisherSnapshot& snapshot);

namespace ad {

Var ewc_loss(ParamBinding& theta, const FisherSnapshot& snapshot);
Var ewc_loss(ParamBinding& theta, const std::vector<FisherSnapshot>& snapshots);

}  // namespace ad

}  // namespace comet
