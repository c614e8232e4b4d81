#pragma once

#include "comet/ad.hpp"
#include "comet/dims.hpp"
#include "comet/params.hpp"
#include "comet/synthgen.hpp"

#include <string>

namespace comet {

/// Continual mixture-of-experts adapter. Expert i applies the modality's
/// own layer first and then the expert's shared common layer:
///   E_i(h) = common_i(specific_{i,m}(h)),   z = sum_i softmax(W_g h)_i E_i(h)
/// Parameter paths:
///   adapter.expert<i>.common.{weight,bias}
///   adapter.expert<i>.specific.<m>.{weight,bias}   (created per modality)
///   adapter.router.{weight,bias}
struct AdapterLayout {
    int experts = 6;
    bool specific_layers = true;

    static AdapterLayout from(const ModelDims& dims) { return {dims.experts, dims.specific_layers}; }
};

std::string expert_prefix(int expert);
std::string common_prefix(int expert);
std::string specific_prefix(int expert, const ModalityId& modality);
inline const std::string kRouterPrefix = "adapter.router";

/// Common layers and router.
void init_adapter(ParamSet& params, const ModelDims& dims, std::uint64_t seed);
/// Creates the modality's specific layer in every expert if it is missing.
/// Returns true when anything was created.
bool ensure_modality(ParamSet& params, const ModelDims& dims, const ModalityId& modality, std::uint64_t seed);
bool has_modality(const ParamSet& params, const ModalityId& modality);

/// Single-expert evaluation on one feature vector. Throws for a modality
/// whose specific layer does not exist (evaluation never creates layers).
Vector expert_forward(const Vector& h, const ModalityId& modality, int expert, const ParamSet& params,
                      const AdapterLayout& layout);

struct AdapterOutput {
    FeatureSequence z;
    Matrix gates;  // T x O, rows sum to 1
};

AdapterOutput adapter_forward(const FeatureSequence& h, const ModalityId& modality, const ParamSet& params,
                              const AdapterLayout& layout);

/// (1/U) sum_j (L_j / I - 1)^2 with L_j the column load and I = B/U.
double gate_load_loss(const Matrix& gates);

namespace ad {

struct AdapterVars {
    Var z;
    Var gates;
};

Var expert_forward(ParamBinding& params, const ModalityId& modality, int expert, const Var& h,
                   const AdapterLayout& layout);
AdapterVars adapter_forward(ParamBinding& params, const ModalityId& modality, const Var& h,
                            const AdapterLayout& layout);
Var gate_load_loss(const Var& gates);

}  // namespace ad

}  // namespace comet
