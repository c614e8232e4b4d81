#include "comet/cmoe_adapter.hpp"

namespace comet {

std::string expert_prefix(int expert) { return "adapter.expert" + std::to_string(expert); }
std::string common_prefix(int expert) { return expert_prefix(expert) + ".common"; }
std::string specific_prefix(int expert, const ModalityId& modality) {
    return expert_prefix(expert) + ".specific." + modality;
}

void init_adapter(ParamSet& params, const ModelDims& dims, std::uint64_t seed) {
    if (dims.experts < 1) throw ValueError("adapter needs at least one expert");
    for (int i = 0; i < dims.experts; ++i) {
        const std::string p = common_prefix(i);
        params.set(p + ".weight", init_weight(seed, p + ".weight", dims.sem_dim, dims.sem_dim));
        params.set(p + ".bias", Matrix::Zero(1, dims.sem_dim));
    }
    params.set(kRouterPrefix + ".weight", init_weight(seed, kRouterPrefix + ".weight", dims.experts, dims.sem_dim));
    params.set(kRouterPrefix + ".bias", Matrix::Zero(1, dims.experts));
}

bool has_modality(const ParamSet& params, const ModalityId& modality) {
    return params.contains(specific_prefix(0, modality) + ".weight");
}

bool ensure_modality(ParamSet& params, const ModelDims& dims, const ModalityId& modality, std::uint64_t seed) {
    if (!dims.specific_layers || has_modality(params, modality)) return false;
    for (int i = 0; i < dims.experts; ++i) {
        const std::string p = specific_prefix(i, modality);
        params.set(p + ".weight", init_weight(seed, p + ".weight", dims.sem_dim, dims.sem_dim));
        params.set(p + ".bias", Matrix::Zero(1, dims.sem_dim));
    }
    return true;
}

namespace ad {

Var expert_forward(ParamBinding& params, const ModalityId& modality, int expert, const Var& h,
                   const AdapterLayout& layout) {
    Var x = h;
    if (layout.specific_layers) {
        const std::string sp = specific_prefix(expert, modality);
        if (!params.params().contains(sp + ".weight")) {
            throw ValueError("adapter has no specific layer for modality '" + modality + "'");
        }
        x = affine(x, params[sp + ".weight"], params[sp + ".bias"]);
    }
    const std::string cp = common_prefix(expert);
    return affine(x, params[cp + ".weight"], params[cp + ".bias"]);
}

AdapterVars adapter_forward(ParamBinding& params, const ModalityId& modality, const Var& h,
                            const AdapterLayout& layout) {
    require_dims(layout.experts >= 1, "adapter needs at least one expert");
    Var gates = softmax_rows(affine(h, params[kRouterPrefix + ".weight"], params[kRouterPrefix + ".bias"]));
    require_dims(gates.cols() == layout.experts, "router width does not match the expert count");
    std::vector<Var> mixed;
    mixed.reserve(static_cast<std::size_t>(layout.experts));
    for (int i = 0; i < layout.experts; ++i) {
        mixed.push_back(mul_col(expert_forward(params, modality, i, h, layout), col_block(gates, i, 1)));
    }
    return {mixed.size() == 1 ? mixed.front() : add_n(mixed), gates};
}

Var gate_load_loss(const Var& gates) {
    require_dims(gates.rows() >= 1, "gate loss needs at least one row");
    const double experts = static_cast<double>(gates.cols());
    // L_j / I = U * mean_i G_ij
    Var ratio = scale(col_mean(gates), experts);
    Var deviation = sub(ratio, gates.tape().constant(Matrix::Ones(1, gates.cols())));
    return mean(square(deviation));
}

}  // namespace ad

Vector expert_forward(const Vector& h, const ModalityId& modality, int expert, const ParamSet& params,
                      const AdapterLayout& layout) {
    ad::Tape tape;
    ParamBinding bound(tape, params, false);
    ad::Var out = ad::expert_forward(bound, modality, expert, tape.constant(h.transpose()), layout);
    return out.value().row(0).transpose();
}

AdapterOutput adapter_forward(const FeatureSequence& h, const ModalityId& modality, const ParamSet& params,
                              const AdapterLayout& layout) {
    ad::Tape tape;
    ParamBinding bound(tape, params, false);
    auto out = ad::adapter_forward(bound, modality, tape.constant(h.matrix()), layout);
    return {FeatureSequence(out.z.value()), out.gates.value()};
}

double gate_load_loss(const Matrix& gates) {
    ad::Tape tape;
    return ad::scalar(ad::gate_load_loss(tape.constant(gates)));
}

}  // namespace comet
