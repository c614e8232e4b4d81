#include "comet/encoders.hpp"

namespace comet {

namespace {

void init_affine(ParamSet& params, const std::string& prefix, Index out, Index in, std::uint64_t seed) {
    params.set(prefix + ".weight", init_weight(seed, prefix + ".weight", out, in));
    params.set(prefix + ".bias", Matrix::Zero(1, out));
}

}  // namespace

void ModalityEncoder::init(ParamSet& params, const ModalityId& modality, const ModelDims& dims, std::uint64_t seed) {
    const std::string p = "enc." + modality + ".";
    init_affine(params, p + "front.l1", dims.hidden, dims.raw_dim, seed);
    init_affine(params, p + "front.l2", dims.sem_dim, dims.hidden, seed);
    init_affine(params, p + "specific.l1", dims.hidden, dims.raw_dim, seed);
    init_affine(params, p + "specific.l2", dims.spec_dim, dims.hidden, seed);
    init_affine(params, p + "decoder", dims.raw_dim, dims.sem_dim + dims.spec_dim, seed);
}

namespace ad {

Var mlp2(ParamBinding& params, const std::string& prefix, const Var& x) {
    Var hidden = silu(affine(x, params[prefix + ".l1.weight"], params[prefix + ".l1.bias"]));
    return affine(hidden, params[prefix + ".l2.weight"], params[prefix + ".l2.bias"]);
}

std::pair<Var, Var> encode(ParamBinding& params, const ModalityId& modality, const Var& x) {
    const std::string p = "enc." + modality + ".";
    const Index expected = params.params().at(p + "front.l1.weight").cols();
    require_dims(x.cols() == expected, "encode: modality " + modality + " expects " + std::to_string(expected) +
                                           " raw features, got " + std::to_string(x.cols()));
    return {mlp2(params, p + "front", x), tanh(mlp2(params, p + "specific", x))};
}

Var decode(ParamBinding& params, const ModalityId& modality, const Var& codes, const Var& specific) {
    require_dims(codes.rows() == specific.rows(), "decode: code and specific sequences differ in length");
    const std::string p = "enc." + modality + ".decoder";
    return affine(concat_cols({codes, specific}), params[p + ".weight"], params[p + ".bias"]);
}

}  // namespace ad

EncodedSequence encode(const FeatureSequence& x, const ParamSet& params, const ModalityId& modality) {
    ad::Tape tape;
    ParamBinding bound(tape, params, false);
    auto [h, zbar] = ad::encode(bound, modality, tape.constant(x.matrix()));
    return {FeatureSequence(h.value()), FeatureSequence(zbar.value())};
}

FeatureSequence decode(const FeatureSequence& codes, const FeatureSequence& specific, const ParamSet& params,
                       const ModalityId& modality) {
    ad::Tape tape;
    ParamBinding bound(tape, params, false);
    return FeatureSequence(
        ad::decode(bound, modality, tape.constant(codes.matrix()), tape.constant(specific.matrix())).value());
}

}  // namespace comet
