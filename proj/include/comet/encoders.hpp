#pragma once

#include "comet/ad.hpp"
#include "comet/dims.hpp"
#include "comet/params.hpp"
#include "comet/synthgen.hpp"

#include <string>
#include <utility>

namespace comet {

/// Parameter layout of one modality's encoder pair and decoder:
///   enc.<m>.front.{l1,l2}     raw -> hidden -> sem  (semantic front, feeds the adapter)
///   enc.<m>.specific.{l1,l2}  raw -> hidden -> spec, tanh-bounded (modality-specific)
///   enc.<m>.decoder           [code | spec] -> raw  (single affine layer)
struct ModalityEncoder {
    ModalityId modality;

    std::string prefix() const { return "enc." + modality + "."; }
    static void init(ParamSet& params, const ModalityId& modality, const ModelDims& dims, std::uint64_t seed);
};

struct EncodedSequence {
    FeatureSequence semantic;  // pre-adapter h
    FeatureSequence specific;  // z-bar
};

EncodedSequence encode(const FeatureSequence& x, const ParamSet& params, const ModalityId& modality);
FeatureSequence decode(const FeatureSequence& codes, const FeatureSequence& specific, const ParamSet& params,
                       const ModalityId& modality);

namespace ad {

/// Two-layer perceptron with a SiLU hidden layer: l2(silu(l1(x))).
Var mlp2(ParamBinding& params, const std::string& prefix, const Var& x);

std::pair<Var, Var> encode(ParamBinding& params, const ModalityId& modality, const Var& x);
Var decode(ParamBinding& params, const ModalityId& modality, const Var& codes, const Var& specific);

}  // namespace ad

}  // namespace comet
