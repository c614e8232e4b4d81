#pragma once

#include "comet/ad.hpp"
#include "comet/objectives.hpp"
#include "comet/params.hpp"
#include "comet/quantizer.hpp"

#include <cmath>
#include <vector>

namespace comet {

/// Loss weight of a pseudo step whose code came from the newly added rows.
inline const double kNewCodeWeight = std::exp(-6.0);
inline const ModalityId kPseudoModality = "pseudo";

/// Code sequence of the mediator modality against the live codebook, with
/// teacher-sourced steps read from the frozen snapshot.
struct PseudoSequence {
    IndexList indices;
    Vector weights;
    std::vector<bool> from_teacher;
    Matrix embeddings;  // T x D

    Index steps() const { return static_cast<Index>(indices.size()); }
    double teacher_fraction() const;
};

PseudoSequence build_pseudo_sequence(const Matrix& z_mediator, const TeacherSnapshot& teacher,
                                     const UnifiedCodebook& live, double new_code_weight = kNewCodeWeight);

/// A batch of pseudo sequences in the time-major layout used by the trainer.
struct PseudoBatch {
    Matrix embeddings;  // (T * B) x D, time-major
    Matrix weights;     // T x B
    Index batch = 0;
    double teacher_fraction = 0.0;
};

PseudoBatch stack_pseudo(const std::vector<PseudoSequence>& sequences);

namespace ad {

/// CPC(pseudo <-> mediator) + CPC(pseudo <-> partner), each direction's step
/// contribution scaled by the pseudo weight at the predicted position t+k.
/// The pseudo embeddings enter as constants. Per-sequence values, B x 1.
Var pmr_cpc_rows(ParamBinding& heads, const PseudoBatch& pseudo, const ModalityId& mediator, const Var& z_mediator,
                 const Var& contexts_mediator, const ModalityId& partner, const Var& z_partner,
                 const Var& contexts_partner, int k_steps, bool weighted = true);

}  // namespace ad

/// Plain evaluation over a batch of single sequences. `heads` holds the CPC
/// heads of the pseudo, mediator and partner modalities.
double pmr_cpc_loss(const std::vector<PseudoSequence>& pseudo, const std::vector<Matrix>& z_mediator,
                    const std::vector<Matrix>& z_partner, const ParamSet& heads, const ModalityId& mediator,
                    const ModalityId& partner, int k_steps, bool weighted = true);

}  // namespace comet
