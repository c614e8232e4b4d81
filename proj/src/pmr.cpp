#include "comet/pmr.hpp"

#include "comet/numerics.hpp"

namespace comet {

double PseudoSequence::teacher_fraction() const {
    if (from_teacher.empty()) return 0.0;
    Index n = 0;
    for (bool b : from_teacher) n += b ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(from_teacher.size());
}

PseudoSequence build_pseudo_sequence(const Matrix& z_mediator, const TeacherSnapshot& teacher,
                                     const UnifiedCodebook& live, double new_code_weight) {
    const Index k1 = teacher.size();
    if (live.size() < k1) throw ValueError("pseudo replay: live codebook is smaller than the teacher");
    require_dims(k1 == 0 || teacher.codes().cols() == live.dim(), "pseudo replay: teacher code dimension mismatch");
    const Quantized q = quantize(z_mediator, live.codes);

    PseudoSequence out;
    out.indices = q.indices;
    out.weights.resize(z_mediator.rows());
    out.from_teacher.resize(static_cast<std::size_t>(z_mediator.rows()));
    out.embeddings.resize(z_mediator.rows(), live.dim());
    for (Index t = 0; t < z_mediator.rows(); ++t) {
        const Index i = q.indices[static_cast<std::size_t>(t)];
        const bool old = i < k1;
        out.from_teacher[static_cast<std::size_t>(t)] = old;
        out.weights(t) = old ? 1.0 : new_code_weight;
        out.embeddings.row(t) = old ? teacher.codes().row(i) : live.codes.row(i);
    }
    return out;
}

PseudoBatch stack_pseudo(const std::vector<PseudoSequence>& sequences) {
    require_dims(!sequences.empty(), "stack_pseudo: empty batch");
    const Index batch = static_cast<Index>(sequences.size());
    const Index steps = sequences.front().steps();
    const Index dim = sequences.front().embeddings.cols();
    PseudoBatch out;
    out.batch = batch;
    out.embeddings.resize(steps * batch, dim);
    out.weights.resize(steps, batch);
    double teacher = 0.0;
    for (Index b = 0; b < batch; ++b) {
        const auto& s = sequences[static_cast<std::size_t>(b)];
        require_dims(s.steps() == steps && s.embeddings.cols() == dim, "stack_pseudo: ragged batch");
        for (Index t = 0; t < steps; ++t) out.embeddings.row(t * batch + b) = s.embeddings.row(t);
        out.weights.col(b) = s.weights;
        teacher += s.teacher_fraction();
    }
    out.teacher_fraction = teacher / static_cast<double>(batch);
    return out;
}

namespace ad {

Var pmr_cpc_rows(ParamBinding& heads, const PseudoBatch& pseudo, const ModalityId& mediator, const Var& z_mediator,
                 const Var& contexts_mediator, const ModalityId& partner, const Var& z_partner,
                 const Var& contexts_partner, int k_steps, bool weighted) {
    require_dims(z_mediator.rows() == pseudo.embeddings.rows() && z_partner.rows() == pseudo.embeddings.rows(),
                 "pseudo replay: sequence lengths differ");
    Tape& tape = z_mediator.tape();
    Var z_pseudo = tape.constant(pseudo.embeddings);
    Var contexts_pseudo = recurrent_summarize(heads, CpcHead::prefix(kPseudoModality) + ".rnn", z_pseudo, pseudo.batch);

    CpcOptions options;
    options.batch = pseudo.batch;
    options.k_steps = k_steps;
    options.step_weights = weighted ? &pseudo.weights : nullptr;
    std::vector<Var> terms{
        cpc_direction(heads, kPseudoModality, contexts_pseudo, z_mediator, options),
        cpc_direction(heads, mediator, contexts_mediator, z_pseudo, options),
        cpc_direction(heads, kPseudoModality, contexts_pseudo, z_partner, options),
        cpc_direction(heads, partner, contexts_partner, z_pseudo, options),
    };
    return add_n(terms);
}

}  // namespace ad

namespace {

Matrix time_major(const std::vector<Matrix>& seqs) {
    require_dims(!seqs.empty(), "pseudo replay: empty batch");
    const Index batch = static_cast<Index>(seqs.size());
    const Index steps = seqs.front().rows();
    Matrix out(steps * batch, seqs.front().cols());
    for (Index b = 0; b < batch; ++b) {
        const Matrix& s = seqs[static_cast<std::size_t>(b)];
        require_dims(s.rows() == steps && s.cols() == out.cols(), "pseudo replay: sequence lengths differ");
        for (Index t = 0; t < steps; ++t) out.row(t * batch + b) = s.row(t);
    }
    return out;
}

}  // namespace

double pmr_cpc_loss(const std::vector<PseudoSequence>& pseudo, const std::vector<Matrix>& z_mediator,
                    const std::vector<Matrix>& z_partner, const ParamSet& heads, const ModalityId& mediator,
                    const ModalityId& partner, int k_steps, bool weighted) {
    require_dims(pseudo.size() == z_mediator.size() && pseudo.size() == z_partner.size(),
                 "pseudo replay: batch sizes differ");
    const PseudoBatch batch = stack_pseudo(pseudo);
    ad::Tape tape;
    ParamBinding bound(tape, heads, false);
    const Index b = batch.batch;
    ad::Var zm = tape.constant(time_major(z_mediator));
    ad::Var zp = tape.constant(time_major(z_partner));
    ad::Var cm = ad::recurrent_summarize(bound, CpcHead::prefix(mediator) + ".rnn", zm, b);
    ad::Var cp = ad::recurrent_summarize(bound, CpcHead::prefix(partner) + ".rnn", zp, b);
    return ad::scalar(ad::mean(ad::pmr_cpc_rows(bound, batch, mediator, zm, cm, partner, zp, cp, k_steps, weighted)));
}

}  // namespace comet
