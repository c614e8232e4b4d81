#include "comet/objectives.hpp"

#include "comet/numerics.hpp"

#include <cmath>
#include <numbers>

namespace comet {

void VariationalNet::init(ParamSet& params, const ModalityId& modality, const ModelDims& dims, std::uint64_t seed) {
    const std::string p = prefix(modality);
    params.set(p + ".l1.weight", init_weight(seed, p + ".l1.weight", dims.q_hidden, dims.sem_dim));
    params.set(p + ".l1.bias", Matrix::Zero(1, dims.q_hidden));
    params.set(p + ".mean.weight", init_weight(seed, p + ".mean.weight", dims.spec_dim, dims.q_hidden));
    params.set(p + ".mean.bias", Matrix::Zero(1, dims.spec_dim));
    params.set(p + ".logvar.weight", init_weight(seed, p + ".logvar.weight", dims.spec_dim, dims.q_hidden, 0.1));
    params.set(p + ".logvar.bias", Matrix::Zero(1, dims.spec_dim));
}

void CpcHead::init(ParamSet& params, const ModalityId& modality, const ModelDims& dims, std::uint64_t seed) {
    init_recurrent(params, prefix(modality) + ".rnn", {dims.sem_dim, dims.context_dim}, seed);
    for (int k = 1; k <= dims.k_steps; ++k) {
        const std::string p = projection(modality, k);
        params.set(p, init_weight(seed, p, dims.sem_dim, dims.context_dim));
    }
}

double club_estimate(const Matrix& log_density) {
    require_dims(log_density.rows() == log_density.cols(), "club_estimate: square matrix required");
    if (log_density.rows() < 2) throw ValueError("CLUB estimator needs at least 2 rows");
    return log_density.diagonal().mean() - log_density.mean();
}

namespace ad {

GaussianHead variational_head(ParamBinding& q, const ModalityId& modality, const Var& z) {
    const std::string p = VariationalNet::prefix(modality);
    Var hidden = silu(affine(z, q[p + ".l1.weight"], q[p + ".l1.bias"]));
    Var mu = affine(hidden, q[p + ".mean.weight"], q[p + ".mean.bias"]);
    Var logvar = clamp(affine(hidden, q[p + ".logvar.weight"], q[p + ".logvar.bias"]), kLogVarMin, kLogVarMax);
    return {mu, logvar};
}

Var gaussian_log_density_rows(const GaussianHead& head, const Var& y) {
    require_dims(y.rows() == head.mean.rows() && y.cols() == head.mean.cols(), "log density: shape mismatch");
    Var precision = exp(scale(head.logvar, -1.0));
    Var quad = hadamard(square(sub(y, head.mean)), precision);
    const double log_two_pi = std::log(2.0 * std::numbers::pi);
    Var per_dim = add(quad, head.logvar);
    Var total = row_sum(per_dim);
    Var with_const = add(total, y.tape().constant(Matrix::Constant(y.rows(), 1, log_two_pi * static_cast<double>(y.cols()))));
    return scale(with_const, -0.5);
}

Var club_rows(ParamBinding& q, const ModalityId& modality, const Var& z, const Var& zbar, const Matrix* marginal) {
    require_dims(z.rows() == zbar.rows(), "CLUB: semantic and specific rows are not aligned");
    const Index marginal_rows = marginal ? marginal->rows() : zbar.rows();
    if (marginal_rows < 2 || zbar.rows() < 1) throw ValueError("CLUB estimator needs at least 2 rows");
    GaussianHead head = variational_head(q, modality, z);
    Var precision = exp(scale(head.logvar, -1.0));

    Var m1, m2;
    if (marginal) {
        require_dims(marginal->cols() == zbar.cols(), "CLUB: marginal feature dimension mismatch");
        m1 = z.tape().constant(marginal->colwise().mean());
        m2 = z.tape().constant(marginal->cwiseAbs2().colwise().mean());
    } else {
        m1 = col_mean(zbar);
        m2 = col_mean(square(zbar));
    }
    // mean_j (zbar_j - mu_i)^2 = m2 - 2 mu_i m1 + mu_i^2, so the N x N pair
    // matrix never needs to be formed. Log-variance and constants cancel.
    Var matched = square(sub(zbar, head.mean));
    Var marginal_sq = add_row(sub(square(head.mean), scale(mul_row(head.mean, m1), 2.0)), m2);
    return scale(row_sum(hadamard(precision, sub(matched, marginal_sq))), -0.5);
}

Var club_upper_bound(ParamBinding& q, const ModalityId& modality, const Var& z, const Var& zbar) {
    return mean(club_rows(q, modality, z, zbar));
}

Var club_aux_nll(ParamBinding& q, const ModalityId& modality, const Var& z, const Var& zbar) {
    require_dims(z.rows() == zbar.rows(), "CLUB: semantic and specific rows are not aligned");
    GaussianHead head = variational_head(q, modality, z);
    return scale(mean(gaussian_log_density_rows(head, zbar)), -1.0);
}

Var info_nce_rows(const Var& logits, const IndexList& positives) {
    if (logits.cols() < 2) throw ValueError("InfoNCE needs a candidate set of at least 2");
    return scale(pick(log_softmax_rows(logits), positives), -1.0);
}

Var cpc_direction(ParamBinding& heads, const ModalityId& source, const Var& contexts, const Var& targets,
                  const CpcOptions& options) {
    const Index batch = options.batch;
    require_dims(batch >= 1 && contexts.rows() % batch == 0, "cpc: context rows must be a multiple of the batch");
    require_dims(targets.rows() == contexts.rows(), "cpc: context and target sequences differ in length");
    const Index steps = contexts.rows() / batch;
    const int k_steps = options.k_steps;
    if (k_steps < 1 || steps <= k_steps) throw ValueError("cpc: need more steps than the prediction horizon");
    Index extra_per_step = 0;
    if (options.extra_candidates) {
        require_dims(options.extra_candidates->rows() % steps == 0 && options.extra_candidates->cols() == targets.cols(),
                     "cpc: extra candidates must be time-major with matching width");
        extra_per_step = options.extra_candidates->rows() / steps;
    }
    if (batch + extra_per_step < 2) throw ValueError("cpc: candidate set smaller than 2");
    if (options.step_weights) {
        require_dims(options.step_weights->rows() == steps && options.step_weights->cols() == batch,
                     "cpc: step weights must be steps x batch");
    }

    Tape& tape = contexts.tape();
    IndexList diagonal(static_cast<std::size_t>(batch));
    for (Index b = 0; b < batch; ++b) diagonal[static_cast<std::size_t>(b)] = b;

    std::vector<Var> terms;
    for (int k = 1; k <= k_steps; ++k) {
        Var projection = heads[CpcHead::projection(source, k)];
        for (Index t = 0; t + k_steps < steps; ++t) {
            Var prediction = matmul_nt(row_block(contexts, t * batch, batch), projection);
            Var candidates = row_block(targets, (t + k) * batch, batch);
            if (extra_per_step > 0) {
                candidates = concat_rows(
                    {candidates,
                     tape.constant(options.extra_candidates->middleRows((t + k) * extra_per_step, extra_per_step))});
            }
            Var nll = info_nce_rows(matmul_nt(prediction, candidates), diagonal);
            if (options.step_weights) {
                nll = hadamard(nll, tape.constant(options.step_weights->row(t + k).transpose()));
            }
            terms.push_back(nll);
        }
    }
    const double positions = static_cast<double>(steps - k_steps);
    return scale(add_n(terms), 1.0 / (positions * static_cast<double>(k_steps)));
}

Var recon_loss(const Var& reconstruction, const Var& target) {
    require_dims(reconstruction.rows() == target.rows() && reconstruction.cols() == target.cols(),
                 "recon_loss: shape mismatch");
    return mean(square(sub(reconstruction, target)));
}

}  // namespace ad

double club_upper_bound(const FeatureSequence& z, const FeatureSequence& zbar, const ParamSet& q,
                        const ModalityId& modality) {
    ad::Tape tape;
    ParamBinding bound(tape, q, false);
    return ad::scalar(ad::club_upper_bound(bound, modality, tape.constant(z.matrix()), tape.constant(zbar.matrix())));
}

double club_aux_nll(const FeatureSequence& z, const FeatureSequence& zbar, const ParamSet& q,
                    const ModalityId& modality) {
    ad::Tape tape;
    ParamBinding bound(tape, q, false);
    return ad::scalar(ad::club_aux_nll(bound, modality, tape.constant(z.matrix()), tape.constant(zbar.matrix())));
}

double cross_cpc_loss(const Vector& context, const std::vector<Matrix>& projections,
                      const std::vector<Matrix>& candidates, const IndexList& positives) {
    require_dims(!projections.empty() && projections.size() == candidates.size() && candidates.size() == positives.size(),
                 "cross_cpc_loss: one projection, candidate set and positive per step");
    ad::Tape tape;
    double total = 0.0;
    for (std::size_t k = 0; k < projections.size(); ++k) {
        require_dims(projections[k].cols() == context.size(), "cross_cpc_loss: projection width mismatch");
        require_dims(candidates[k].cols() == projections[k].rows(), "cross_cpc_loss: candidate width mismatch");
        const Vector prediction = projections[k] * context;
        Matrix logits = (candidates[k] * prediction).transpose();
        total += ad::scalar(ad::info_nce_rows(tape.constant(std::move(logits)), {positives[k]}));
    }
    return total / static_cast<double>(projections.size());
}

double recon_loss(const Matrix& reconstruction, const Matrix& target) {
    ad::Tape tape;
    return ad::scalar(ad::recon_loss(tape.constant(reconstruction), tape.constant(target)));
}

double LossWeights::get(const std::string& name) const {
    if (name == "recon") return recon;
    if (name == "commit") return commit;
    if (name == "cpc") return cpc;
    if (name == "cmcm") return cmcm;
    if (name == "mi") return mi;
    if (name == "gate") return gate;
    if (name == "pmr") return pmr;
    if (name == "ewc") return ewc;
    throw ValueError("unknown loss component: " + name);
}

PlainTotal total_loss(const std::map<std::string, double>& components, const LossWeights& weights,
                      const PlainCmcmHook& hook) {
    PlainTotal out;
    for (const auto& [name, value] : components) {
        if (name == "cmcm" && hook) continue;
        if (!std::isfinite(value)) throw ValueError("non-finite loss component: " + name);
        out.breakdown[name] = value;
        out.value += weights.get(name) * value;
    }
    if (hook) {
        const double value = hook();
        if (!std::isfinite(value)) throw ValueError("non-finite loss component: cmcm");
        out.breakdown["cmcm"] = value;
        out.value += weights.cmcm * value;
    } else if (!out.breakdown.count("cmcm")) {
        out.breakdown["cmcm"] = 0.0;
    }
    return out;
}

}  // namespace comet
