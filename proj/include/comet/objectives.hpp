#pragma once

#include "comet/ad.hpp"
#include "comet/dims.hpp"
#include "comet/params.hpp"
#include "comet/quantizer.hpp"
#include "comet/synthgen.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace comet {

inline constexpr double kLogVarMin = -8.0;
inline constexpr double kLogVarMax = 8.0;

/// Diagonal-Gaussian q(zbar | z) per modality:
///   club.<m>.l1 (sem -> q_hidden), club.<m>.mean, club.<m>.logvar (q_hidden -> spec)
struct VariationalNet {
    static std::string prefix(const ModalityId& modality) { return "club." + modality; }
    static void init(ParamSet& params, const ModalityId& modality, const ModelDims& dims, std::uint64_t seed);
};

/// Summarizer "cpc.<m>.rnn" and per-step projections "cpc.<m>.step<k>"
/// (sem x context) for contexts of modality m.
struct CpcHead {
    static std::string prefix(const ModalityId& modality) { return "cpc." + modality; }
    static std::string projection(const ModalityId& modality, int step) {
        return prefix(modality) + ".step" + std::to_string(step);
    }
    static void init(ParamSet& params, const ModalityId& modality, const ModelDims& dims, std::uint64_t seed);
};

/// The sample estimator given log q(y_j | x_i) in entry (i, j):
/// mean of the diagonal minus the mean of all entries.
double club_estimate(const Matrix& log_density);

double club_upper_bound(const FeatureSequence& z, const FeatureSequence& zbar, const ParamSet& q,
                        const ModalityId& modality);
double club_aux_nll(const FeatureSequence& z, const FeatureSequence& zbar, const ParamSet& q,
                    const ModalityId& modality);

/// InfoNCE at one time step: -(1/K) sum_k log softmax(Z_k W_k c)[positive_k].
double cross_cpc_loss(const Vector& context, const std::vector<Matrix>& projections,
                      const std::vector<Matrix>& candidates, const IndexList& positives);

double recon_loss(const Matrix& reconstruction, const Matrix& target);

struct LossWeights {
    double recon = 1.0;
    double commit = 1.0;
    double cpc = 1.0;
    double cmcm = 1.0;
    double mi = 1.0;
    double gate = 1.0;
    double pmr = 1.0;
    double ewc = 1.0;

    double get(const std::string& name) const;
};

/// Names in assembly order; "pmr" and "ewc" are added by the trainer.
inline const std::vector<std::string> kBaseComponents = {"recon", "commit", "cpc", "cmcm", "mi", "gate"};

using PlainCmcmHook = std::function<double()>;

struct PlainTotal {
    double value = 0.0;
    std::map<std::string, double> breakdown;
};

/// Weighted sum; the cmcm slot is filled by `hook` when given, otherwise 0.
PlainTotal total_loss(const std::map<std::string, double>& components, const LossWeights& weights,
                      const PlainCmcmHook& hook = {});

namespace ad {

struct GaussianHead {
    Var mean;
    Var logvar;
};

GaussianHead variational_head(ParamBinding& q, const ModalityId& modality, const Var& z);
/// log q(y_i | x_i) for aligned rows, N x 1.
Var gaussian_log_density_rows(const GaussianHead& head, const Var& y);

/// Per-row CLUB terms log q(zbar_i|z_i) - mean_j log q(zbar_j|z_i); their
/// mean is the estimator. The marginal over j runs over `zbar` itself, or
/// over `marginal` (held constant) when provided.
Var club_rows(ParamBinding& q, const ModalityId& modality, const Var& z, const Var& zbar,
              const Matrix* marginal = nullptr);
Var club_upper_bound(ParamBinding& q, const ModalityId& modality, const Var& z, const Var& zbar);
Var club_aux_nll(ParamBinding& q, const ModalityId& modality, const Var& z, const Var& zbar);

/// -log softmax(logits)_i[positive_i] per row.
Var info_nce_rows(const Var& logits, const IndexList& positives);

struct CpcOptions {
    Index batch = 1;
    int k_steps = 2;
    const Matrix* step_weights = nullptr;      // steps x batch, weight of target position t+k
    const Matrix* extra_candidates = nullptr;  // time-major (steps * M) x sem, constant negatives
};

/// One Cross-CPC direction with batch-internal negatives: contexts of the
/// source modality (time-major) predict the target modality's features k
/// steps ahead. Returns the per-sequence loss (batch x 1); its mean is the
/// direction's loss.
Var cpc_direction(ParamBinding& heads, const ModalityId& source, const Var& contexts, const Var& targets,
                  const CpcOptions& options);

Var recon_loss(const Var& reconstruction, const Var& target);

}  // namespace ad

}  // namespace comet
