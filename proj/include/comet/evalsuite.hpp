#pragma once

#include "comet/quantizer.hpp"
#include "comet/synthgen.hpp"
#include "comet/trainer.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace comet {

/// Code index per timestep of `x` under the checkpoint's encoder, adapter
/// and live codebook. Throws for a modality the model has never seen.
IndexList encode_indices(const Checkpoint& model, const ModalityId& modality, const FeatureSequence& x);

/// Fraction of timesteps where both sides chose the same index.
double code_agreement(const std::vector<IndexList>& a, const std::vector<IndexList>& b);
double code_agreement(const Checkpoint& model, const ModalityId& mediator, const ModalityId& partner,
                      const std::vector<SequencePair>& pairs);

struct LabeledCodes {
    std::vector<Matrix> embeddings;  // per sequence, T x D
    std::vector<std::vector<int>> labels;
};

/// Code embeddings of each sequence of one modality, labeled by the script.
LabeledCodes labeled_codes(const Checkpoint& model, const ModalityId& modality, const std::vector<SequencePair>& pairs,
                           bool use_mediator);

struct TransferOptions {
    int steps = 200;
    double lr = 1e-2;
};

/// Affine + softmax head fit on `train`, per-timestep accuracy on `test`.
/// Categories absent from the training labels count as errors.
double zero_shot_transfer(const LabeledCodes& train, const LabeledCodes& test, const TransferOptions& options = {});

/// Mean of the sequence's code vectors.
RowVector sequence_embedding(const Matrix& codes);

/// Recall@K for cosine ranking; query i's partner is gallery row truth[i].
/// Equal scores rank by gallery index.
std::map<Index, double> retrieval_recall(const Matrix& queries, const Matrix& gallery, const IndexList& truth,
                                         const std::vector<Index>& ks);

/// (before - after) / before, and 0 when before is 0.
double forgetting(double before, double after);

ActivationReport export_code_activation(const Checkpoint& model,
                                        const std::map<ModalityId, std::vector<FeatureSequence>>& eval_sets,
                                        double threshold_fraction = 1e-3);
/// Columns: code_id, class, then one count column per modality.
std::string activation_csv(const ActivationReport& report, const std::vector<ModalityId>& modalities);

struct EvalReport {
    std::map<std::string, double> metrics;
    std::map<std::string, std::map<std::string, double>> breakdown;  // per stage / modality pair
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;

    std::string to_json() const;
};

}  // namespace comet
