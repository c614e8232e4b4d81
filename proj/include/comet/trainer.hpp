#pragma once

#include "comet/ad.hpp"
#include "comet/cmoe_adapter.hpp"
#include "comet/dims.hpp"
#include "comet/ewc.hpp"
#include "comet/objectives.hpp"
#include "comet/optimizer.hpp"
#include "comet/params.hpp"
#include "comet/pmr.hpp"
#include "comet/quantizer.hpp"
#include "comet/synthgen.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace comet {

/// Components that can be switched off to reproduce ablation rows.
/// "pm" removes codebook expansion and pseudo replay together.
struct Ablation {
    bool pseudo_replay = true;    // pm
    bool mixture = true;          // moe: false means a single expert
    bool gate_loss = true;        // gate
    bool ewc = true;              // ewc
    bool specific_layers = true;  // sl

    /// Comma-separated list of components to disable, e.g. "pm,ewc".
    static Ablation parse(const std::string& disabled);
    /// Comma-separated disabled components, empty for the full model.
    std::string disabled() const;
    bool operator==(const Ablation&) const = default;
};

/// Settings fixed for a whole run.
struct ModelConfig {
    ModelDims dims;
    Index codebook_size = 64;        // K1 of stage 1
    double code_init_scale = 0.25;   // stddev of the initial codes
    double dead_threshold = 1e-3;    // eps_N
    Ablation ablation;
    LossWeights weights;
    std::size_t fisher_samples = 256;
    std::uint64_t seed = 0;

    /// Dims after the ablation switches are applied.
    ModelDims effective_dims() const;
    bool operator==(const ModelConfig& other) const;
};

struct StageHyper {
    int epochs = 20;
    Index added_codes = 32;  // K2, ignored in stage 1
    double lr = 1e-3;
    double lambda = 100.0;
    double gamma = 0.99;
    double beta = 1.0;
    int k_steps = 2;
    Index batch = 32;
    std::uint64_t seed = 0;
};

struct StagePlan {
    int stage = 1;
    ModalityId mediator;
    ModalityId partner;
    std::string dataset;
    StageHyper hyper;
};

struct Checkpoint {
    static constexpr int kFormatVersion = 1;

    int stage = 0;  // last completed stage
    ModelConfig config;
    ModalityId mediator;
    std::vector<ModalityId> modalities;  // in order of first appearance
    ParamSet params;                     // encoders, adapter, router, CPC heads
    ParamSet club;                       // variational networks
    UnifiedCodebook codebook;
    std::optional<TeacherSnapshot> teacher;
    std::vector<FisherSnapshot> fisher;
    AdamState adam_main;
    AdamState adam_club;
    std::uint64_t config_hash = 0;

    bool has_modality(const ModalityId& m) const;
    bool operator==(const Checkpoint& other) const;
};

/// Fresh, untrained model: adapter, router, pseudo CPC head and a random
/// codebook. Modality-dependent layers appear when a stage first needs them.
Checkpoint init_checkpoint(const ModelConfig& config, const ModalityId& mediator);

/// Creates the encoder, CPC head, variational net and adapter specific
/// layers of `modality` if any are missing.
void ensure_modality_params(Checkpoint& state, const ModalityId& modality);

/// Breakdown of one step; keys are exactly
/// recon, commit, cpc, mi, gate, pmr, ewc.
struct StepResult {
    std::map<std::string, double> losses;
    double total = 0.0;
    double teacher_fraction = 0.0;
};

struct StageContext {
    int stage = 1;
    ModalityId mediator;
    ModalityId partner;
    StageHyper hyper;
};

/// Forward, losses, one main gradient step, one variational-net step, and
/// the MM-EMA codebook update. Throws naming the first non-finite component.
StepResult train_step(Checkpoint& state, const StageContext& context, const std::vector<const SequencePair*>& batch);

/// Weighted main objective of one batch without any update. When `gradient`
/// is given it receives d(objective)/d(params) for every parameter path.
/// With `straight_through_anchor`, code assignments and the quantization
/// offsets are computed at those parameters and held fixed, which makes the
/// objective smooth in params with the straight-through gradient at the anchor.
double batch_objective(const Checkpoint& state, const StageContext& context,
                       const std::vector<const SequencePair*>& batch, ParamSet* gradient = nullptr,
                       const ParamSet* straight_through_anchor = nullptr);

struct MetricsRow {
    int stage = 0;
    int epoch = 0;
    std::int64_t step = 0;
    StepResult result;
};
using MetricsSink = std::function<void(const MetricsRow&)>;

/// Fixed metrics CSV layout.
std::string metrics_header();
std::string metrics_line(const MetricsRow& row);

using DatasetLoader = std::function<StageDataset(const std::string&)>;

/// Expansion, layer creation, epochs of train_step, then a Fisher snapshot.
/// The dataset is obtained only through `loader(plan.dataset)`.
Checkpoint run_stage(const StagePlan& plan, const std::optional<Checkpoint>& previous, const ModelConfig& config,
                     const DatasetLoader& loader, const MetricsSink& sink = {});
/// Same, with the dataset already in memory.
Checkpoint run_stage(const StagePlan& plan, const std::optional<Checkpoint>& previous, const ModelConfig& config,
                     const StageDataset& data, const MetricsSink& sink = {});

/// Per-example objective gradient restricted to the EWC scope, averaged as
/// squared scores over the first `fisher_samples` training pairs.
FisherSnapshot stage_fisher(const Checkpoint& state, const StageContext& context, const StageDataset& data);

std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace comet
