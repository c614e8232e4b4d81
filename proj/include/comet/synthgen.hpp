#pragma once

#include "comet/types.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace comet {

using ModalityId = std::string;

/// Ground-truth category per timestep.
struct SemanticScript {
    std::vector<int> codes;
    int categories = 0;

    Index steps() const { return static_cast<Index>(codes.size()); }
    bool operator==(const SemanticScript&) const = default;
};

/// Markov script: with probability p_stay the category repeats, otherwise a
/// fresh uniform draw over the other categories.
SemanticScript generate_script(int categories, Index steps, std::uint64_t seed, double p_stay = 0.8);

struct RendererOptions {
    Index raw_dim = 32;
    Index nuisance_dim = 4;
    double nuisance_scale = 0.5;
    double noise = 0.1;
    int total_categories = 64;
};

/// Fixed per-modality embedding table plus a low-dimensional nuisance
/// subspace that carries modality-specific structure.
class ModalityRenderer {
public:
    static ModalityRenderer create(const ModalityId& modality, const RendererOptions& options, std::uint64_t world_seed);

    const ModalityId& modality() const { return modality_; }
    const Matrix& embeddings() const { return embeddings_; }
    const Matrix& nuisance_basis() const { return nuisance_basis_; }
    double nuisance_scale() const { return nuisance_scale_; }
    double noise() const { return noise_; }
    Index raw_dim() const { return embeddings_.cols(); }
    int total_categories() const { return static_cast<int>(embeddings_.rows()); }

    /// Hash of every array and scalar; equal fingerprints mean equal renderers.
    std::uint64_t fingerprint() const;

    /// Renderer with explicit tables, mainly for degenerate test cases.
    ModalityRenderer(ModalityId modality, Matrix embeddings, Matrix nuisance_basis, double nuisance_scale, double noise);

private:
    ModalityId modality_;
    Matrix embeddings_;
    Matrix nuisance_basis_;
    double nuisance_scale_ = 0.0;
    double noise_ = 0.0;
};

/// x_t = M[script_t] + nuisance_t + noise_t, script ids are global category ids.
FeatureSequence render(const SemanticScript& script, const ModalityRenderer& renderer, std::uint64_t seed);

/// One renderer per modality, built from a world seed, with a declared mediator.
class RendererBank {
public:
    RendererBank(const RendererOptions& options, std::uint64_t world_seed, ModalityId mediator);

    const ModalityRenderer& get(const ModalityId& modality);
    const ModalityId& mediator() const { return mediator_; }
    const RendererOptions& options() const { return options_; }

private:
    RendererOptions options_;
    std::uint64_t world_seed_;
    ModalityId mediator_;
    std::map<ModalityId, ModalityRenderer> renderers_;
};

/// Global category ids a stage draws from: shared old ids first, then the
/// stage's fresh range [lo, hi).
struct CategoryPlan {
    int lo = 0;
    int hi = 0;
    std::vector<int> shared;

    std::vector<int> table() const;
    int count() const { return static_cast<int>(shared.size()) + (hi - lo); }
};

/// Stage s >= 2 reuses round(overlap * C) of stage 1's ids and gets the rest fresh.
std::vector<CategoryPlan> plan_categories(const std::vector<int>& categories_per_stage,
                                          const std::vector<double>& overlap_per_stage);

struct StageSpec {
    int stage = 1;
    ModalityId mediator;
    ModalityId partner;
    CategoryPlan categories;
    int train_pairs = 512;
    int eval_pairs = 128;
    Index steps = 16;
    double p_stay = 0.8;
};

struct SequencePair {
    FeatureSequence mediator;
    FeatureSequence partner;
    std::vector<int> script;  // global category ids
};

struct StageDataset {
    int stage = 1;
    ModalityId mediator;
    ModalityId partner;
    CategoryPlan categories;
    std::uint64_t seed = 0;
    Index steps = 0;
    Index raw_dim = 0;
    std::uint64_t mediator_fingerprint = 0;
    std::uint64_t partner_fingerprint = 0;
    std::vector<SequencePair> train;
    std::vector<SequencePair> eval;
};

StageDataset generate_stage_dataset(const StageSpec& spec, RendererBank& bank, std::uint64_t seed);

std::string serialize_dataset(const StageDataset& ds);
StageDataset deserialize_dataset(const std::string& bytes);
void save_dataset(const StageDataset& ds, const std::string& path);
StageDataset load_dataset(const std::string& path);

}  // namespace comet
