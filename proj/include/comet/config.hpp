#pragma once

#include "comet/evalsuite.hpp"
#include "comet/synthgen.hpp"
#include "comet/trainer.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace comet {

/// Invalid run configuration; the message starts with the offending field path.
class ConfigError : public ValueError {
public:
    using ValueError::ValueError;
};

/// Synthetic corpus settings shared by every stage.
struct DataOptions {
    RendererOptions renderer;
    int train_pairs = 512;
    int eval_pairs = 128;
    Index steps = 16;
    double p_stay = 0.8;
};

struct StageConfig {
    int stage = 1;
    ModalityId mediator;
    ModalityId partner;
    int categories = 8;
    double overlap = 0.0;  // fraction of stage 1's categories reused
    StageHyper hyper;      // seed is derived, never read from the document
};

/// Everything a run depends on. Seeds of every random stream derive from `seed`.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "runs/default";
    ModelConfig model;  // seed is derived
    DataOptions data;
    std::vector<StageConfig> stages;

    /// Model settings with the derived model seed filled in.
    ModelConfig model_config() const;
    const StageConfig& stage(int index) const;
    std::vector<int> stage_indices() const;

    std::string dataset_path(int stage) const;
    std::string checkpoint_path(int stage) const;
    std::string metrics_path() const;

    /// Canonical JSON; parse_run_config(to_json()) reproduces the config.
    std::string to_json() const;
    /// Hash of the canonical document without the output directory.
    std::uint64_t hash() const;
};

/// The JSON schema every config document is checked against.
const std::string& run_config_schema();

/// Schema violations of `document`, each "field.path: problem". Empty when valid.
std::vector<std::string> schema_errors(const std::string& document);

/// Schema check, then cross-field checks (unique contiguous stage indices,
/// one mediator, category budget). Throws ConfigError on the first problem.
RunConfig parse_run_config(const std::string& document);
RunConfig load_run_config(const std::string& path);

/// Three stages (A,B), (A,C), (A,D) with mediator A and library defaults.
RunConfig default_run_config(std::uint64_t seed = 0);

/// Parses "1,3" or "1-3"; empty selects every stage of the config.
std::vector<int> parse_stage_selection(const std::string& text, const RunConfig& config);

StageSpec stage_spec(const RunConfig& config, int stage);
StageDataset make_stage_dataset(const RunConfig& config, int stage);
StagePlan stage_plan(const RunConfig& config, int stage);

/// Writes one dataset file per selected stage and returns their paths.
std::vector<std::string> generate_datasets(const RunConfig& config, const std::vector<int>& stages);

struct TrainOutcome {
    std::vector<std::string> checkpoints;
    std::string metrics_path;
};

/// Runs the selected stages in order, saving one checkpoint per stage and a
/// metrics CSV. A stage whose predecessor is not selected resumes from the
/// predecessor's checkpoint on disk. Every dataset is checked to exist first.
TrainOutcome train_stages(const RunConfig& config, const std::vector<int>& stages);

/// Metric names accepted by evaluate_checkpoint.
const std::vector<std::string>& eval_metric_names();

struct EvalOutcome {
    EvalReport report;
    std::map<std::string, std::string> activation_csv;  // keyed by stage
};

/// Requested metrics on the eval split of every stage the checkpoint has
/// trained. An unknown name throws ConfigError listing the valid ones.
EvalOutcome evaluate_checkpoint(const Checkpoint& model, const RunConfig& config,
                                const std::vector<std::string>& metrics);

}  // namespace comet
