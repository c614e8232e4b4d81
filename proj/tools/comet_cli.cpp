#include "comet/config.hpp"
#include "comet/gradcheck.hpp"
#include "comet/io.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

struct Overrides {
    std::string config;
    std::string stages;
    std::string ablate;
    std::string out;
    std::uint64_t seed = 0;
    bool has_seed = false;
    bool has_ablate = false;
};

// Precedence for the output directory: --out, then COMET_OUT, then the config.
comet::RunConfig resolve(const Overrides& o) {
    comet::RunConfig c = o.config.empty() ? comet::default_run_config() : comet::load_run_config(o.config);
    if (o.has_seed) c.seed = o.seed;
    if (o.has_ablate) {
        try {
            c.model.ablation = comet::Ablation::parse(o.ablate);
        } catch (const comet::ValueError& e) {
            throw comet::ConfigError(std::string("--ablate: ") + e.what());
        }
    }
    if (const char* env = std::getenv("COMET_OUT"); env && *env) c.out_dir = env;
    if (!o.out.empty()) c.out_dir = o.out;
    return c;
}

std::vector<std::string> split(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void add_run_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "run configuration (JSON); built-in defaults when omitted");
    cmd->add_option("--stages", o.stages, "stage selection such as 1, 1,3 or 1-3");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&o](const std::uint64_t& s) { o.seed = s, o.has_seed = true; }, "global seed");
    cmd->add_option_function<std::string>(
        "--ablate", [&o](const std::string& a) { o.ablate = a, o.has_ablate = true; },
        "components to disable: pm, moe, gate, ewc, sl (comma-separated)");
}

int gen_data(const Overrides& o) {
    const comet::RunConfig c = resolve(o);
    for (const auto& path : comet::generate_datasets(c, comet::parse_stage_selection(o.stages, c))) {
        std::cout << path << "\n";
    }
    return kOk;
}

int train(const Overrides& o) {
    const comet::RunConfig c = resolve(o);
    const comet::TrainOutcome t = comet::train_stages(c, comet::parse_stage_selection(o.stages, c));
    for (const auto& path : t.checkpoints) std::cout << path << "\n";
    std::cout << t.metrics_path << "\n";
    return kOk;
}

std::string default_checkpoint(const comet::RunConfig& c) { return c.checkpoint_path(c.stages.back().stage); }

int eval(const Overrides& o, std::string checkpoint, const std::optional<std::string>& metrics) {
    const comet::RunConfig c = resolve(o);
    if (checkpoint.empty()) checkpoint = default_checkpoint(c);
    const comet::Checkpoint model = comet::load_checkpoint(checkpoint);
    const std::vector<std::string> names =
        metrics ? split(*metrics) : std::vector<std::string>(comet::eval_metric_names());
    const comet::EvalOutcome r = comet::evaluate_checkpoint(model, c, names);
    std::filesystem::create_directories(c.out_dir);
    const std::string stem = "eval_stage" + std::to_string(model.stage);
    const std::string json = r.report.to_json();
    comet::io::write_file_atomic((std::filesystem::path(c.out_dir) / (stem + ".json")).string(), json);
    for (const auto& [key, csv] : r.activation_csv) {
        comet::io::write_file_atomic(
            (std::filesystem::path(c.out_dir) / (stem + "_activation_" + key + ".csv")).string(), csv);
    }
    std::cout << json << "\n";
    return kOk;
}

int stats(const Overrides& o, std::string checkpoint) {
    const comet::RunConfig c = resolve(o);
    if (checkpoint.empty()) checkpoint = default_checkpoint(c);
    const comet::Checkpoint model = comet::load_checkpoint(checkpoint);
    const comet::EvalOutcome r = comet::evaluate_checkpoint(model, c, {"activation"});
    std::filesystem::create_directories(c.out_dir);
    const std::string path =
        (std::filesystem::path(c.out_dir) / ("activation_stage" + std::to_string(model.stage) + ".csv")).string();
    comet::io::write_file_atomic(path, r.activation_csv.at("all"));
    for (const auto& [name, value] : r.report.metrics) std::cout << name << " " << value << "\n";
    std::cout << path << "\n";
    return kOk;
}

int grad_check(const comet::GradCheckOptions& options) {
    const auto results = comet::run_gradient_checks(comet::gradient_checks(), options);
    if (results.empty()) throw comet::ConfigError("--filter: no registered check matches '" + options.filter + "'");
    std::cout << comet::format_grad_table(results, options.tolerance);
    for (const auto& r : results) {
        if (!r.passed) return kValidation;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Staged multimodal discrete-representation training on synthetic data"};
    app.require_subcommand(1);
    Overrides o;

    auto* gen = app.add_subcommand("gen-data", "write one dataset file per stage");
    add_run_flags(gen, o);

    auto* tr = app.add_subcommand("train", "train the selected stages and write checkpoints and metrics.csv");
    add_run_flags(tr, o);

    std::string checkpoint;
    std::optional<std::string> metrics;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on every stage it has trained");
    add_run_flags(ev, o);
    ev->add_option("--checkpoint", checkpoint, "checkpoint file; the last stage's by default");
    ev->add_option_function<std::string>(
        "--metrics", [&metrics](const std::string& m) { metrics = m; },
        "comma-separated: agreement, transfer, recall, activation (all by default)");

    auto* st = app.add_subcommand("stats", "export per-code activation classes as CSV");
    add_run_flags(st, o);
    st->add_option("--checkpoint", checkpoint, "checkpoint file; the last stage's by default");

    comet::GradCheckOptions gc;
    auto* grad = app.add_subcommand("grad-check", "compare analytic gradients with finite differences");
    grad->add_option("--config", o.config, "accepted for symmetry; checks use fixed small shapes");
    grad->add_option("--filter", gc.filter, "module or module.check names, comma-separated");
    grad->add_option("--instances", gc.instances, "random instances per check")->check(CLI::PositiveNumber);
    grad->add_option("--tolerance", gc.tolerance, "maximum relative error");
    grad->add_option("--seed", gc.seed, "seed of the random instances");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (*gen) return gen_data(o);
        if (*tr) return train(o);
        if (*ev) return eval(o, checkpoint, metrics);
        if (*st) return stats(o, checkpoint);
        if (*grad) {
            if (!o.config.empty()) comet::load_run_config(o.config);
            return grad_check(gc);
        }
    } catch (const comet::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
    return kOk;
}
