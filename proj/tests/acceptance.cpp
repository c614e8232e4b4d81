// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "comet/cmoe_adapter.hpp"
#include "comet/config.hpp"
#include "comet/evalsuite.hpp"
#include "comet/ewc.hpp"
#include "comet/gradcheck.hpp"
#include "comet/io.hpp"
#include "comet/objectives.hpp"
#include "comet/quantizer.hpp"
#include "comet/rng.hpp"
#include "comet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace comet;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::setprecision(precision) << v;
    return s.str();
}

// Datasets and trained checkpoints of one seed, built on first use.
class SeedRuns {
public:
    explicit SeedRuns(std::uint64_t seed) : config_(default_run_config(seed)) {}

    const RunConfig& config() const { return config_; }

    const StageDataset& data(int stage) {
        auto it = data_.find(stage);
        if (it == data_.end()) it = data_.emplace(stage, make_stage_dataset(config_, stage)).first;
        return it->second;
    }

    // Stage 1 is identical for the full model and the pm/ewc ablations,
    // which is checked by criterion 5 before it is relied on.
    const Checkpoint& stage1() {
        if (!stage1_) stage1_ = run_stage(stage_plan(config_, 1), std::nullopt, config_.model_config(), data(1));
        return *stage1_;
    }

    const Checkpoint& trained(int stage, const std::string& disabled) {
        const auto key = std::make_pair(stage, disabled);
        auto it = trained_.find(key);
        if (it != trained_.end()) return it->second;
        const RunConfig c = with_ablation(disabled);
        Checkpoint previous = stage == 2 ? relabeled(stage1(), c) : trained(stage - 1, disabled);
        return trained_[key] = run_stage(stage_plan(c, stage), previous, c.model_config(), data(stage));
    }

    RunConfig with_ablation(const std::string& disabled) const {
        RunConfig c = config_;
        c.model.ablation = Ablation::parse(disabled);
        return c;
    }

private:
    static Checkpoint relabeled(Checkpoint c, const RunConfig& config) {
        c.config = config.model_config();
        return c;
    }

    RunConfig config_;
    std::map<int, StageDataset> data_;
    std::optional<Checkpoint> stage1_;
    std::map<std::pair<int, std::string>, Checkpoint> trained_;
};

SeedRuns& runs(std::uint64_t seed) {
    static std::map<std::uint64_t, std::unique_ptr<SeedRuns>> all;
    auto& slot = all[seed];
    if (!slot) slot = std::make_unique<SeedRuns>(seed);
    return *slot;
}

const std::vector<std::uint64_t> kSeeds = {0, 1, 2, 3};

double untrained_agreement(const RunConfig& config, const StageDataset& data) {
    Checkpoint m = init_checkpoint(config.model_config(), data.mediator);
    ensure_modality_params(m, data.mediator);
    ensure_modality_params(m, data.partner);
    return code_agreement(m, data.mediator, data.partner, data.eval);
}

Outcome equation_oracles() {
    std::vector<std::pair<std::string, double>> errors;
    auto check = [&](const std::string& name, double got, double want) {
        errors.emplace_back(name, std::abs(got - want));
    };

    check("gate_load_loss uniform", gate_load_loss(Matrix::Constant(3, 4, 0.25)), 0.0);
    check("gate_load_loss one-sided", gate_load_loss((Matrix(2, 2) << 1, 0, 1, 0).finished()), 1.0);
    check("gate_load_loss 3:1", gate_load_loss((Matrix(4, 2) << 0.75, 0.25, 0.75, 0.25, 0.75, 0.25, 0.75, 0.25).finished()),
          0.25);

    FisherSnapshot snapshot;
    snapshot.fisher["w"] = Matrix::Constant(1, 1, 3.0);
    snapshot.anchor["w"] = Matrix::Zero(1, 1);
    snapshot.lambda = 2.0;
    ParamSet theta;
    theta.set("w", Matrix::Constant(1, 1, 2.0));
    check("ewc_loss", ewc_loss(theta, snapshot), 12.0);

    UnifiedCodebook cb = UnifiedCodebook::from_codes(Matrix::Constant(1, 1, 2.0), 0.5, 2.0);
    const Matrix two = Matrix::Constant(1, 1, 2.0);
    mm_ema_update(cb, two, {0}, two, two, {0}, two);
    check("mm_ema_update N", cb.counts(0), 2.0);
    check("mm_ema_update o", cb.volumes(0, 0), 4.0);
    check("mm_ema_update e", cb.codes(0, 0), 2.0);

    check("club estimator", club_estimate((Matrix(2, 2) << -1, -3, -3, -1).finished()), 1.0);

    check("cross-cpc uniform", cross_cpc_loss(Vector::Zero(2), {Matrix::Ones(3, 2)}, {Matrix::Ones(4, 3)}, {2}),
          std::log(4.0));
    check("cross-cpc confident", cross_cpc_loss(Vector::Ones(1), {Matrix::Ones(1, 1)},
                                                {(Matrix(4, 1) << 10, 0, 0, 0).finished()}, {0}),
          std::log1p(3.0 * std::exp(-10.0)));

    Outcome o{true, ""};
    double worst = 0.0;
    for (const auto& [name, err] : errors) {
        worst = std::max(worst, err);
        if (!(err <= 1e-9)) {
            o.passed = false;
            o.detail += name + " off by " + fmt(err) + "; ";
        }
    }
    o.detail += std::to_string(errors.size()) + " values, worst abs error " + fmt(worst);
    return o;
}

Outcome gradient_suite() {
    GradCheckOptions options;
    options.instances = 20;
    const auto results = run_gradient_checks(gradient_checks(), options);
    Outcome o{!results.empty(), ""};
    double worst = 0.0;
    std::string worst_name;
    int failed = 0;
    for (const auto& r : results) {
        if (r.worst.max_relative_error > worst) {
            worst = r.worst.max_relative_error;
            worst_name = r.module + "." + r.name;
        }
        if (!r.passed || r.instances < 20) {
            o.passed = false;
            ++failed;
        }
    }
    o.detail = std::to_string(results.size()) + " checks x 20 instances, " + std::to_string(failed) +
               " failed, worst " + fmt(worst) + " (" + worst_name + ")";
    return o;
}

Outcome codebook_contracts() {
    std::vector<std::string> problems;

    const UnifiedCodebook previous = UnifiedCodebook::random(16, 4, 0.99, 3, 0.25);
    const Expansion e = expand(previous, 8, 4);
    if (!(e.codebook.codes.topRows(16).array() == previous.codes.array()).all() || e.codebook.frozen_prefix != 16)
        problems.push_back("expand changed the prefix");

    UnifiedCodebook cb = UnifiedCodebook::random(8, 3, 0.9, 11, 0.5);
    Rng rng(12);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_int_distribution<Index> pick(0, cb.size() - 1);
    std::uniform_int_distribution<Index> rows(1, 6);
    auto random_matrix = [&](Index r) {
        Matrix m(r, cb.dim());
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
        return m;
    };
    for (int call = 0; call < 1000; ++call) {
        const Index na = rows(rng);
        const Index nb = rows(rng);
        IndexList ia, ib;
        for (Index i = 0; i < na; ++i) ia.push_back(pick(rng));
        for (Index i = 0; i < nb; ++i) ib.push_back(pick(rng));
        mm_ema_update(cb, random_matrix(na), ia, random_matrix(na), random_matrix(nb), ib, random_matrix(nb));
    }
    double ema_error = 0.0;
    for (Index i = 0; i < cb.size(); ++i) {
        if (cb.counts(i) > cb.dead_threshold)
            ema_error = std::max(ema_error, (cb.codes.row(i) - cb.volumes.row(i) / cb.counts(i)).cwiseAbs().maxCoeff());
    }
    if (!(ema_error <= 1e-9)) problems.push_back("EMA ratio off by " + fmt(ema_error));

    SeedRuns& r = runs(0);
    const Checkpoint& s1 = r.stage1();
    const Checkpoint& s2 = r.trained(2, "");
    if (!s2.teacher || s2.teacher->codes() != s1.codebook.codes ||
        s2.teacher->fingerprint() != TeacherSnapshot(s1.codebook).fingerprint())
        problems.push_back("teacher changed during stage 2");
    if (s2.codebook.codes.topRows(s1.codebook.size()) == s1.codebook.codes)
        problems.push_back("live prefix never trained, so teacher immutability is untested");

    Outcome o{problems.empty(), ""};
    for (const auto& p : problems) o.detail += p + "; ";
    o.detail += "prefix bit-exact, max |e - o/N| after 1000 updates " + fmt(ema_error) +
                ", teacher unchanged after a trained stage 2";
    return o;
}

Outcome stage1_alignment() {
    Outcome o{true, ""};
    for (std::uint64_t seed : kSeeds) {
        SeedRuns& r = runs(seed);
        const double chance = untrained_agreement(r.config(), r.data(1));
        const double trained = code_agreement(r.stage1(), "A", "B", r.data(1).eval);
        const double ratio = trained / chance;
        if (!(ratio >= 5.0)) o.passed = false;
        o.detail += "seed " + std::to_string(seed) + ": " + fmt(trained) + " vs chance " + fmt(chance) + " (x" +
                    fmt(ratio, 3) + ") ";
    }
    return o;
}

Outcome forgetting_ordering() {
    // Stage 1 sharing: pm and ewc are inert before stage 2.
    {
        SeedRuns& r = runs(0);
        const RunConfig ablated = r.with_ablation("pm,ewc");
        const Checkpoint own = run_stage(stage_plan(ablated, 1), std::nullopt, ablated.model_config(), r.data(1));
        const Checkpoint& shared = r.stage1();
        if (own.params != shared.params || own.club != shared.club || !(own.codebook == shared.codebook) ||
            own.fisher != shared.fisher)
            return {false, "stage 1 differs under the pm,ewc ablation"};
    }
    Outcome o{false, ""};
    int holds = 0;
    for (std::uint64_t seed : kSeeds) {
        SeedRuns& r = runs(seed);
        const auto& eval = r.data(1).eval;
        const double before = code_agreement(r.stage1(), "A", "B", eval);
        auto forget = [&](const std::string& disabled) {
            return forgetting(before, code_agreement(r.trained(2, disabled), "A", "B", eval));
        };
        const double full = forget("");
        const double no_ewc = forget("ewc");
        const double no_pm = forget("pm");
        const bool ordered = full <= no_ewc && no_ewc <= no_pm;
        const bool retained = 1.0 - full >= 0.8;
        if (ordered && retained) ++holds;
        o.detail += "seed " + std::to_string(seed) + ": forgetting full " + fmt(full, 3) + ", no-ewc " +
                    fmt(no_ewc, 3) + ", no-pm " + fmt(no_pm, 3) + (ordered ? " ordered" : " unordered") +
                    (retained ? "" : ", full retains " + fmt(1.0 - full, 3)) + "; ";
    }
    o.passed = holds >= 3;
    o.detail += std::to_string(holds) + "/4 seeds hold";
    return o;
}

// Codes shared by at least two modalities on the eval split of every stage.
std::string shared_codes(const Checkpoint& model, SeedRuns& r, double& fraction) {
    std::map<ModalityId, std::vector<FeatureSequence>> sets;
    for (int s = 1; s <= model.stage; ++s) {
        for (const auto& p : r.data(s).eval) {
            sets[r.data(s).mediator].push_back(p.mediator);
            sets[r.data(s).partner].push_back(p.partner);
        }
    }
    const ActivationReport report = export_code_activation(model, sets);
    fraction = report.shared_fraction();
    return fmt(fraction, 3) + " (" + std::to_string(report.class_counts[2] + report.class_counts[3]) + "/" +
           std::to_string(model.codebook.size()) + ")";
}

Outcome activation_ordering() {
    Outcome o{true, ""};
    for (std::uint64_t seed : {0, 1}) {
        SeedRuns& r = runs(seed);
        double full = 0.0;
        double ablated = 0.0;
        const std::string full_text = shared_codes(r.trained(3, ""), r, full);
        const std::string ablated_text = shared_codes(r.trained(3, "pm,ewc"), r, ablated);
        if (!(full > ablated)) o.passed = false;
        o.detail += "seed " + std::to_string(seed) + ": shared fraction full " + full_text + " vs no-pm/no-ewc " +
                    ablated_text + " ";
    }
    return o;
}

Outcome expert_count() {
    Outcome o{true, ""};
    for (std::uint64_t seed : {0, 1, 2}) {
        SeedRuns& r = runs(seed);
        const auto& eval = r.data(2).eval;
        const double six = code_agreement(r.trained(2, ""), "A", "C", eval);
        RunConfig single = r.config();
        single.model.dims.experts = 1;
        const Checkpoint s1 = run_stage(stage_plan(single, 1), std::nullopt, single.model_config(), r.data(1));
        const Checkpoint s2 = run_stage(stage_plan(single, 2), s1, single.model_config(), r.data(2));
        const double one = code_agreement(s2, "A", "C", eval);
        if (!(six >= one)) o.passed = false;
        o.detail += "seed " + std::to_string(seed) + ": O=6 " + fmt(six, 3) + " vs O=1 " + fmt(one, 3) + " ";
    }
    return o;
}

Outcome zero_shot() {
    RunConfig c = default_run_config(0);
    c.data.renderer.noise = 0.0;
    const StageDataset data = make_stage_dataset(c, 1);
    const Checkpoint model = run_stage(stage_plan(c, 1), std::nullopt, c.model_config(), data);
    const double accuracy =
        zero_shot_transfer(labeled_codes(model, "A", data.train, true), labeled_codes(model, "B", data.eval, false));
    const double chance = 1.0 / c.stage(1).categories;
    return {accuracy >= 3.0 * chance,
            "A->B accuracy " + fmt(accuracy) + " vs 3 x chance " + fmt(3.0 * chance)};
}

Outcome reproducibility() {
    const auto root = std::filesystem::temp_directory_path() / "comet_acceptance";
    std::filesystem::remove_all(root);
    std::vector<RunConfig> configs;
    for (const char* name : {"first", "second"}) {
        RunConfig c = default_run_config(5);
        c.out_dir = (root / name).string();
        generate_datasets(c, c.stage_indices());
        train_stages(c, c.stage_indices());
        configs.push_back(c);
    }
    std::vector<std::string> differing;
    std::vector<std::pair<std::string, std::string>> files;
    for (int s : configs[0].stage_indices())
        files.emplace_back(configs[0].checkpoint_path(s), configs[1].checkpoint_path(s));
    files.emplace_back(configs[0].metrics_path(), configs[1].metrics_path());
    for (const auto& [a, b] : files) {
        if (io::read_file(a) != io::read_file(b)) differing.push_back(std::filesystem::path(a).filename().string());
    }
    const std::size_t rows = [&] {
        const std::string csv = io::read_file(configs[0].metrics_path());
        return static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n'));
    }();
    std::filesystem::remove_all(root);
    Outcome o{differing.empty() && rows > 1, ""};
    for (const auto& f : differing) o.detail += f + " differs; ";
    o.detail += std::to_string(files.size()) + " files compared byte for byte, metrics rows " + std::to_string(rows - 1);
    return o;
}

}  // namespace

// Optional arguments select criteria by number; none runs all.
int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"equation oracles", equation_oracles},
        {"gradient suite", gradient_suite},
        {"codebook contracts", codebook_contracts},
        {"stage-1 alignment", stage1_alignment},
        {"forgetting ordering", forgetting_ordering},
        {"activation-class ordering", activation_ordering},
        {"expert-count sanity", expert_count},
        {"zero-shot transfer", zero_shot},
        {"reproducibility", reproducibility},
    };
    std::vector<std::size_t> selected;
    for (int a = 1; a < argc; ++a) selected.push_back(static_cast<std::size_t>(std::stoul(argv[a])) - 1);
    if (selected.empty()) {
        for (std::size_t i = 0; i < criteria.size(); ++i) selected.push_back(i);
    }
    int failed = 0;
    for (std::size_t i : selected) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!o.passed) ++failed;
        std::cout << "criterion " << i + 1 << " " << (o.passed ? "PASS" : "FAIL") << " " << criteria[i].first
                  << ": " << o.detail << " [" << fmt(seconds, 3) << "s]" << std::endl;
    }
    std::cout << (selected.size() - static_cast<std::size_t>(failed)) << "/" << selected.size() << " criteria passed"
              << std::endl;
    return failed == 0 ? 0 : 1;
}
