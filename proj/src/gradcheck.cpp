#include "comet/gradcheck.hpp"

#include "comet/cmoe_adapter.hpp"
#include "comet/encoders.hpp"
#include "comet/ewc.hpp"
#include "comet/objectives.hpp"
#include "comet/pmr.hpp"
#include "comet/quantizer.hpp"
#include "comet/rng.hpp"
#include "comet/trainer.hpp"

#include <cstdio>
#include <memory>
#include <random>
#include <sstream>

namespace comet {

namespace {

// Small enough for finite differences over every coordinate.
ModelDims tiny_dims() {
    ModelDims d;
    d.raw_dim = 5;
    d.sem_dim = 3;
    d.spec_dim = 2;
    d.hidden = 4;
    d.context_dim = 3;
    d.q_hidden = 3;
    d.experts = 2;
    d.k_steps = 2;
    return d;
}

Matrix randn(Rng& rng, Index rows, Index cols, double scale = 1.0) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * n01(rng);
    return m;
}

// Weighted sum of every entry, so each output element reaches the gradient.
ad::Var probe(const ad::Var& v, const Matrix& weights) {
    return ad::sum(ad::hadamard(v, v.tape().constant(weights)));
}

GradCheckInstance recurrent_instance(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "grad.rnn"));
    const Index batch = 2, steps = 4;
    ParamSet theta;
    init_recurrent(theta, "rnn", {3, 3}, seed);
    theta.set("input.z", randn(rng, steps * batch, 3));
    const Matrix w = randn(rng, steps * batch, 3);
    return GradCheckInstance::from_taped(theta, [w](ParamBinding& p) {
        return probe(ad::recurrent_summarize(p, "rnn", p["input.z"], 2), w);
    });
}

GradCheckInstance attention_instance(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "grad.attention"));
    ParamSet theta;
    theta.set("input.query", randn(rng, 4, 3));
    theta.set("input.key_value", randn(rng, 5, 3));
    const Matrix w = randn(rng, 4, 3);
    return GradCheckInstance::from_taped(theta, [w](ParamBinding& p) {
        return probe(ad::cross_attention(p["input.query"], p["input.key_value"]), w);
    });
}

GradCheckInstance encode_instance(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "grad.encode"));
    const ModelDims dims = tiny_dims();
    ParamSet theta;
    ModalityEncoder::init(theta, "A", dims, seed);
    const Matrix x = randn(rng, 4, dims.raw_dim);
    const Matrix w = randn(rng, 4, dims.spec_dim);
    return GradCheckInstance::from_taped(theta, [x, w](ParamBinding& p) {
        auto [h, zbar] = ad::encode(p, "A", p.tape().constant(x));
        return ad::add(ad::sum(ad::square(h)), probe(zbar, w));
    });
}

GradCheckInstance decode_instance(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "grad.decode"));
    const ModelDims dims = tiny_dims();
    ParamSet theta;
    ModalityEncoder::init(theta, "A", dims, seed);
    theta.set("input.codes", randn(rng, 4, dims.sem_dim));
    theta.set("input.specific", randn(rng, 4, dims.spec_dim));
    const Matrix x = randn(rng, 4, dims.raw_dim);
    return GradCheckInstance::from_taped(theta, [x](ParamBinding& p) {
        ad::Var recon = ad::decode(p, "A", p["input.codes"], p["input.specific"]);
        return ad::recon_loss(recon, p.tape().constant(x));
    });
}

GradCheckInstance adapter_instance(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "grad.adapter"));
    const ModelDims dims = tiny_dims();
    ParamSet theta;
    init_adapter(theta, dims, seed);
    ensure_modality(theta, dims, "A", seed);
    ensure_modality(theta, dims, "B", seed);
    theta.set("input.h", randn(rng, 6, dims.sem_dim));
    const Matrix w = randn(rng, 6, dims.sem_dim);
    const AdapterLayout layout = AdapterLayout::from(dims);
    return GradCheckInstance::from_taped(theta, [w, layout](ParamBinding& p) {
        ad::AdapterVars out = ad::adapter_forward(p, "A", p["input.h"], layout);
        return ad::add(probe(out.z, w), ad::gate_load_loss(out.gates));
    });
}

GradCheckInstance commitment_instance(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "grad.commit"));
    ParamSet theta;
    theta.set("input.z", randn(rng, 5, 3));
    const Matrix codes = randn(rng, 6, 3);
    const Matrix selected = quantize(theta.at("input.z"), codes).codes;
    const double beta = 0.25 + std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    return GradCheckInstance::from_taped(theta, [selected, beta](ParamBinding& p) {
        return ad::commitment_loss(p["input.z"], selected, beta);
    });
}

GradCheckInstance club_instance(std::uint64_t seed, bool aux) {
    Rng rng(derive_seed(seed, aux ? "grad.club_aux" : "grad.club"));
    const ModelDims dims = tiny_dims();
    ParamSet theta;
    VariationalNet::init(theta, "A", dims, seed);
    theta.set("input.z", randn(rng, 6, dims.sem_dim));
    theta.set("input.zbar", randn(rng, 6, dims.spec_dim));
    return GradCheckInstance::from_taped(theta, [aux](ParamBinding& p) {
        return aux ? ad::club_aux_nll(p, "A", p["input.z"], p["input.zbar"])
                   : ad::club_upper_bound(p, "A", p["input.z"], p["input.zbar"]);
    });
}

GradCheckInstance info_nce_instance(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "grad.info_nce"));
    ParamSet theta;
    theta.set("input.logits", randn(rng, 4, 5, 2.0));
    IndexList positives(4);
    std::uniform_int_distribution<Index> pick(0, 4);
    for (auto& p : positives) p = pick(rng);
    return GradCheckInstance::from_taped(theta, [positives](ParamBinding& p) {
        return ad::mean(ad::info_nce_rows(p["input.logits"], positives));
    });
}

GradCheckInstance cpc_instance(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "grad.cpc"));
    const ModelDims dims = tiny_dims();
    const Index batch = 3, steps = 5;
    ParamSet theta;
    CpcHead::init(theta, "A", dims, seed);
    CpcHead::init(theta, "B", dims, seed);
    theta.set("input.z_a", randn(rng, steps * batch, dims.sem_dim));
    theta.set("input.z_b", randn(rng, steps * batch, dims.sem_dim));
    return GradCheckInstance::from_taped(theta, [](ParamBinding& p) {
        ad::CpcOptions options;
        options.batch = 3;
        options.k_steps = 2;
        ad::Var za = p["input.z_a"];
        ad::Var zb = p["input.z_b"];
        ad::Var ca = ad::recurrent_summarize(p, CpcHead::prefix("A") + ".rnn", za, 3);
        ad::Var cb = ad::recurrent_summarize(p, CpcHead::prefix("B") + ".rnn", zb, 3);
        return ad::add(ad::mean(ad::cpc_direction(p, "A", ca, zb, options)),
                       ad::mean(ad::cpc_direction(p, "B", cb, za, options)));
    });
}

GradCheckInstance ewc_instance(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "grad.ewc"));
    ParamSet theta;
    theta.set("adapter.expert0.common.weight", randn(rng, 3, 3));
    theta.set("adapter.expert0.common.bias", randn(rng, 1, 3));
    FisherSnapshot snap;
    for (const auto& [path, value] : theta) {
        snap.fisher[path] = randn(rng, value.rows(), value.cols()).cwiseAbs();
        snap.anchor[path] = value + randn(rng, value.rows(), value.cols(), 0.5);
    }
    snap.lambda = 1.0 + 10.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    return GradCheckInstance::from_taped(theta, [snap](ParamBinding& p) { return ad::ewc_loss(p, snap); });
}

GradCheckInstance pmr_instance(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "grad.pmr"));
    const ModelDims dims = tiny_dims();
    const Index batch = 3, steps = 5;
    ParamSet theta;
    CpcHead::init(theta, kPseudoModality, dims, seed);
    CpcHead::init(theta, "A", dims, seed);
    CpcHead::init(theta, "C", dims, seed);
    theta.set("input.z_a", randn(rng, steps * batch, dims.sem_dim));
    theta.set("input.z_c", randn(rng, steps * batch, dims.sem_dim));
    PseudoBatch pseudo;
    pseudo.batch = batch;
    pseudo.embeddings = randn(rng, steps * batch, dims.sem_dim);
    pseudo.weights = Matrix::Ones(steps, batch);
    std::bernoulli_distribution fresh(0.3);
    for (Index i = 0; i < pseudo.weights.size(); ++i) {
        if (fresh(rng)) pseudo.weights.data()[i] = kNewCodeWeight;
    }
    return GradCheckInstance::from_taped(theta, [pseudo](ParamBinding& p) {
        ad::Var za = p["input.z_a"];
        ad::Var zc = p["input.z_c"];
        ad::Var ca = ad::recurrent_summarize(p, CpcHead::prefix("A") + ".rnn", za, 3);
        ad::Var cc = ad::recurrent_summarize(p, CpcHead::prefix("C") + ".rnn", zc, 3);
        return ad::mean(ad::pmr_cpc_rows(p, pseudo, "A", za, ca, "C", zc, cc, 2));
    });
}

// Weights that keep only `term` of the trainer objective.
LossWeights only(const std::string& term) {
    LossWeights w{0, 0, 0, 0, 0, 0, 0, 0};
    std::map<std::string, double*> slot = {{"recon", &w.recon}, {"commit", &w.commit}, {"cpc", &w.cpc},
                                           {"mi", &w.mi},       {"gate", &w.gate},     {"pmr", &w.pmr},
                                           {"ewc", &w.ewc}};
    *slot.at(term) = 1.0;
    return w;
}

// Stage-2 state with a teacher, pseudo replay and an EWC snapshot, checked
// one objective term at a time. The replay terms carry weights near e^-6, so
// inside the full sum their gradients would sit below its rounding floor.
GradCheckInstance trainer_instance(std::uint64_t seed, const std::string& term) {
    ModelConfig config;
    config.dims = tiny_dims();
    config.codebook_size = 6;
    config.code_init_scale = 0.5;
    config.weights = only(term);
    config.seed = seed;
    Checkpoint state = init_checkpoint(config, "A");
    for (const char* m : {"A", "B", "C"}) ensure_modality_params(state, m);
    Expansion e = expand(state.codebook, 3, derive_seed(seed, "grad.expand"));
    state.codebook = std::move(e.codebook);
    state.teacher = std::move(e.teacher);
    state.stage = 1;
    for (const auto& path : state.params.paths_with_prefix("cpc.")) {
        if (path.find(".rnn.") != std::string::npos && path.ends_with(".weight")) state.params.at(path) *= 3.0;
    }

    Rng rng(derive_seed(seed, "grad.trainer"));
    FisherSnapshot snap;
    for (const auto& path : select_scope(state.params, AdapterLayout::from(config.dims), {"A", "B"})) {
        const Matrix& value = state.params.at(path);
        snap.fisher[path] = randn(rng, value.rows(), value.cols()).cwiseAbs();
        snap.anchor[path] = value + randn(rng, value.rows(), value.cols(), 0.1);
    }
    snap.lambda = 10.0;
    snap.stage = 1;
    state.fisher.push_back(snap);

    RendererOptions ro;
    ro.raw_dim = config.dims.raw_dim;
    ro.nuisance_dim = 2;
    ro.total_categories = 8;
    RendererBank bank(ro, seed, "A");
    StageSpec spec;
    spec.stage = 2;
    spec.mediator = "A";
    spec.partner = "C";
    spec.categories = CategoryPlan{4, 8, {0}};
    spec.train_pairs = 3;
    spec.eval_pairs = 1;
    spec.steps = 5;
    auto data = std::make_shared<StageDataset>(generate_stage_dataset(spec, bank, seed));

    StageContext context;
    context.stage = 2;
    context.mediator = "A";
    context.partner = "C";
    context.hyper.k_steps = 2;
    context.hyper.beta = 0.5;

    GradCheckInstance out;
    out.theta = state.params;
    auto shared = std::make_shared<Checkpoint>(std::move(state));
    auto batch = [data] {
        std::vector<const SequencePair*> b;
        for (const auto& p : data->train) b.push_back(&p);
        return b;
    };
    auto anchor = std::make_shared<ParamSet>(out.theta);
    out.value = [shared, context, batch, anchor](const ParamSet& theta) {
        Checkpoint s = *shared;
        s.params = theta;
        return batch_objective(s, context, batch(), nullptr, anchor.get());
    };
    out.gradient = [shared, context, batch](const ParamSet& theta) {
        Checkpoint s = *shared;
        s.params = theta;
        ParamSet g;
        batch_objective(s, context, batch(), &g);
        return g;
    };
    return out;
}

}  // namespace

GradCheckInstance GradCheckInstance::from_taped(ParamSet theta, TapedObjective objective) {
    GradCheckInstance out;
    out.theta = std::move(theta);
    out.value = [objective](const ParamSet& p) {
        ad::Tape tape;
        ParamBinding bound(tape, p, false);
        return ad::scalar(objective(bound));
    };
    out.gradient = [objective](const ParamSet& p) {
        ad::Tape tape;
        ParamBinding bound(tape, p, true);
        ad::Var loss = objective(bound);
        tape.backward(loss);
        ParamSet g = p.zeros_like();
        bound.accumulate_gradients(g);
        return g;
    };
    return out;
}

const std::vector<GradCheck>& gradient_checks() {
    static const std::vector<GradCheck> checks = {
        {"numerics", "recurrent_summarize", recurrent_instance},
        {"numerics", "cross_attention", attention_instance},
        {"encoders", "encode", encode_instance},
        {"encoders", "decode_recon", decode_instance},
        {"cmoe_adapter", "adapter_and_gate_loss", adapter_instance},
        {"quantizer", "commitment_loss", commitment_instance},
        {"objectives", "club_upper_bound", [](std::uint64_t s) { return club_instance(s, false); }},
        {"objectives", "club_aux_nll", [](std::uint64_t s) { return club_instance(s, true); }},
        {"objectives", "info_nce", info_nce_instance},
        {"objectives", "cross_cpc", cpc_instance},
        {"ewc", "ewc_loss", ewc_instance},
        {"pmr", "pmr_cpc_loss", pmr_instance},
        {"trainer", "stage2_recon", [](std::uint64_t s) { return trainer_instance(s, "recon"); }},
        {"trainer", "stage2_commit", [](std::uint64_t s) { return trainer_instance(s, "commit"); }},
        {"trainer", "stage2_cpc", [](std::uint64_t s) { return trainer_instance(s, "cpc"); }},
        {"trainer", "stage2_mi", [](std::uint64_t s) { return trainer_instance(s, "mi"); }},
        {"trainer", "stage2_gate", [](std::uint64_t s) { return trainer_instance(s, "gate"); }},
        {"trainer", "stage2_pmr", [](std::uint64_t s) { return trainer_instance(s, "pmr"); }},
        {"trainer", "stage2_ewc", [](std::uint64_t s) { return trainer_instance(s, "ewc"); }},
    };
    return checks;
}

GradCheck with_flipped_sign(const GradCheck& check) {
    GradCheck out = check;
    out.name = check.name + "[sign-flipped]";
    auto make = check.make;
    out.make = [make](std::uint64_t seed) {
        GradCheckInstance inst = make(seed);
        auto gradient = inst.gradient;
        inst.gradient = [gradient](const ParamSet& theta) {
            ParamSet g = gradient(theta);
            for (auto& [path, value] : g) value = -value;
            return g;
        };
        return inst;
    };
    return out;
}

bool matches_filter(const GradCheck& check, const std::string& filter) {
    if (filter.empty()) return true;
    std::stringstream list(filter);
    std::string item;
    while (std::getline(list, item, ',')) {
        if (item == check.module || item == check.module + "." + check.name) return true;
    }
    return false;
}

std::vector<GradCheckResult> run_gradient_checks(const std::vector<GradCheck>& checks, const GradCheckOptions& options) {
    if (options.instances < 1) throw ValueError("gradient check needs at least one instance");
    std::vector<GradCheckResult> results;
    for (const auto& check : checks) {
        if (!matches_filter(check, options.filter)) continue;
        GradCheckResult r;
        r.module = check.module;
        r.name = check.name;
        for (int i = 0; i < options.instances; ++i) {
            GradCheckInstance inst = check.make(
                derive_seed(derive_seed(options.seed, check.module + "." + check.name), static_cast<std::uint64_t>(i)));
            const ParamSet analytic = inst.gradient(inst.theta);
            const ParamSet numeric = finite_difference_gradient(inst.value, inst.theta, options.step);
            GradientComparison c = compare_gradients(analytic, numeric);
            if (i == 0 || c.max_relative_error > r.worst.max_relative_error) r.worst = c;
            ++r.instances;
        }
        r.passed = r.worst.max_relative_error <= options.tolerance;
        results.push_back(std::move(r));
    }
    return results;
}

std::string format_grad_table(const std::vector<GradCheckResult>& results, double tolerance) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-14s %-26s %9s %12s  %s\n", "module", "check", "instances", "max_rel_err",
                  "result");
    out << line;
    for (const auto& r : results) {
        std::snprintf(line, sizeof line, "%-14s %-26s %9d %12.3e  %s\n", r.module.c_str(), r.name.c_str(), r.instances,
                      r.worst.max_relative_error, r.passed ? "PASS" : "FAIL");
        out << line;
    }
    std::snprintf(line, sizeof line, "tolerance %.1e relative\n", tolerance);
    out << line;
    return out.str();
}

}  // namespace comet
