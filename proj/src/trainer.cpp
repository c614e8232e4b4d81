#include "comet/trainer.hpp"

#include "comet/encoders.hpp"
#include "comet/numerics.hpp"
#include "comet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace comet {

Ablation Ablation::parse(const std::string& disabled) {
    Ablation a;
    std::stringstream in(disabled);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        if (item == "pm" || item == "pmr") a.pseudo_replay = false;
        else if (item == "moe") a.mixture = false;
        else if (item == "gate") a.gate_loss = false;
        else if (item == "ewc") a.ewc = false;
        else if (item == "sl") a.specific_layers = false;
        else throw ValueError("unknown ablation '" + item + "' (valid: pm, moe, gate, ewc, sl)");
    }
    return a;
}

std::string Ablation::disabled() const {
    std::vector<std::string> parts;
    if (!pseudo_replay) parts.push_back("pm");
    if (!mixture) parts.push_back("moe");
    if (!gate_loss) parts.push_back("gate");
    if (!ewc) parts.push_back("ewc");
    if (!specific_layers) parts.push_back("sl");
    std::string out;
    for (const auto& p : parts) out += (out.empty() ? "" : ",") + p;
    return out;
}

ModelDims ModelConfig::effective_dims() const {
    ModelDims d = dims;
    if (!ablation.mixture) d.experts = 1;
    if (!ablation.specific_layers) d.specific_layers = false;
    return d;
}

bool ModelConfig::operator==(const ModelConfig& o) const {
    const LossWeights& a = weights;
    const LossWeights& b = o.weights;
    return dims == o.dims && codebook_size == o.codebook_size && code_init_scale == o.code_init_scale &&
           dead_threshold == o.dead_threshold && ablation == o.ablation && fisher_samples == o.fisher_samples &&
           seed == o.seed && a.recon == b.recon && a.commit == b.commit && a.cpc == b.cpc && a.cmcm == b.cmcm &&
           a.mi == b.mi && a.gate == b.gate && a.pmr == b.pmr && a.ewc == b.ewc;
}

bool Checkpoint::has_modality(const ModalityId& m) const {
    return std::find(modalities.begin(), modalities.end(), m) != modalities.end();
}

bool Checkpoint::operator==(const Checkpoint& o) const {
    const bool teachers = teacher.has_value() == o.teacher.has_value() &&
                          (!teacher || same_matrix(teacher->codes(), o.teacher->codes()));
    return stage == o.stage && config == o.config && mediator == o.mediator && modalities == o.modalities &&
           params == o.params && club == o.club && codebook == o.codebook && teachers && fisher == o.fisher &&
           adam_main == o.adam_main && adam_club == o.adam_club && config_hash == o.config_hash;
}

Checkpoint init_checkpoint(const ModelConfig& config, const ModalityId& mediator) {
    if (mediator.empty()) throw ValueError("mediator modality must be named");
    if (config.codebook_size < 1) throw ValueError("codebook size must be positive");
    if (mediator == kPseudoModality) throw ValueError("modality name '" + mediator + "' is reserved");
    const ModelDims dims = config.effective_dims();
    Checkpoint c;
    c.config = config;
    c.mediator = mediator;
    init_adapter(c.params, dims, config.seed);
    CpcHead::init(c.params, kPseudoModality, dims, config.seed);
    c.codebook = UnifiedCodebook::random(config.codebook_size, dims.sem_dim, 0.99, config.seed, config.code_init_scale,
                                         1.0, config.dead_threshold);
    return c;
}

void ensure_modality_params(Checkpoint& state, const ModalityId& modality) {
    if (modality == kPseudoModality) throw ValueError("modality name '" + modality + "' is reserved");
    const ModelDims dims = state.config.effective_dims();
    const std::uint64_t seed = state.config.seed;
    if (!state.params.contains("enc." + modality + ".decoder.weight")) {
        ModalityEncoder::init(state.params, modality, dims, seed);
        CpcHead::init(state.params, modality, dims, seed);
        VariationalNet::init(state.club, modality, dims, seed);
    }
    ensure_modality(state.params, dims, modality, seed);
    if (!state.has_modality(modality)) state.modalities.push_back(modality);
}

namespace {

Matrix stack_time_major(const std::vector<const SequencePair*>& batch, bool mediator) {
    const Index b_count = static_cast<Index>(batch.size());
    const Matrix& first = mediator ? batch.front()->mediator.matrix() : batch.front()->partner.matrix();
    Matrix out(first.rows() * b_count, first.cols());
    for (Index b = 0; b < b_count; ++b) {
        const Matrix& x = mediator ? batch[static_cast<std::size_t>(b)]->mediator.matrix()
                                   : batch[static_cast<std::size_t>(b)]->partner.matrix();
        require_dims(x.rows() == first.rows() && x.cols() == first.cols(), "batch sequences differ in shape");
        for (Index t = 0; t < x.rows(); ++t) out.row(t * b_count + b) = x.row(t);
    }
    return out;
}

Matrix sequence_rows(const Matrix& time_major, Index batch, Index b) {
    const Index steps = time_major.rows() / batch;
    Matrix out(steps, time_major.cols());
    for (Index t = 0; t < steps; ++t) out.row(t) = time_major.row(t * batch + b);
    return out;
}

IndexList sequence_indices(const IndexList& time_major, Index batch, Index b) {
    const Index steps = static_cast<Index>(time_major.size()) / batch;
    IndexList out(static_cast<std::size_t>(steps));
    for (Index t = 0; t < steps; ++t) out[static_cast<std::size_t>(t)] = time_major[static_cast<std::size_t>(t * batch + b)];
    return out;
}

struct Branch {
    ad::Var z;
    ad::Var zbar;
    ad::Var gates;
    ad::Var contexts;
    Quantized quantized;
};

struct Forward {
    std::map<std::string, ad::Var> rows;  // per-sequence, B x 1
    ad::Var gate;
    ad::Var aux;
    Branch mediator;
    Branch partner;
    double teacher_fraction = 0.0;
    bool pmr_active = false;
};

// Averages each sequence's rows: (B x TB) * (TB x 1).
ad::Var per_sequence(ad::Tape& tape, const ad::Var& row_values, Index batch) {
    const Index total = row_values.rows();
    const Index steps = total / batch;
    Matrix s = Matrix::Zero(batch, total);
    for (Index t = 0; t < steps; ++t) {
        for (Index b = 0; b < batch; ++b) s(b, t * batch + b) = 1.0 / static_cast<double>(steps);
    }
    return ad::matmul(tape.constant(std::move(s)), row_values);
}

Forward forward(ad::Tape& tape, ParamBinding& main, ParamBinding& q_fixed, ParamBinding* q_train,
                const Checkpoint& state, const StageContext& context, const Matrix& x_med, const Matrix& x_par,
                Index batch, const std::map<ModalityId, Matrix>* anchor_z = nullptr) {
    const ModelDims dims = state.config.effective_dims();
    const AdapterLayout layout = AdapterLayout::from(dims);
    const std::string rnn = ".rnn";
    Forward f;

    std::map<std::string, std::vector<ad::Var>> parts;
    auto branch = [&](const ModalityId& m, const Matrix& x) {
        Branch br;
        ad::Var xv = tape.constant(x);
        auto [h, zbar] = ad::encode(main, m, xv);
        auto adapted = ad::adapter_forward(main, m, h, layout);
        br.z = adapted.z;
        br.zbar = zbar;
        br.gates = adapted.gates;
        ad::Var zq;
        if (anchor_z) {
            // Assignment and offset frozen at the anchor: a smooth stand-in
            // whose gradient there equals the straight-through estimate.
            const Matrix& z0 = anchor_z->at(m);
            br.quantized = quantize(z0, state.codebook.codes);
            zq = ad::add(br.z, tape.constant(br.quantized.codes - z0));
        } else {
            br.quantized = quantize(br.z.value(), state.codebook.codes);
            zq = ad::straight_through(br.z, br.quantized.codes);
        }
        ad::Var recon = ad::decode(main, m, zq, zbar);
        ad::Var residual = ad::row_sum(ad::square(ad::sub(recon, xv)));
        parts["recon"].push_back(
            ad::scale(per_sequence(tape, residual, batch), 1.0 / static_cast<double>(x.cols())));
        ad::Var commit = ad::row_sum(ad::square(ad::sub(br.z, tape.constant(br.quantized.codes))));
        parts["commit"].push_back(ad::scale(per_sequence(tape, commit, batch), context.hyper.beta));
        parts["mi"].push_back(per_sequence(tape, ad::club_rows(q_fixed, m, br.z, zbar), batch));
        br.contexts = ad::recurrent_summarize(main, CpcHead::prefix(m) + rnn, br.z, batch);
        if (q_train) {
            parts["aux"].push_back(
                ad::club_aux_nll(*q_train, m, ad::stop_gradient(br.z), ad::stop_gradient(zbar)));
        }
        return br;
    };
    f.mediator = branch(context.mediator, x_med);
    f.partner = branch(context.partner, x_par);

    ad::CpcOptions cpc;
    cpc.batch = batch;
    cpc.k_steps = context.hyper.k_steps;
    f.rows["cpc"] = ad::add(ad::cpc_direction(main, context.mediator, f.mediator.contexts, f.partner.z, cpc),
                            ad::cpc_direction(main, context.partner, f.partner.contexts, f.mediator.z, cpc));
    for (const std::string name : {"recon", "commit", "mi"}) f.rows[name] = ad::add_n(parts[name]);
    if (q_train) f.aux = ad::add_n(parts["aux"]);
    f.gate = ad::gate_load_loss(ad::concat_rows({f.mediator.gates, f.partner.gates}));

    f.pmr_active = context.stage >= 2 && state.teacher.has_value() && state.config.ablation.pseudo_replay;
    if (f.pmr_active) {
        const Matrix& zm = anchor_z ? anchor_z->at(context.mediator) : f.mediator.z.value();
        std::vector<PseudoSequence> pseudo;
        pseudo.reserve(static_cast<std::size_t>(batch));
        for (Index b = 0; b < batch; ++b) {
            pseudo.push_back(build_pseudo_sequence(sequence_rows(zm, batch, b), *state.teacher, state.codebook));
        }
        const PseudoBatch stacked = stack_pseudo(pseudo);
        f.teacher_fraction = stacked.teacher_fraction;
        f.rows["pmr"] = ad::pmr_cpc_rows(main, stacked, context.mediator, f.mediator.z, f.mediator.contexts,
                                         context.partner, f.partner.z, f.partner.contexts, context.hyper.k_steps);
    }
    return f;
}

void validate_context(const Checkpoint& state, const StageContext& context, std::size_t batch) {
    if (batch < 2) throw ValueError("train_step needs at least 2 pairs per batch");
    if (context.mediator != state.mediator) throw ValueError("stage mediator differs from the run's mediator");
    if (context.partner == context.mediator) throw ValueError("partner modality equals the mediator");
    const ModelDims dims = state.config.effective_dims();
    if (context.hyper.k_steps < 1 || context.hyper.k_steps > dims.k_steps) {
        throw ValueError("k_steps must lie in [1, " + std::to_string(dims.k_steps) + "]");
    }
}

// Weighted main objective of a forward pass and its unweighted breakdown.
struct Objective {
    ad::Var total;
    std::map<std::string, double> losses;
};

Objective assemble(const Forward& f, const Checkpoint& state, ParamBinding& main) {
    const LossWeights& w = state.config.weights;
    Objective out;
    std::vector<ad::Var> weighted;
    auto add_term = [&](const std::string& name, const ad::Var& value, double weight) {
        const double v = ad::scalar(value);
        if (!std::isfinite(v)) throw ValueError("non-finite loss component: " + name);
        out.losses[name] = v;
        if (weight != 0.0) weighted.push_back(ad::scale(value, weight));
    };
    add_term("recon", ad::mean(f.rows.at("recon")), w.recon);
    add_term("commit", ad::mean(f.rows.at("commit")), w.commit);
    add_term("cpc", ad::mean(f.rows.at("cpc")), w.cpc);
    add_term("mi", ad::mean(f.rows.at("mi")), w.mi);
    add_term("gate", f.gate, state.config.ablation.gate_loss ? w.gate : 0.0);
    if (f.pmr_active) {
        add_term("pmr", ad::mean(f.rows.at("pmr")), w.pmr);
    } else {
        out.losses["pmr"] = 0.0;
    }
    if (state.config.ablation.ewc && !state.fisher.empty()) {
        add_term("ewc", ad::ewc_loss(main, state.fisher), w.ewc);
    } else {
        out.losses["ewc"] = 0.0;
    }
    out.total = weighted.empty() ? ad::scale(f.gate, 0.0) : ad::add_n(weighted);
    return out;
}

}  // namespace

StepResult train_step(Checkpoint& state, const StageContext& context, const std::vector<const SequencePair*>& batch) {
    validate_context(state, context, batch.size());
    const Index b = static_cast<Index>(batch.size());
    const Matrix x_med = stack_time_major(batch, true);
    const Matrix x_par = stack_time_major(batch, false);

    ad::Tape tape;
    ParamBinding main(tape, state.params, true);
    ParamBinding q_fixed(tape, state.club, false);
    ParamBinding q_train(tape, state.club, true);
    Forward f = forward(tape, main, q_fixed, &q_train, state, context, x_med, x_par, b);
    Objective objective = assemble(f, state, main);

    StepResult result;
    result.losses = objective.losses;
    const double aux = ad::scalar(f.aux);
    if (!std::isfinite(aux)) throw ValueError("non-finite loss component: club_aux");
    result.teacher_fraction = f.teacher_fraction;

    const ad::Var& main_loss = objective.total;
    result.total = ad::scalar(main_loss);
    // The variational net sees z and zbar only through stop_gradient, and the
    // main loss sees the net only as constants, so one sweep serves both.
    tape.backward(ad::add(main_loss, f.aux));
    state.adam_main.apply(state.params, main.gradients(), context.hyper.lr);
    state.adam_club.apply(state.club, q_train.gradients(), context.hyper.lr);

    const Matrix& zm = f.mediator.z.value();
    const Matrix& zp = f.partner.z.value();
    Matrix r_par(zm.rows(), zm.cols());
    Matrix r_med(zp.rows(), zp.cols());
    Matrix zm_seq(zm.rows(), zm.cols());
    Matrix zp_seq(zp.rows(), zp.cols());
    IndexList im, ip;
    const Index steps = zm.rows() / b;
    for (Index s = 0; s < b; ++s) {
        const Matrix a = sequence_rows(zm, b, s);
        const Matrix c = sequence_rows(zp, b, s);
        zm_seq.middleRows(s * steps, steps) = a;
        zp_seq.middleRows(s * steps, steps) = c;
        r_par.middleRows(s * steps, steps) = cross_attention(a, c);
        r_med.middleRows(s * steps, steps) = cross_attention(c, a);
        const IndexList ia = sequence_indices(f.mediator.quantized.indices, b, s);
        const IndexList ic = sequence_indices(f.partner.quantized.indices, b, s);
        im.insert(im.end(), ia.begin(), ia.end());
        ip.insert(ip.end(), ic.begin(), ic.end());
    }
    mm_ema_update(state.codebook, zm_seq, im, r_par, zp_seq, ip, r_med);
    return result;
}

double batch_objective(const Checkpoint& state, const StageContext& context,
                       const std::vector<const SequencePair*>& batch, ParamSet* gradient,
                       const ParamSet* straight_through_anchor) {
    validate_context(state, context, batch.size());
    const Index b = static_cast<Index>(batch.size());
    const Matrix x_med = stack_time_major(batch, true);
    const Matrix x_par = stack_time_major(batch, false);
    std::map<ModalityId, Matrix> anchor_z;
    if (straight_through_anchor) {
        ad::Tape anchor_tape;
        ParamBinding anchor(anchor_tape, *straight_through_anchor, false);
        ParamBinding q_anchor(anchor_tape, state.club, false);
        Forward f0 = forward(anchor_tape, anchor, q_anchor, nullptr, state, context, x_med, x_par, b);
        anchor_z[context.mediator] = f0.mediator.z.value();
        anchor_z[context.partner] = f0.partner.z.value();
    }
    ad::Tape tape;
    ParamBinding main(tape, state.params, gradient != nullptr);
    ParamBinding q_fixed(tape, state.club, false);
    Forward f = forward(tape, main, q_fixed, nullptr, state, context, x_med, x_par, b,
                        straight_through_anchor ? &anchor_z : nullptr);
    Objective objective = assemble(f, state, main);
    if (gradient) {
        tape.backward(objective.total);
        *gradient = state.params.zeros_like();
        main.accumulate_gradients(*gradient);
    }
    return ad::scalar(objective.total);
}

FisherSnapshot stage_fisher(const Checkpoint& state, const StageContext& context, const StageDataset& data) {
    validate_context(state, context, 2);
    const std::size_t n = std::min(state.config.fisher_samples, data.train.size());
    if (n == 0) throw ValueError("estimate_fisher: empty sample");
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(context.hyper.seed, "fisher.sample"));
    std::shuffle(order.begin(), order.end(), rng);

    const ModelDims dims = state.config.effective_dims();
    std::vector<ModalityId> seen = state.modalities;
    const std::vector<std::string> scope = select_scope(state.params, AdapterLayout::from(dims), seen);
    const LossWeights& w = state.config.weights;

    // Examples are scored in groups of `batch`: one forward per group, then
    // one backward per example seeded with that example's loss row.
    const Index group = std::max<Index>(2, context.hyper.batch);
    std::vector<ParamSet> per_example(n);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(group)) {
        std::size_t stop = std::min(n, start + static_cast<std::size_t>(group));
        std::size_t lo = start;
        if (stop - lo < 2) lo = stop - 2;  // keep at least one negative per candidate set
        std::vector<const SequencePair*> batch;
        for (std::size_t i = lo; i < stop; ++i) batch.push_back(&data.train[order[i]]);
        const Index b = static_cast<Index>(batch.size());

        ad::Tape tape;
        ParamBinding main(tape, state.params, true);
        ParamBinding q_fixed(tape, state.club, false);
        Forward f = forward(tape, main, q_fixed, nullptr, state, context, stack_time_major(batch, true),
                            stack_time_major(batch, false), b);
        std::vector<ad::Var> terms{ad::scale(f.rows.at("recon"), w.recon), ad::scale(f.rows.at("commit"), w.commit),
                                   ad::scale(f.rows.at("cpc"), w.cpc), ad::scale(f.rows.at("mi"), w.mi)};
        if (f.pmr_active) terms.push_back(ad::scale(f.rows.at("pmr"), w.pmr));
        // Sequence score: per-timestep means scaled back to sums over the sequence.
        const double steps = static_cast<double>(batch.front()->mediator.steps());
        ad::Var rows = ad::scale(ad::add_n(terms), steps);
        for (std::size_t i = start; i < stop; ++i) {
            Matrix seed = Matrix::Zero(b, 1);
            seed(static_cast<Index>(i - lo), 0) = 1.0;
            tape.backward(rows, seed);
            ParamSet g;
            const ParamSet all = main.gradients();
            for (const auto& path : scope) {
                if (all.contains(path)) g.set(path, all.at(path));
            }
            per_example[i] = std::move(g);
        }
    }
    FisherSnapshot snap = estimate_fisher(state.params, scope, n, [&](std::size_t i) { return per_example[i]; },
                                          context.hyper.lambda);
    snap.stage = context.stage;
    return snap;
}

std::string metrics_header() {
    return "stage,epoch,step,loss_recon,loss_commit,loss_cpc,loss_mi,loss_gate,loss_pmr,loss_ewc,teacher_fraction";
}

std::string metrics_line(const MetricsRow& row) {
    std::string out = std::to_string(row.stage) + "," + std::to_string(row.epoch) + "," + std::to_string(row.step);
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), ",%.17g", v);
        out += buf;
    };
    for (const char* name : {"recon", "commit", "cpc", "mi", "gate", "pmr", "ewc"}) put(row.result.losses.at(name));
    put(row.result.teacher_fraction);
    return out;
}

Checkpoint run_stage(const StagePlan& plan, const std::optional<Checkpoint>& previous, const ModelConfig& config,
                     const DatasetLoader& loader, const MetricsSink& sink) {
    if (plan.stage >= 2 && !previous) {
        throw ValueError("stage " + std::to_string(plan.stage) + " needs the previous stage's checkpoint");
    }
    return run_stage(plan, previous, config, loader(plan.dataset), sink);
}

Checkpoint run_stage(const StagePlan& plan, const std::optional<Checkpoint>& previous, const ModelConfig& config,
                     const StageDataset& data, const MetricsSink& sink) {
    if (plan.stage < 1) throw ValueError("stage indices start at 1");
    if (plan.stage >= 2 && !previous) {
        throw ValueError("stage " + std::to_string(plan.stage) + " needs the previous stage's checkpoint");
    }
    if (data.mediator != plan.mediator || data.partner != plan.partner) {
        throw ValueError("dataset modalities (" + data.mediator + ", " + data.partner + ") do not match the plan (" +
                         plan.mediator + ", " + plan.partner + ")");
    }
    if (plan.hyper.epochs < 0) throw ValueError("epochs must be nonnegative");
    if (plan.hyper.batch < 2) throw ValueError("batch size must be at least 2");

    Checkpoint state;
    if (previous) {
        if (previous->mediator != plan.mediator) throw ValueError("mediator modality changed between stages");
        if (previous->stage >= plan.stage) throw ValueError("previous checkpoint is not from an earlier stage");
        if (!(previous->config == config)) throw ValueError("model config differs from the previous stage's");
        state = *previous;
    } else {
        state = init_checkpoint(config, plan.mediator);
    }

    if (plan.stage >= 2 && config.ablation.pseudo_replay) {
        Expansion e = expand(state.codebook, plan.hyper.added_codes, derive_seed(plan.hyper.seed, "expand"));
        state.codebook = std::move(e.codebook);
        state.teacher = std::move(e.teacher);
    }
    state.codebook.gamma = plan.hyper.gamma;
    state.codebook.validate();
    ensure_modality_params(state, plan.mediator);
    ensure_modality_params(state, plan.partner);
    state.adam_main = AdamState{};
    state.adam_club = AdamState{};

    StageContext context{plan.stage, plan.mediator, plan.partner, plan.hyper};
    const std::size_t n = data.train.size();
    const std::size_t bsz = static_cast<std::size_t>(plan.hyper.batch);
    std::vector<std::size_t> order(n);
    std::int64_t step = 0;
    for (int epoch = 0; epoch < plan.hyper.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(plan.hyper.seed, static_cast<std::uint64_t>(plan.stage), static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start + 2 <= n; start += bsz) {
            std::vector<const SequencePair*> batch;
            for (std::size_t i = start; i < std::min(n, start + bsz); ++i) batch.push_back(&data.train[order[i]]);
            StepResult r = train_step(state, context, batch);
            if (sink) sink({plan.stage, epoch, step, r});
            ++step;
        }
    }
    state.fisher.push_back(stage_fisher(state, context, data));
    state.stage = plan.stage;
    return state;
}

}  // namespace comet
