#include "comet/config.hpp"

#include "comet/io.hpp"
#include "comet/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <sstream>

namespace comet {

using nlohmann::json;

namespace {

const char* kSchema = R"json({
  "$schema": "http://json-schema.org/draft-07/schema#",
  "title": "RunConfig",
  "type": "object",
  "additionalProperties": false,
  "required": ["stages"],
  "properties": {
    "seed": {"type": "integer", "minimum": 0},
    "out_dir": {"type": "string", "minLength": 1},
    "model": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "sem_dim": {"type": "integer", "minimum": 1},
        "spec_dim": {"type": "integer", "minimum": 1},
        "hidden": {"type": "integer", "minimum": 1},
        "context_dim": {"type": "integer", "minimum": 1},
        "q_hidden": {"type": "integer", "minimum": 1},
        "experts": {"type": "integer", "minimum": 1},
        "k_steps": {"type": "integer", "minimum": 1},
        "codebook_size": {"type": "integer", "minimum": 1},
        "code_init_scale": {"type": "number", "exclusiveMinimum": 0},
        "dead_threshold": {"type": "number", "minimum": 0},
        "fisher_samples": {"type": "integer", "minimum": 1},
        "ablate": {"type": "array", "items": {"enum": ["pm", "moe", "gate", "ewc", "sl"]}},
        "weights": {
          "type": "object",
          "additionalProperties": false,
          "properties": {
            "recon": {"type": "number", "minimum": 0},
            "commit": {"type": "number", "minimum": 0},
            "cpc": {"type": "number", "minimum": 0},
            "cmcm": {"type": "number", "minimum": 0},
            "mi": {"type": "number", "minimum": 0},
            "gate": {"type": "number", "minimum": 0},
            "pmr": {"type": "number", "minimum": 0},
            "ewc": {"type": "number", "minimum": 0}
          }
        }
      }
    },
    "data": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "raw_dim": {"type": "integer", "minimum": 1},
        "nuisance_dim": {"type": "integer", "minimum": 0},
        "nuisance_scale": {"type": "number", "minimum": 0},
        "noise": {"type": "number", "minimum": 0},
        "total_categories": {"type": "integer", "minimum": 1},
        "train_pairs": {"type": "integer", "minimum": 2},
        "eval_pairs": {"type": "integer", "minimum": 1},
        "steps": {"type": "integer", "minimum": 2},
        "p_stay": {"type": "number", "minimum": 0, "maximum": 1}
      }
    },
    "defaults": {"$ref": "#/definitions/hyper"},
    "stages": {
      "type": "array",
      "minItems": 1,
      "items": {
        "type": "object",
        "additionalProperties": false,
        "required": ["stage", "mediator", "partner"],
        "properties": {
          "stage": {"type": "integer", "minimum": 1},
          "mediator": {"type": "string", "minLength": 1},
          "partner": {"type": "string", "minLength": 1},
          "categories": {"type": "integer", "minimum": 1},
          "overlap": {"type": "number", "minimum": 0, "maximum": 1},
          "hyper": {"$ref": "#/definitions/hyper"}
        }
      }
    }
  },
  "definitions": {
    "hyper": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "epochs": {"type": "integer", "minimum": 0},
        "added_codes": {"type": "integer", "minimum": 0},
        "lr": {"type": "number", "minimum": 0},
        "lambda": {"type": "number", "minimum": 0},
        "gamma": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "beta": {"type": "number", "minimum": 0},
        "k_steps": {"type": "integer", "minimum": 1},
        "batch": {"type": "integer", "minimum": 2}
      }
    }
  }
})json";

const json& schema_document() {
    static const json doc = json::parse(kSchema);
    return doc;
}

std::string type_name(const json& v) {
    if (v.is_number_integer()) return "integer";
    if (v.is_number()) return "number";
    return v.type_name();
}

bool has_type(const json& v, const std::string& type) {
    if (type == "object") return v.is_object();
    if (type == "array") return v.is_array();
    if (type == "string") return v.is_string();
    if (type == "integer") return v.is_number_integer();
    if (type == "number") return v.is_number();
    if (type == "boolean") return v.is_boolean();
    return false;
}

std::string child(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Draft-07 subset: type, enum, bounds, minLength, required, properties,
// additionalProperties=false, items, minItems and local $ref.
void check(const json& v, const json& s, const std::string& path, std::vector<std::string>& errors) {
    const std::string where = path.empty() ? "(root)" : path;
    if (s.contains("$ref")) {
        const std::string ref = s.at("$ref").get<std::string>();
        const std::string prefix = "#/definitions/";
        check(v, schema_document().at("definitions").at(ref.substr(prefix.size())), path, errors);
        return;
    }
    if (s.contains("type") && !has_type(v, s.at("type").get<std::string>())) {
        errors.push_back(where + ": expected " + s.at("type").get<std::string>() + ", got " + type_name(v));
        return;
    }
    if (s.contains("enum")) {
        const auto& options = s.at("enum");
        if (std::find(options.begin(), options.end(), v) == options.end()) {
            errors.push_back(where + ": must be one of " + options.dump());
        }
    }
    if (v.is_number()) {
        const double x = v.get<double>();
        if (s.contains("minimum") && x < s.at("minimum").get<double>()) {
            errors.push_back(where + ": must be >= " + s.at("minimum").dump());
        }
        if (s.contains("maximum") && x > s.at("maximum").get<double>()) {
            errors.push_back(where + ": must be <= " + s.at("maximum").dump());
        }
        if (s.contains("exclusiveMinimum") && x <= s.at("exclusiveMinimum").get<double>()) {
            errors.push_back(where + ": must be > " + s.at("exclusiveMinimum").dump());
        }
    }
    if (v.is_string() && s.contains("minLength") &&
        v.get<std::string>().size() < s.at("minLength").get<std::size_t>()) {
        errors.push_back(where + ": must not be empty");
    }
    if (v.is_object()) {
        if (s.contains("required")) {
            for (const auto& key : s.at("required")) {
                if (!v.contains(key.get<std::string>())) {
                    errors.push_back(child(path, key.get<std::string>()) + ": required field missing");
                }
            }
        }
        const json props = s.value("properties", json::object());
        for (const auto& [key, value] : v.items()) {
            if (props.contains(key)) {
                check(value, props.at(key), child(path, key), errors);
            } else if (s.contains("additionalProperties") && !s.at("additionalProperties").get<bool>()) {
                errors.push_back(child(path, key) + ": unknown key");
            }
        }
    }
    if (v.is_array()) {
        if (s.contains("minItems") && v.size() < s.at("minItems").get<std::size_t>()) {
            errors.push_back(where + ": needs at least " + s.at("minItems").dump() + " item(s)");
        }
        if (s.contains("items")) {
            for (std::size_t i = 0; i < v.size(); ++i) {
                check(v[i], s.at("items"), path + "[" + std::to_string(i) + "]", errors);
            }
        }
    }
}

void read_hyper(const json& j, StageHyper& h) {
    h.epochs = j.value("epochs", h.epochs);
    h.added_codes = j.value("added_codes", h.added_codes);
    h.lr = j.value("lr", h.lr);
    h.lambda = j.value("lambda", h.lambda);
    h.gamma = j.value("gamma", h.gamma);
    h.beta = j.value("beta", h.beta);
    h.k_steps = j.value("k_steps", h.k_steps);
    h.batch = j.value("batch", h.batch);
}

json hyper_json(const StageHyper& h) {
    return {{"epochs", h.epochs}, {"added_codes", h.added_codes}, {"lr", h.lr},       {"lambda", h.lambda},
            {"gamma", h.gamma},   {"beta", h.beta},               {"k_steps", h.k_steps}, {"batch", h.batch}};
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void cross_checks(const RunConfig& c) {
    std::set<int> seen;
    for (std::size_t i = 0; i < c.stages.size(); ++i) {
        const StageConfig& s = c.stages[i];
        const std::string at = "stages[" + std::to_string(i) + "]";
        if (!seen.insert(s.stage).second) {
            throw ConfigError(at + ".stage: duplicate stage index " + std::to_string(s.stage));
        }
        if (s.mediator == s.partner) throw ConfigError(at + ".partner: must differ from the mediator");
        if (s.mediator != c.stages.front().mediator) {
            throw ConfigError(at + ".mediator: every stage must share the mediator '" + c.stages.front().mediator +
                              "'");
        }
        if (s.hyper.k_steps > c.model.dims.k_steps) {
            throw ConfigError(at + ".hyper.k_steps: exceeds model.k_steps (" + std::to_string(c.model.dims.k_steps) +
                              ")");
        }
        if (s.hyper.k_steps >= c.data.steps) throw ConfigError(at + ".hyper.k_steps: must be below data.steps");
        if (s.hyper.batch > c.data.train_pairs) throw ConfigError(at + ".hyper.batch: exceeds data.train_pairs");
        if (s.partner == kPseudoModality || s.mediator == kPseudoModality) {
            throw ConfigError(at + ": modality name '" + kPseudoModality + "' is reserved");
        }
    }
    for (int k = 1; k <= static_cast<int>(c.stages.size()); ++k) {
        if (!seen.count(k)) throw ConfigError("stages: stage indices must run 1.." + std::to_string(c.stages.size()));
    }
    for (std::size_t i = 1; i < c.stages.size(); ++i) {
        if (c.stages[i].stage < c.stages[i - 1].stage) throw ConfigError("stages: must be listed in stage order");
    }
    std::vector<int> counts;
    std::vector<double> overlaps;
    for (const auto& s : c.stages) {
        counts.push_back(s.categories);
        overlaps.push_back(s.overlap);
    }
    const auto plans = plan_categories(counts, overlaps);
    if (plans.back().hi > c.data.renderer.total_categories) {
        throw ConfigError("data.total_categories: stages need " + std::to_string(plans.back().hi) + " categories");
    }
}

}  // namespace

const std::string& run_config_schema() {
    static const std::string text = schema_document().dump(2);
    return text;
}

std::vector<std::string> schema_errors(const std::string& document) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::parse_error& e) {
        return {std::string("(root): not valid JSON: ") + e.what()};
    }
    std::vector<std::string> errors;
    check(doc, schema_document(), "", errors);
    return errors;
}

RunConfig parse_run_config(const std::string& document) {
    const auto errors = schema_errors(document);
    if (!errors.empty()) throw ConfigError(errors.front());
    const json j = json::parse(document);

    RunConfig c;
    c.seed = j.value("seed", std::uint64_t{0});
    c.out_dir = j.value("out_dir", c.out_dir);

    const json m = j.value("model", json::object());
    ModelDims& d = c.model.dims;
    d.sem_dim = m.value("sem_dim", d.sem_dim);
    d.spec_dim = m.value("spec_dim", d.spec_dim);
    d.hidden = m.value("hidden", d.hidden);
    d.context_dim = m.value("context_dim", d.context_dim);
    d.q_hidden = m.value("q_hidden", d.q_hidden);
    d.experts = m.value("experts", d.experts);
    d.k_steps = m.value("k_steps", d.k_steps);
    c.model.codebook_size = m.value("codebook_size", c.model.codebook_size);
    c.model.code_init_scale = m.value("code_init_scale", c.model.code_init_scale);
    c.model.dead_threshold = m.value("dead_threshold", c.model.dead_threshold);
    c.model.fisher_samples = m.value("fisher_samples", c.model.fisher_samples);
    if (m.contains("ablate")) {
        std::string disabled;
        for (const auto& a : m.at("ablate")) disabled += (disabled.empty() ? "" : ",") + a.get<std::string>();
        c.model.ablation = Ablation::parse(disabled);
    }
    const json w = m.value("weights", json::object());
    LossWeights& lw = c.model.weights;
    lw.recon = w.value("recon", lw.recon);
    lw.commit = w.value("commit", lw.commit);
    lw.cpc = w.value("cpc", lw.cpc);
    lw.cmcm = w.value("cmcm", lw.cmcm);
    lw.mi = w.value("mi", lw.mi);
    lw.gate = w.value("gate", lw.gate);
    lw.pmr = w.value("pmr", lw.pmr);
    lw.ewc = w.value("ewc", lw.ewc);

    const json data = j.value("data", json::object());
    RendererOptions& r = c.data.renderer;
    r.raw_dim = data.value("raw_dim", r.raw_dim);
    r.nuisance_dim = data.value("nuisance_dim", r.nuisance_dim);
    r.nuisance_scale = data.value("nuisance_scale", r.nuisance_scale);
    r.noise = data.value("noise", r.noise);
    r.total_categories = data.value("total_categories", r.total_categories);
    c.data.train_pairs = data.value("train_pairs", c.data.train_pairs);
    c.data.eval_pairs = data.value("eval_pairs", c.data.eval_pairs);
    c.data.steps = data.value("steps", c.data.steps);
    c.data.p_stay = data.value("p_stay", c.data.p_stay);
    d.raw_dim = r.raw_dim;

    StageHyper defaults;
    if (j.contains("defaults")) read_hyper(j.at("defaults"), defaults);
    for (const auto& s : j.at("stages")) {
        StageConfig sc;
        sc.stage = s.at("stage").get<int>();
        sc.mediator = s.at("mediator").get<std::string>();
        sc.partner = s.at("partner").get<std::string>();
        sc.categories = s.value("categories", sc.categories);
        sc.overlap = s.value("overlap", sc.overlap);
        sc.hyper = defaults;
        if (s.contains("hyper")) read_hyper(s.at("hyper"), sc.hyper);
        c.stages.push_back(sc);
    }
    cross_checks(c);
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::string text;
    try {
        text = io::read_file(path);
    } catch (const Error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return parse_run_config(text);
}

RunConfig default_run_config(std::uint64_t seed) {
    RunConfig c;
    c.seed = seed;
    c.stages = {{1, "A", "B", 8, 0.0, {}}, {2, "A", "C", 8, 0.25, {}}, {3, "A", "D", 8, 0.25, {}}};
    c.model.dims.raw_dim = c.data.renderer.raw_dim;
    return c;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m = model;
    m.dims.raw_dim = data.renderer.raw_dim;
    m.seed = derive_seed(seed, "model");
    return m;
}

const StageConfig& RunConfig::stage(int index) const {
    for (const auto& s : stages) {
        if (s.stage == index) return s;
    }
    throw ConfigError("stages: no stage " + std::to_string(index) + " in the config");
}

std::vector<int> RunConfig::stage_indices() const {
    std::vector<int> out;
    for (const auto& s : stages) out.push_back(s.stage);
    return out;
}

std::string RunConfig::dataset_path(int stage) const {
    return (std::filesystem::path(out_dir) / ("stage" + std::to_string(stage) + ".dataset")).string();
}

std::string RunConfig::checkpoint_path(int stage) const {
    return (std::filesystem::path(out_dir) / ("stage" + std::to_string(stage) + ".ckpt")).string();
}

std::string RunConfig::metrics_path() const { return (std::filesystem::path(out_dir) / "metrics.csv").string(); }

std::string RunConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    const ModelDims& d = model.dims;
    json ablate = json::array();
    for (const auto& a : split_list(model.ablation.disabled())) ablate.push_back(a);
    const LossWeights& w = model.weights;
    j["model"] = {{"sem_dim", d.sem_dim},
                  {"spec_dim", d.spec_dim},
                  {"hidden", d.hidden},
                  {"context_dim", d.context_dim},
                  {"q_hidden", d.q_hidden},
                  {"experts", d.experts},
                  {"k_steps", d.k_steps},
                  {"codebook_size", model.codebook_size},
                  {"code_init_scale", model.code_init_scale},
                  {"dead_threshold", model.dead_threshold},
                  {"fisher_samples", model.fisher_samples},
                  {"ablate", ablate},
                  {"weights",
                   {{"recon", w.recon},
                    {"commit", w.commit},
                    {"cpc", w.cpc},
                    {"cmcm", w.cmcm},
                    {"mi", w.mi},
                    {"gate", w.gate},
                    {"pmr", w.pmr},
                    {"ewc", w.ewc}}}};
    const RendererOptions& r = data.renderer;
    j["data"] = {{"raw_dim", r.raw_dim},
                 {"nuisance_dim", r.nuisance_dim},
                 {"nuisance_scale", r.nuisance_scale},
                 {"noise", r.noise},
                 {"total_categories", r.total_categories},
                 {"train_pairs", data.train_pairs},
                 {"eval_pairs", data.eval_pairs},
                 {"steps", data.steps},
                 {"p_stay", data.p_stay}};
    j["stages"] = json::array();
    for (const auto& s : stages) {
        j["stages"].push_back({{"stage", s.stage},
                               {"mediator", s.mediator},
                               {"partner", s.partner},
                               {"categories", s.categories},
                               {"overlap", s.overlap},
                               {"hyper", hyper_json(s.hyper)}});
    }
    return j.dump(2);
}

std::uint64_t RunConfig::hash() const {
    json j = json::parse(to_json());
    j.erase("out_dir");
    return fnv1a(j.dump());
}

std::vector<int> parse_stage_selection(const std::string& text, const RunConfig& config) {
    if (text.empty()) return config.stage_indices();
    std::set<int> chosen;
    for (const auto& item : split_list(text)) {
        const auto dash = item.find('-');
        try {
            int lo = std::stoi(item.substr(0, dash));
            int hi = dash == std::string::npos ? lo : std::stoi(item.substr(dash + 1));
            if (lo > hi) throw ConfigError("--stages: empty range '" + item + "'");
            for (int s = lo; s <= hi; ++s) {
                config.stage(s);
                chosen.insert(s);
            }
        } catch (const std::logic_error&) {
            throw ConfigError("--stages: cannot parse '" + item + "'");
        }
    }
    return {chosen.begin(), chosen.end()};
}

StageSpec stage_spec(const RunConfig& config, int stage) {
    std::vector<int> counts;
    std::vector<double> overlaps;
    for (const auto& s : config.stages) {
        counts.push_back(s.categories);
        overlaps.push_back(s.overlap);
    }
    const auto plans = plan_categories(counts, overlaps);
    const StageConfig& s = config.stage(stage);
    StageSpec spec;
    spec.stage = stage;
    spec.mediator = s.mediator;
    spec.partner = s.partner;
    spec.categories = plans[static_cast<std::size_t>(stage - 1)];
    spec.train_pairs = config.data.train_pairs;
    spec.eval_pairs = config.data.eval_pairs;
    spec.steps = config.data.steps;
    spec.p_stay = config.data.p_stay;
    return spec;
}

StageDataset make_stage_dataset(const RunConfig& config, int stage) {
    RendererBank bank(config.data.renderer, derive_seed(config.seed, "world"), config.stages.front().mediator);
    return generate_stage_dataset(stage_spec(config, stage), bank,
                                  derive_seed(derive_seed(config.seed, "data"), static_cast<std::uint64_t>(stage)));
}

StagePlan stage_plan(const RunConfig& config, int stage) {
    const StageConfig& s = config.stage(stage);
    StagePlan plan;
    plan.stage = stage;
    plan.mediator = s.mediator;
    plan.partner = s.partner;
    plan.dataset = config.dataset_path(stage);
    plan.hyper = s.hyper;
    plan.hyper.seed = derive_seed(derive_seed(config.seed, "train"), static_cast<std::uint64_t>(stage));
    return plan;
}

std::vector<std::string> generate_datasets(const RunConfig& config, const std::vector<int>& stages) {
    std::filesystem::create_directories(config.out_dir);
    std::vector<std::string> paths;
    for (int s : stages) {
        save_dataset(make_stage_dataset(config, s), config.dataset_path(s));
        paths.push_back(config.dataset_path(s));
    }
    return paths;
}

TrainOutcome train_stages(const RunConfig& config, const std::vector<int>& stages) {
    for (int s : stages) {
        if (!std::filesystem::exists(config.dataset_path(s))) {
            throw Error("missing dataset for stage " + std::to_string(s) + ": " + config.dataset_path(s));
        }
    }
    const ModelConfig model = config.model_config();
    const std::uint64_t hash = config.hash();
    TrainOutcome out;
    out.metrics_path = config.metrics_path();
    std::string csv = metrics_header() + "\n";
    std::optional<Checkpoint> previous;
    for (int s : stages) {
        if (s >= 2 && (!previous || previous->stage != s - 1)) previous = load_checkpoint(config.checkpoint_path(s - 1));
        Checkpoint c = run_stage(stage_plan(config, s), previous, model, load_dataset,
                                 [&csv](const MetricsRow& row) { csv += metrics_line(row) + "\n"; });
        c.config_hash = hash;
        save_checkpoint(c, config.checkpoint_path(s));
        out.checkpoints.push_back(config.checkpoint_path(s));
        previous = std::move(c);
    }
    io::write_file_atomic(out.metrics_path, csv);
    return out;
}

const std::vector<std::string>& eval_metric_names() {
    static const std::vector<std::string> names = {"agreement", "transfer", "recall", "activation"};
    return names;
}

EvalOutcome evaluate_checkpoint(const Checkpoint& model, const RunConfig& config,
                                const std::vector<std::string>& metrics) {
    const auto& valid = eval_metric_names();
    for (const auto& m : metrics) {
        if (std::find(valid.begin(), valid.end(), m) == valid.end()) {
            std::string list;
            for (const auto& v : valid) list += (list.empty() ? "" : ", ") + v;
            throw ConfigError("--metrics: unknown metric '" + m + "' (valid: " + list + ")");
        }
    }
    auto wants = [&](const std::string& m) { return std::find(metrics.begin(), metrics.end(), m) != metrics.end(); };
    EvalOutcome out;
    out.report.seed = config.seed;
    out.report.config_hash = model.config_hash;
    if (metrics.empty()) return out;

    std::map<ModalityId, std::vector<FeatureSequence>> activation_sets;
    std::map<std::string, std::vector<double>> per_metric;
    for (int s = 1; s <= model.stage; ++s) {
        const StageDataset data = load_dataset(config.dataset_path(s));
        const std::string key = "stage" + std::to_string(s) + ":" + data.mediator + "-" + data.partner;
        auto& row = out.report.breakdown[key];
        auto record = [&](const std::string& name, double value) {
            row[name] = value;
            per_metric[name].push_back(value);
        };
        if (wants("agreement")) record("agreement", code_agreement(model, data.mediator, data.partner, data.eval));
        if (wants("transfer")) {
            const LabeledCodes train = labeled_codes(model, data.mediator, data.train, true);
            const LabeledCodes test = labeled_codes(model, data.partner, data.eval, false);
            record("transfer", zero_shot_transfer(train, test));
        }
        if (wants("recall")) {
            const LabeledCodes q = labeled_codes(model, data.mediator, data.eval, true);
            const LabeledCodes g = labeled_codes(model, data.partner, data.eval, false);
            const Index n = static_cast<Index>(data.eval.size());
            Matrix queries(n, model.codebook.dim()), gallery(n, model.codebook.dim());
            IndexList truth(static_cast<std::size_t>(n));
            for (Index i = 0; i < n; ++i) {
                queries.row(i) = sequence_embedding(q.embeddings[static_cast<std::size_t>(i)]);
                gallery.row(i) = sequence_embedding(g.embeddings[static_cast<std::size_t>(i)]);
                truth[static_cast<std::size_t>(i)] = i;
            }
            std::vector<Index> ks;
            for (Index k : {1, 5, 10}) {
                if (k <= n) ks.push_back(k);
            }
            for (const auto& [k, r] : retrieval_recall(queries, gallery, truth, ks)) {
                record("recall@" + std::to_string(k), r);
            }
        }
        for (const auto& p : data.eval) {
            activation_sets[data.mediator].push_back(p.mediator);
            activation_sets[data.partner].push_back(p.partner);
        }
    }
    for (const auto& [name, values] : per_metric) {
        double sum = 0.0;
        for (double v : values) sum += v;
        out.report.metrics[name] = sum / static_cast<double>(values.size());
    }
    if (wants("activation") && !activation_sets.empty()) {
        const ActivationReport rep = export_code_activation(model, activation_sets);
        for (std::size_t c = 0; c < rep.class_counts.size(); ++c) {
            out.report.metrics["activation.class" + std::to_string(c)] = static_cast<double>(rep.class_counts[c]);
        }
        out.report.metrics["activation.shared_fraction"] = rep.shared_fraction();
        std::vector<ModalityId> modalities;
        for (const auto& [m, _] : activation_sets) modalities.push_back(m);
        out.activation_csv["all"] = activation_csv(rep, modalities);
    }
    return out;
}

}  // namespace comet
