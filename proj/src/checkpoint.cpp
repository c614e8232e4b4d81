#include "comet/io.hpp"
#include "comet/trainer.hpp"

#include <json.hpp>

#include <list>
#include <string_view>

namespace comet {

namespace {

constexpr std::string_view kCheckpointMagic = "CMTCKPT1";

using json = nlohmann::json;

// Arrays are written in the order they are declared in the metadata.
class ArrayTable {
public:
    void add(const std::string& name, const Matrix& m) {
        entries_.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
        data_.push_back(&m);
    }
    void add(const std::string& name, const Vector& v) {
        owned_.push_back(v.transpose());
        add(name, owned_.back());
    }
    void add_params(const std::string& prefix, const ParamSet& p) {
        for (const auto& [path, m] : p) add(prefix + path, m);
    }
    const json& entries() const { return entries_; }
    void write(io::ByteWriter& w) const {
        for (const Matrix* m : data_) w.matrix_row_major(*m);
    }

private:
    json entries_ = json::array();
    std::vector<const Matrix*> data_;
    std::list<Matrix> owned_;
};

json dims_json(const ModelDims& d) {
    return {{"raw_dim", d.raw_dim}, {"sem_dim", d.sem_dim},         {"spec_dim", d.spec_dim},
            {"hidden", d.hidden},   {"context_dim", d.context_dim}, {"q_hidden", d.q_hidden},
            {"experts", d.experts}, {"k_steps", d.k_steps},         {"specific_layers", d.specific_layers}};
}

ModelDims dims_from(const json& j) {
    ModelDims d;
    d.raw_dim = j.at("raw_dim").get<Index>();
    d.sem_dim = j.at("sem_dim").get<Index>();
    d.spec_dim = j.at("spec_dim").get<Index>();
    d.hidden = j.at("hidden").get<Index>();
    d.context_dim = j.at("context_dim").get<Index>();
    d.q_hidden = j.at("q_hidden").get<Index>();
    d.experts = j.at("experts").get<int>();
    d.k_steps = j.at("k_steps").get<int>();
    d.specific_layers = j.at("specific_layers").get<bool>();
    return d;
}

json config_json(const ModelConfig& c) {
    const LossWeights& w = c.weights;
    return {{"dims", dims_json(c.dims)},
            {"codebook_size", c.codebook_size},
            {"code_init_scale", c.code_init_scale},
            {"dead_threshold", c.dead_threshold},
            {"ablation", c.ablation.disabled()},
            {"fisher_samples", c.fisher_samples},
            {"seed", c.seed},
            {"weights",
             {{"recon", w.recon},
              {"commit", w.commit},
              {"cpc", w.cpc},
              {"cmcm", w.cmcm},
              {"mi", w.mi},
              {"gate", w.gate},
              {"pmr", w.pmr},
              {"ewc", w.ewc}}}};
}

ModelConfig config_from(const json& j) {
    ModelConfig c;
    c.dims = dims_from(j.at("dims"));
    c.codebook_size = j.at("codebook_size").get<Index>();
    c.code_init_scale = j.at("code_init_scale").get<double>();
    c.dead_threshold = j.at("dead_threshold").get<double>();
    c.ablation = Ablation::parse(j.at("ablation").get<std::string>());
    c.fisher_samples = j.at("fisher_samples").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const json& w = j.at("weights");
    c.weights.recon = w.at("recon").get<double>();
    c.weights.commit = w.at("commit").get<double>();
    c.weights.cpc = w.at("cpc").get<double>();
    c.weights.cmcm = w.at("cmcm").get<double>();
    c.weights.mi = w.at("mi").get<double>();
    c.weights.gate = w.at("gate").get<double>();
    c.weights.pmr = w.at("pmr").get<double>();
    c.weights.ewc = w.at("ewc").get<double>();
    return c;
}

json adam_json(const AdamState& a) {
    return {{"step", a.step}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

void adam_from(const json& j, AdamState& a) {
    a.step = j.at("step").get<std::uint64_t>();
    a.beta1 = j.at("beta1").get<double>();
    a.beta2 = j.at("beta2").get<double>();
    a.eps = j.at("eps").get<double>();
}

bool starts_with(const std::string& s, std::string_view prefix) { return s.compare(0, prefix.size(), prefix) == 0; }

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
    ArrayTable arrays;
    arrays.add_params("params/", c.params);
    arrays.add_params("club/", c.club);
    arrays.add("codebook/codes", c.codebook.codes);
    arrays.add("codebook/counts", c.codebook.counts);
    arrays.add("codebook/volumes", c.codebook.volumes);
    if (c.teacher) arrays.add("teacher/codes", c.teacher->codes());
    json fisher = json::array();
    for (std::size_t i = 0; i < c.fisher.size(); ++i) {
        const FisherSnapshot& s = c.fisher[i];
        const std::string p = "fisher" + std::to_string(i) + "/";
        for (const auto& [path, f] : s.fisher) arrays.add(p + "F/" + path, f);
        for (const auto& [path, a] : s.anchor) arrays.add(p + "anchor/" + path, a);
        fisher.push_back({{"lambda", s.lambda}, {"stage", s.stage}});
    }
    arrays.add_params("adam_main/m/", c.adam_main.m);
    arrays.add_params("adam_main/v/", c.adam_main.v);
    arrays.add_params("adam_club/m/", c.adam_club.m);
    arrays.add_params("adam_club/v/", c.adam_club.v);

    json meta = {{"format_version", Checkpoint::kFormatVersion},
                 {"stage", c.stage},
                 {"config", config_json(c.config)},
                 {"config_hash", c.config_hash},
                 {"mediator", c.mediator},
                 {"modalities", c.modalities},
                 {"codebook",
                  {{"gamma", c.codebook.gamma},
                   {"frozen_prefix", c.codebook.frozen_prefix},
                   {"dead_threshold", c.codebook.dead_threshold}}},
                 {"teacher", c.teacher.has_value()},
                 {"fisher", fisher},
                 {"adam_main", adam_json(c.adam_main)},
                 {"adam_club", adam_json(c.adam_club)},
                 {"arrays", arrays.entries()}};
    const std::string text = meta.dump();

    io::ByteWriter w;
    w.bytes(kCheckpointMagic);
    w.u64(text.size());
    w.bytes(text);
    arrays.write(w);
    const std::uint64_t sum = io::checksum64(w.buffer());
    w.u64(sum);
    return w.buffer();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < kCheckpointMagic.size() + 16) throw FormatError("checkpoint file is truncated");
    if (std::string_view(bytes).substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
        throw FormatError("not a checkpoint file (bad magic)");
    }
    const std::string_view body(bytes.data(), bytes.size() - 8);
    io::ByteReader tail(std::string_view(bytes).substr(bytes.size() - 8));
    if (tail.u64() != io::checksum64(body)) throw FormatError("checkpoint checksum mismatch (corrupt or truncated)");

    io::ByteReader r(body);
    r.bytes(kCheckpointMagic.size());
    const auto len = r.u64();
    json meta;
    try {
        meta = json::parse(r.bytes(static_cast<std::size_t>(len)));
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }
    const int version = meta.at("format_version").get<int>();
    if (version != Checkpoint::kFormatVersion) {
        throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(Checkpoint::kFormatVersion) + ")");
    }

    Checkpoint c;
    try {
        c.stage = meta.at("stage").get<int>();
        c.config = config_from(meta.at("config"));
        c.config_hash = meta.at("config_hash").get<std::uint64_t>();
        c.mediator = meta.at("mediator").get<std::string>();
        c.modalities = meta.at("modalities").get<std::vector<std::string>>();
        adam_from(meta.at("adam_main"), c.adam_main);
        adam_from(meta.at("adam_club"), c.adam_club);
        for (const auto& f : meta.at("fisher")) {
            FisherSnapshot s;
            s.lambda = f.at("lambda").get<double>();
            s.stage = f.at("stage").get<int>();
            c.fisher.push_back(std::move(s));
        }

        Matrix counts;
        Matrix teacher;
        for (const auto& entry : meta.at("arrays")) {
            const std::string name = entry.at("name").get<std::string>();
            Matrix m = r.matrix_row_major(entry.at("rows").get<Index>(), entry.at("cols").get<Index>());
            auto strip = [&](std::string_view p) { return name.substr(p.size()); };
            if (starts_with(name, "params/")) c.params.set(strip("params/"), std::move(m));
            else if (starts_with(name, "club/")) c.club.set(strip("club/"), std::move(m));
            else if (name == "codebook/codes") c.codebook.codes = std::move(m);
            else if (name == "codebook/counts") counts = std::move(m);
            else if (name == "codebook/volumes") c.codebook.volumes = std::move(m);
            else if (name == "teacher/codes") teacher = std::move(m);
            else if (starts_with(name, "adam_main/m/")) c.adam_main.m.set(strip("adam_main/m/"), std::move(m));
            else if (starts_with(name, "adam_main/v/")) c.adam_main.v.set(strip("adam_main/v/"), std::move(m));
            else if (starts_with(name, "adam_club/m/")) c.adam_club.m.set(strip("adam_club/m/"), std::move(m));
            else if (starts_with(name, "adam_club/v/")) c.adam_club.v.set(strip("adam_club/v/"), std::move(m));
            else if (starts_with(name, "fisher")) {
                const auto slash = name.find('/');
                const std::size_t i = std::stoul(name.substr(6, slash - 6));
                if (i >= c.fisher.size()) throw FormatError("checkpoint references unknown Fisher snapshot");
                const std::string rest = name.substr(slash + 1);
                if (starts_with(rest, "F/")) c.fisher[i].fisher[rest.substr(2)] = std::move(m);
                else if (starts_with(rest, "anchor/")) c.fisher[i].anchor[rest.substr(7)] = std::move(m);
                else throw FormatError("unknown checkpoint array: " + name);
            } else {
                throw FormatError("unknown checkpoint array: " + name);
            }
        }
        if (r.remaining() != 0) throw FormatError("checkpoint has trailing bytes");
        c.codebook.counts = counts.transpose();
        const json& cb = meta.at("codebook");
        c.codebook.gamma = cb.at("gamma").get<double>();
        c.codebook.frozen_prefix = cb.at("frozen_prefix").get<Index>();
        c.codebook.dead_threshold = cb.at("dead_threshold").get<double>();
        c.codebook.validate();
        if (meta.at("teacher").get<bool>()) c.teacher = TeacherSnapshot(std::move(teacher));
        for (const auto& s : c.fisher) s.validate();
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint metadata is incomplete: ") + e.what());
    }
    return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    io::write_file_atomic(path, serialize_checkpoint(c));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(io::read_file(path)); }

}  // namespace comet
