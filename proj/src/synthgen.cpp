#include "comet/synthgen.hpp"

#include "comet/io.hpp"
#include "comet/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>

namespace comet {

namespace {

constexpr double kNuisanceCorrelation = 0.9;
constexpr std::string_view kDatasetMagic = "CMTDATA1";

Matrix gaussian_matrix(Rng& rng, Index rows, Index cols) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) m(r, c) = n01(rng);
    }
    return m;
}

double min_pairwise_distance(const Matrix& rows) {
    double best = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < rows.rows(); ++i) {
        for (Index j = i + 1; j < rows.rows(); ++j) best = std::min(best, (rows.row(i) - rows.row(j)).norm());
    }
    return best;
}

}  // namespace

SemanticScript generate_script(int categories, Index steps, std::uint64_t seed, double p_stay) {
    if (categories < 2) throw ValueError("generate_script needs at least 2 categories");
    if (steps < 2) throw ValueError("generate_script needs at least 2 steps");
    if (p_stay < 0.0 || p_stay > 1.0) throw ValueError("p_stay must lie in [0, 1]");
    Rng rng(seed);
    std::uniform_int_distribution<int> first(0, categories - 1);
    std::uniform_int_distribution<int> other(0, categories - 2);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    SemanticScript script;
    script.categories = categories;
    script.codes.reserve(static_cast<std::size_t>(steps));
    script.codes.push_back(first(rng));
    for (Index t = 1; t < steps; ++t) {
        const int prev = script.codes.back();
        if (coin(rng) < p_stay) {
            script.codes.push_back(prev);
        } else {
            const int draw = other(rng);
            script.codes.push_back(draw >= prev ? draw + 1 : draw);
        }
    }
    return script;
}

ModalityRenderer::ModalityRenderer(ModalityId modality, Matrix embeddings, Matrix nuisance_basis,
                                   double nuisance_scale, double noise)
    : modality_(std::move(modality)),
      embeddings_(std::move(embeddings)),
      nuisance_basis_(std::move(nuisance_basis)),
      nuisance_scale_(nuisance_scale),
      noise_(noise) {
    require_dims(nuisance_basis_.rows() == embeddings_.cols() || nuisance_basis_.size() == 0,
                 "nuisance basis must have raw_dim rows");
    if (noise_ < 0.0 || nuisance_scale_ < 0.0) throw ValueError("renderer scales must be nonnegative");
    if (embeddings_.rows() >= 2 && !(min_pairwise_distance(embeddings_) > 10.0 * noise_)) {
        throw ValueError("category embeddings closer than 10 noise widths for modality " + modality_);
    }
}

ModalityRenderer ModalityRenderer::create(const ModalityId& modality, const RendererOptions& options,
                                          std::uint64_t world_seed) {
    Rng rng(derive_seed(world_seed, "renderer." + modality));
    for (int attempt = 0; attempt < 16; ++attempt) {
        Matrix embeddings = gaussian_matrix(rng, options.total_categories, options.raw_dim);
        Matrix basis = gaussian_matrix(rng, options.raw_dim, options.nuisance_dim);
        for (Index c = 0; c < basis.cols(); ++c) basis.col(c).normalize();
        if (min_pairwise_distance(embeddings) > 10.0 * options.noise) {
            return ModalityRenderer(modality, std::move(embeddings), std::move(basis), options.nuisance_scale,
                                    options.noise);
        }
    }
    throw ValueError("could not draw well-separated embeddings for modality " + modality);
}

std::uint64_t ModalityRenderer::fingerprint() const {
    io::ByteWriter w;
    w.bytes(modality_);
    w.u64(static_cast<std::uint64_t>(embeddings_.rows()));
    w.u64(static_cast<std::uint64_t>(embeddings_.cols()));
    w.matrix_row_major(embeddings_);
    w.u64(static_cast<std::uint64_t>(nuisance_basis_.cols()));
    w.matrix_row_major(nuisance_basis_);
    w.f64(nuisance_scale_);
    w.f64(noise_);
    return io::checksum64(w.buffer());
}

FeatureSequence render(const SemanticScript& script, const ModalityRenderer& renderer, std::uint64_t seed) {
    const Index steps = script.steps();
    require_dims(steps >= 1, "render: empty script");
    const Index d = renderer.raw_dim();
    const Index k = renderer.nuisance_basis().cols();
    Rng rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);

    // Nuisance and noise are drawn for every row regardless of the script, so
    // changing one script entry only changes that row.
    Matrix latent(steps, k);
    for (Index j = 0; j < k; ++j) latent(0, j) = n01(rng);
    const double innovation = std::sqrt(1.0 - kNuisanceCorrelation * kNuisanceCorrelation);
    for (Index t = 1; t < steps; ++t) {
        for (Index j = 0; j < k; ++j) latent(t, j) = kNuisanceCorrelation * latent(t - 1, j) + innovation * n01(rng);
    }
    Matrix noise(steps, d);
    for (Index t = 0; t < steps; ++t) {
        for (Index j = 0; j < d; ++j) noise(t, j) = n01(rng);
    }

    Matrix x(steps, d);
    for (Index t = 0; t < steps; ++t) {
        const int id = script.codes[static_cast<std::size_t>(t)];
        if (id < 0 || id >= renderer.total_categories()) {
            throw ValueError("render: category " + std::to_string(id) + " has no embedding row");
        }
        x.row(t) = renderer.embeddings().row(id);
        if (k > 0 && renderer.nuisance_scale() > 0.0) {
            x.row(t) += renderer.nuisance_scale() * (renderer.nuisance_basis() * latent.row(t).transpose()).transpose();
        }
        if (renderer.noise() > 0.0) x.row(t) += renderer.noise() * noise.row(t);
    }
    return FeatureSequence(std::move(x));
}

RendererBank::RendererBank(const RendererOptions& options, std::uint64_t world_seed, ModalityId mediator)
    : options_(options), world_seed_(world_seed), mediator_(std::move(mediator)) {}

const ModalityRenderer& RendererBank::get(const ModalityId& modality) {
    auto it = renderers_.find(modality);
    if (it == renderers_.end()) {
        it = renderers_.emplace(modality, ModalityRenderer::create(modality, options_, world_seed_)).first;
    }
    return it->second;
}

std::vector<int> CategoryPlan::table() const {
    std::vector<int> out = shared;
    for (int c = lo; c < hi; ++c) out.push_back(c);
    return out;
}

std::vector<CategoryPlan> plan_categories(const std::vector<int>& categories_per_stage,
                                          const std::vector<double>& overlap_per_stage) {
    require_dims(categories_per_stage.size() == overlap_per_stage.size(), "plan_categories: length mismatch");
    std::vector<CategoryPlan> plans;
    int next = 0;
    for (std::size_t s = 0; s < categories_per_stage.size(); ++s) {
        const int c = categories_per_stage[s];
        if (c < 2) throw ValueError("each stage needs at least 2 categories");
        CategoryPlan plan;
        if (s > 0) {
            const double overlap = overlap_per_stage[s];
            if (overlap < 0.0 || overlap > 1.0) throw ValueError("overlap must lie in [0, 1]");
            const int first_stage = categories_per_stage.front();
            const int shared = std::min({static_cast<int>(std::lround(overlap * c)), c, first_stage});
            for (int i = 0; i < shared; ++i) plan.shared.push_back(i);
        }
        plan.lo = next;
        plan.hi = next + c - static_cast<int>(plan.shared.size());
        next = plan.hi;
        plans.push_back(plan);
    }
    return plans;
}

StageDataset generate_stage_dataset(const StageSpec& spec, RendererBank& bank, std::uint64_t seed) {
    if (spec.mediator == spec.partner) throw ValueError("a stage pairs two distinct modalities");
    if (spec.mediator != bank.mediator()) {
        throw ValueError("stage " + std::to_string(spec.stage) + " mediator '" + spec.mediator +
                         "' differs from the run mediator '" + bank.mediator() + "'");
    }
    const std::vector<int> table = spec.categories.table();
    if (table.size() < 2) throw ValueError("stage needs at least 2 categories");
    const ModalityRenderer& med = bank.get(spec.mediator);
    const ModalityRenderer& par = bank.get(spec.partner);
    for (int id : table) {
        if (id >= med.total_categories() || id >= par.total_categories()) {
            throw ValueError("category " + std::to_string(id) + " exceeds the renderer table");
        }
    }

    StageDataset ds;
    ds.stage = spec.stage;
    ds.mediator = spec.mediator;
    ds.partner = spec.partner;
    ds.categories = spec.categories;
    ds.seed = seed;
    ds.steps = spec.steps;
    ds.raw_dim = med.raw_dim();
    ds.mediator_fingerprint = med.fingerprint();
    ds.partner_fingerprint = par.fingerprint();

    auto make_pair = [&](std::uint64_t split, int i) {
        const std::uint64_t pair_seed = derive_seed(seed, split * 1000003ULL + static_cast<std::uint64_t>(spec.stage),
                                                    static_cast<std::uint64_t>(i));
        SemanticScript local = generate_script(static_cast<int>(table.size()), spec.steps,
                                               derive_seed(pair_seed, "script"), spec.p_stay);
        SemanticScript global = local;
        for (auto& c : global.codes) c = table[static_cast<std::size_t>(c)];
        global.categories = static_cast<int>(table.size());
        SequencePair pair{render(global, med, derive_seed(pair_seed, "mediator")),
                          render(global, par, derive_seed(pair_seed, "partner")), global.codes};
        return pair;
    };
    for (int i = 0; i < spec.train_pairs; ++i) ds.train.push_back(make_pair(0, i));
    for (int i = 0; i < spec.eval_pairs; ++i) ds.eval.push_back(make_pair(1, i));
    return ds;
}

std::string serialize_dataset(const StageDataset& ds) {
    nlohmann::json header;
    header["format_version"] = 1;
    header["stage"] = ds.stage;
    header["modalities"] = {ds.mediator, ds.partner};
    header["category_range"] = {ds.categories.lo, ds.categories.hi};
    header["shared_categories"] = ds.categories.shared;
    header["seed"] = ds.seed;
    header["steps"] = ds.steps;
    header["raw_dim"] = ds.raw_dim;
    header["splits"] = {{"train", ds.train.size()}, {"eval", ds.eval.size()}};
    header["fingerprints"] = {{"mediator", ds.mediator_fingerprint}, {"partner", ds.partner_fingerprint}};
    header["layout"] = "per pair: mediator[steps x raw_dim], partner[steps x raw_dim], script[steps]; f64 LE row-major";
    const std::string text = header.dump();

    io::ByteWriter w;
    w.bytes(kDatasetMagic);
    w.u64(text.size());
    w.bytes(text);
    for (const auto* split : {&ds.train, &ds.eval}) {
        for (const auto& pair : *split) {
            w.matrix_row_major(pair.mediator.matrix());
            w.matrix_row_major(pair.partner.matrix());
            for (int c : pair.script) w.f64(static_cast<double>(c));
        }
    }
    return w.buffer();
}

StageDataset deserialize_dataset(const std::string& bytes) {
    io::ByteReader r(bytes);
    if (r.bytes(kDatasetMagic.size()) != kDatasetMagic) throw FormatError("not a dataset file (bad magic)");
    const auto len = r.u64();
    const auto header = nlohmann::json::parse(r.bytes(static_cast<std::size_t>(len)));
    if (header.at("format_version").get<int>() != 1) throw FormatError("unsupported dataset format version");

    StageDataset ds;
    ds.stage = header.at("stage").get<int>();
    ds.mediator = header.at("modalities").at(0).get<std::string>();
    ds.partner = header.at("modalities").at(1).get<std::string>();
    ds.categories.lo = header.at("category_range").at(0).get<int>();
    ds.categories.hi = header.at("category_range").at(1).get<int>();
    ds.categories.shared = header.at("shared_categories").get<std::vector<int>>();
    ds.seed = header.at("seed").get<std::uint64_t>();
    ds.steps = header.at("steps").get<Index>();
    ds.raw_dim = header.at("raw_dim").get<Index>();
    ds.mediator_fingerprint = header.at("fingerprints").at("mediator").get<std::uint64_t>();
    ds.partner_fingerprint = header.at("fingerprints").at("partner").get<std::uint64_t>();
    const auto n_train = header.at("splits").at("train").get<std::size_t>();
    const auto n_eval = header.at("splits").at("eval").get<std::size_t>();

    auto read_pair = [&] {
        Matrix med = r.matrix_row_major(ds.steps, ds.raw_dim);
        Matrix par = r.matrix_row_major(ds.steps, ds.raw_dim);
        std::vector<int> script;
        for (Index t = 0; t < ds.steps; ++t) script.push_back(static_cast<int>(r.f64()));
        return SequencePair{FeatureSequence(std::move(med)), FeatureSequence(std::move(par)), std::move(script)};
    };
    for (std::size_t i = 0; i < n_train; ++i) ds.train.push_back(read_pair());
    for (std::size_t i = 0; i < n_eval; ++i) ds.eval.push_back(read_pair());
    if (r.remaining() != 0) throw FormatError("trailing bytes after dataset payload");
    return ds;
}

void save_dataset(const StageDataset& ds, const std::string& path) { io::write_file_atomic(path, serialize_dataset(ds)); }

StageDataset load_dataset(const std::string& path) { return deserialize_dataset(io::read_file(path)); }

}  // namespace comet
