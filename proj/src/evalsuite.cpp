#include "comet/evalsuite.hpp"

#include "comet/cmoe_adapter.hpp"
#include "comet/encoders.hpp"

#include <json.hpp>

#include <algorithm>
#include <set>

namespace comet {

IndexList encode_indices(const Checkpoint& model, const ModalityId& modality, const FeatureSequence& x) {
    if (!model.has_modality(modality)) throw ValueError("model has not seen modality '" + modality + "'");
    const EncodedSequence e = encode(x, model.params, modality);
    const AdapterOutput out =
        adapter_forward(e.semantic, modality, model.params, AdapterLayout::from(model.config.effective_dims()));
    return quantize(out.z.matrix(), model.codebook.codes).indices;
}

double code_agreement(const std::vector<IndexList>& a, const std::vector<IndexList>& b) {
    require_dims(a.size() == b.size(), "code_agreement: different numbers of sequences");
    std::size_t total = 0;
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        require_dims(a[i].size() == b[i].size(), "code_agreement: sequence lengths differ");
        for (std::size_t t = 0; t < a[i].size(); ++t) same += a[i][t] == b[i][t] ? 1 : 0;
        total += a[i].size();
    }
    if (total == 0) throw ValueError("code_agreement: empty evaluation set");
    return static_cast<double>(same) / static_cast<double>(total);
}

double code_agreement(const Checkpoint& model, const ModalityId& mediator, const ModalityId& partner,
                      const std::vector<SequencePair>& pairs) {
    std::vector<IndexList> a, b;
    for (const auto& p : pairs) {
        a.push_back(encode_indices(model, mediator, p.mediator));
        b.push_back(encode_indices(model, partner, p.partner));
    }
    return code_agreement(a, b);
}

LabeledCodes labeled_codes(const Checkpoint& model, const ModalityId& modality, const std::vector<SequencePair>& pairs,
                           bool use_mediator) {
    LabeledCodes out;
    for (const auto& p : pairs) {
        const IndexList idx = encode_indices(model, modality, use_mediator ? p.mediator : p.partner);
        Matrix e(static_cast<Index>(idx.size()), model.codebook.dim());
        for (std::size_t t = 0; t < idx.size(); ++t) e.row(static_cast<Index>(t)) = model.codebook.codes.row(idx[t]);
        out.embeddings.push_back(std::move(e));
        out.labels.push_back(p.script);
    }
    return out;
}

double zero_shot_transfer(const LabeledCodes& train, const LabeledCodes& test, const TransferOptions& options) {
    require_dims(train.embeddings.size() == train.labels.size() && test.embeddings.size() == test.labels.size(),
                 "zero_shot_transfer: labels and sequences differ in count");
    if (train.embeddings.empty() || test.embeddings.empty()) throw ValueError("zero_shot_transfer: empty split");
    std::set<int> classes;
    for (const auto& l : train.labels) classes.insert(l.begin(), l.end());
    std::map<int, Index> column;
    for (int c : classes) column.emplace(c, static_cast<Index>(column.size()));

    auto stack = [](const LabeledCodes& s) {
        Index rows = 0;
        for (const auto& e : s.embeddings) rows += e.rows();
        Matrix x(rows, s.embeddings.front().cols());
        std::vector<int> y;
        Index r = 0;
        for (std::size_t i = 0; i < s.embeddings.size(); ++i) {
            require_dims(static_cast<std::size_t>(s.embeddings[i].rows()) == s.labels[i].size(),
                         "zero_shot_transfer: one label per timestep required");
            x.middleRows(r, s.embeddings[i].rows()) = s.embeddings[i];
            r += s.embeddings[i].rows();
            y.insert(y.end(), s.labels[i].begin(), s.labels[i].end());
        }
        return std::make_pair(x, y);
    };
    const auto [x_train, y_train] = stack(train);
    const auto [x_test, y_test] = stack(test);
    require_dims(x_train.cols() == x_test.cols(), "zero_shot_transfer: embedding widths differ");

    IndexList targets;
    for (int y : y_train) targets.push_back(column.at(y));
    const Index n_classes = static_cast<Index>(classes.size());
    ParamSet head;
    head.set("weight", Matrix::Zero(n_classes, x_train.cols()));
    head.set("bias", Matrix::Zero(1, n_classes));
    AdamState adam;
    for (int step = 0; step < options.steps; ++step) {
        ad::Tape tape;
        ParamBinding bound(tape, head, true);
        ad::Var logits = ad::affine(tape.constant(x_train), bound["weight"], bound["bias"]);
        ad::Var nll = ad::scale(ad::mean(ad::pick(ad::log_softmax_rows(logits), targets)), -1.0);
        tape.backward(nll);
        adam.apply(head, bound.gradients(), options.lr);
    }

    const Matrix scores = (x_test * head.at("weight").transpose()).rowwise() + head.at("bias").row(0);
    std::size_t correct = 0;
    for (Index i = 0; i < scores.rows(); ++i) {
        Index best = 0;
        scores.row(i).maxCoeff(&best);
        auto it = column.find(y_test[static_cast<std::size_t>(i)]);
        if (it != column.end() && it->second == best) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(scores.rows());
}

RowVector sequence_embedding(const Matrix& codes) {
    if (codes.rows() == 0) throw ValueError("sequence_embedding: empty sequence");
    return codes.colwise().mean();
}

std::map<Index, double> retrieval_recall(const Matrix& queries, const Matrix& gallery, const IndexList& truth,
                                         const std::vector<Index>& ks) {
    require_dims(queries.cols() == gallery.cols(), "retrieval_recall: embedding widths differ");
    require_dims(static_cast<Index>(truth.size()) == queries.rows(), "retrieval_recall: one target per query");
    if (queries.rows() == 0) throw ValueError("retrieval_recall: no queries");
    for (Index k : ks) {
        if (k < 1 || k > gallery.rows()) {
            throw ValueError("retrieval_recall: K=" + std::to_string(k) + " outside [1, gallery size " +
                             std::to_string(gallery.rows()) + "]");
        }
    }
    auto normalized = [](const Matrix& m) {
        Matrix out = m;
        for (Index i = 0; i < out.rows(); ++i) {
            const double n = out.row(i).norm();
            if (n > 0.0) out.row(i) /= n;
        }
        return out;
    };
    const Matrix sim = normalized(queries) * normalized(gallery).transpose();
    std::map<Index, double> hits;
    for (Index k : ks) hits[k] = 0.0;
    for (Index q = 0; q < sim.rows(); ++q) {
        const Index target = truth[static_cast<std::size_t>(q)];
        require_dims(target >= 0 && target < gallery.rows(), "retrieval_recall: target out of range");
        const double s = sim(q, target);
        Index rank = 0;  // gallery items ranked strictly ahead of the target
        for (Index g = 0; g < sim.cols(); ++g) {
            if (sim(q, g) > s || (sim(q, g) == s && g < target)) ++rank;
        }
        for (Index k : ks) hits[k] += rank < k ? 1.0 : 0.0;
    }
    for (auto& [k, h] : hits) h /= static_cast<double>(sim.rows());
    return hits;
}

double forgetting(double before, double after) { return before == 0.0 ? 0.0 : (before - after) / before; }

ActivationReport export_code_activation(const Checkpoint& model,
                                        const std::map<ModalityId, std::vector<FeatureSequence>>& eval_sets,
                                        double threshold_fraction) {
    std::map<ModalityId, IndexList> runs;
    for (const auto& [modality, seqs] : eval_sets) {
        IndexList& all = runs[modality];
        for (const auto& s : seqs) {
            const IndexList idx = encode_indices(model, modality, s);
            all.insert(all.end(), idx.begin(), idx.end());
        }
    }
    return activation_stats(model.codebook.size(), runs, threshold_fraction);
}

std::string activation_csv(const ActivationReport& report, const std::vector<ModalityId>& modalities) {
    std::string out = "code_id,class";
    for (const auto& m : modalities) out += ",count_" + m;
    out += "\n";
    for (std::size_t i = 0; i < report.codes.size(); ++i) {
        const auto& code = report.codes[i];
        out += std::to_string(i) + "," + std::to_string(code.activation_class);
        for (const auto& m : modalities) {
            auto it = code.counts.find(m);
            out += "," + std::to_string(it == code.counts.end() ? 0 : it->second);
        }
        out += "\n";
    }
    return out;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["metrics"] = nlohmann::json::object();
    for (const auto& [k, v] : metrics) j["metrics"][k] = v;
    j["breakdown"] = nlohmann::json::object();
    for (const auto& [k, m] : breakdown) {
        for (const auto& [name, v] : m) j["breakdown"][k][name] = v;
    }
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    return j.dump(2) + "\n";
}

}  // namespace comet
