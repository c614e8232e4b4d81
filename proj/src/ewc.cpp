#include "comet/ewc.hpp"

namespace comet {

std::vector<std::string> FisherSnapshot::scope() const {
    std::vector<std::string> out;
    for (const auto& [path, f] : fisher) out.push_back(path);
    return out;
}

void FisherSnapshot::validate() const {
    require_dims(fisher.size() == anchor.size(), "Fisher snapshot: F and anchor cover different paths");
    for (const auto& [path, f] : fisher) {
        auto it = anchor.find(path);
        require_dims(it != anchor.end(), "Fisher snapshot: no anchor for " + path);
        require_dims(it->second.rows() == f.rows() && it->second.cols() == f.cols(),
                     "Fisher snapshot: shape mismatch at " + path);
        if (!f.allFinite() || (f.array() < 0.0).any()) throw ValueError("Fisher snapshot: invalid F at " + path);
    }
    if (!(lambda >= 0.0)) throw ValueError("Fisher snapshot: lambda must be nonnegative");
}

bool FisherSnapshot::operator==(const FisherSnapshot& other) const {
    auto same = [](const std::map<std::string, Matrix>& a, const std::map<std::string, Matrix>& b) {
        if (a.size() != b.size()) return false;
        for (auto i = a.begin(), j = b.begin(); i != a.end(); ++i, ++j) {
            if (i->first != j->first || !same_matrix(i->second, j->second)) return false;
        }
        return true;
    };
    return same(fisher, other.fisher) && same(anchor, other.anchor) && lambda == other.lambda && stage == other.stage;
}

std::vector<std::string> select_scope(const ParamSet& params, const AdapterLayout& layout,
                                      const std::vector<ModalityId>& seen) {
    std::vector<std::string> out;
    for (int e = 0; e < layout.experts; ++e) {
        for (const auto& path : params.paths_with_prefix(common_prefix(e) + ".")) out.push_back(path);
        if (!layout.specific_layers) continue;
        for (const auto& m : seen) {
            for (const auto& path : params.paths_with_prefix(specific_prefix(e, m) + ".")) out.push_back(path);
        }
    }
    return out;
}

FisherSnapshot estimate_fisher(const ParamSet& theta, const std::vector<std::string>& scope, std::size_t examples,
                               const ExampleGradient& gradient, double lambda) {
    if (examples == 0) throw ValueError("estimate_fisher: empty sample");
    FisherSnapshot snap;
    snap.lambda = lambda;
    for (const auto& path : scope) {
        snap.anchor[path] = theta.at(path);
        snap.fisher[path] = Matrix::Zero(theta.at(path).rows(), theta.at(path).cols());
    }
    for (std::size_t i = 0; i < examples; ++i) {
        const ParamSet g = gradient(i);
        for (const auto& path : scope) {
            if (!g.contains(path)) continue;  // no gradient flowed: zero score
            snap.fisher[path] += g.at(path).cwiseAbs2();
        }
    }
    for (auto& [path, f] : snap.fisher) f /= static_cast<double>(examples);
    snap.validate();
    return snap;
}

double ewc_loss(const ParamSet& theta, const FisherSnapshot& snapshot) {
    double total = 0.0;
    for (const auto& [path, f] : snapshot.fisher) {
        if (!theta.contains(path)) throw ValueError("ewc_loss: parameter missing: " + path);
        const Matrix& th = theta.at(path);
        require_dims(th.rows() == f.rows() && th.cols() == f.cols(), "ewc_loss: shape mismatch at " + path);
        total += (f.array() * (th - snapshot.anchor.at(path)).array().square()).sum();
    }
    return 0.5 * snapshot.lambda * total;
}

double ewc_loss(const ParamSet& theta, const std::vector<FisherSnapshot>& snapshots) {
    double total = 0.0;
    for (const auto& s : snapshots) total += ewc_loss(theta, s);
    return total;
}

ParamSet ewc_gradient(const ParamSet& theta, const FisherSnapshot& snapshot) {
    ParamSet out;
    for (const auto& [path, f] : snapshot.fisher) {
        if (!theta.contains(path)) throw ValueError("ewc_gradient: parameter missing: " + path);
        out.set(path, snapshot.lambda * f.cwiseProduct(theta.at(path) - snapshot.anchor.at(path)));
    }
    return out;
}

namespace ad {

Var ewc_loss(ParamBinding& theta, const FisherSnapshot& snapshot) {
    Tape& tape = theta.tape();
    std::vector<Var> terms;
    for (const auto& [path, f] : snapshot.fisher) {
        if (!theta.params().contains(path)) throw ValueError("ewc_loss: parameter missing: " + path);
        Var diff = sub(theta[path], tape.constant(snapshot.anchor.at(path)));
        terms.push_back(sum(hadamard(tape.constant(f), square(diff))));
    }
    if (terms.empty()) return tape.constant(Matrix::Zero(1, 1));
    return scale(add_n(terms), 0.5 * snapshot.lambda);
}

Var ewc_loss(ParamBinding& theta, const std::vector<FisherSnapshot>& snapshots) {
    std::vector<Var> terms;
    for (const auto& s : snapshots) terms.push_back(ewc_loss(theta, s));
    if (terms.empty()) return theta.tape().constant(Matrix::Zero(1, 1));
    return add_n(terms);
}

}  // namespace ad

}  // namespace comet
