#include "comet/params.hpp"

#include "comet/rng.hpp"

#include <cmath>

namespace comet {

const Matrix& ParamSet::at(const std::string& path) const {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw ValueError("unknown parameter path: " + path);
    return it->second;
}

Matrix& ParamSet::at(const std::string& path) {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw ValueError("unknown parameter path: " + path);
    return it->second;
}

void ParamSet::set(const std::string& path, Matrix value) {
    auto it = entries_.find(path);
    if (it != entries_.end()) {
        require_dims(it->second.rows() == value.rows() && it->second.cols() == value.cols(),
                     "parameter shape changed for " + path);
        it->second = std::move(value);
        return;
    }
    entries_.emplace(path, std::move(value));
}

std::vector<std::string> ParamSet::paths() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [path, _] : entries_) out.push_back(path);
    return out;
}

std::vector<std::string> ParamSet::paths_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (auto it = entries_.lower_bound(prefix); it != entries_.end(); ++it) {
        if (it->first.compare(0, prefix.size(), prefix) != 0) break;
        out.push_back(it->first);
    }
    return out;
}

Index ParamSet::scalar_count() const {
    Index n = 0;
    for (const auto& [_, m] : entries_) n += m.size();
    return n;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (const auto& [path, m] : entries_) out.entries_.emplace(path, Matrix::Zero(m.rows(), m.cols()));
    return out;
}

bool ParamSet::all_finite() const {
    for (const auto& [_, m] : entries_) {
        if (!m.allFinite()) return false;
    }
    return true;
}

bool ParamSet::operator==(const ParamSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    auto a = entries_.begin();
    auto b = other.entries_.begin();
    for (; a != entries_.end(); ++a, ++b) {
        if (a->first != b->first) return false;
        if (a->second.rows() != b->second.rows() || a->second.cols() != b->second.cols()) return false;
        if (a->second != b->second) return false;
    }
    return true;
}

ad::Var ParamBinding::operator[](const std::string& path) {
    auto it = bound_.find(path);
    if (it != bound_.end()) return it->second;
    const Matrix& value = params_.at(path);
    ad::Var v = trainable_ ? tape_.leaf(value) : tape_.constant(value);
    bound_.emplace(path, v);
    return v;
}

ParamSet ParamBinding::gradients() const {
    ParamSet out;
    for (const auto& [path, v] : bound_) out.set(path, tape_.grad(v));
    return out;
}

void ParamBinding::accumulate_gradients(ParamSet& out) const {
    for (const auto& [path, v] : bound_) {
        if (!tape_.has_grad(v)) {
            if (!out.contains(path)) out.set(path, Matrix::Zero(v.rows(), v.cols()));
            continue;
        }
        if (out.contains(path)) {
            out.at(path) += tape_.grad(v);
        } else {
            out.set(path, tape_.grad(v));
        }
    }
}

Matrix init_weight(std::uint64_t seed, const std::string& path, Index out, Index in, double gain) {
    Rng rng(derive_seed(seed, path));
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix w(out, in);
    for (Index i = 0; i < out; ++i) {
        for (Index j = 0; j < in; ++j) w(i, j) = dist(rng);
    }
    return w;
}

}  // namespace comet
