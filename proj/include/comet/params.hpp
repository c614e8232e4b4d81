#pragma once

#include "comet/ad.hpp"
#include "comet/types.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace comet {

/// Named trainable arrays, keyed by stable dotted paths such as
/// "adapter.expert3.common.weight". Ordered so iteration is deterministic.
class ParamSet {
public:
    using Map = std::map<std::string, Matrix>;

    bool contains(const std::string& path) const { return entries_.count(path) != 0; }
    const Matrix& at(const std::string& path) const;
    Matrix& at(const std::string& path);
    /// Inserts or replaces; replacing with a different shape is an error.
    void set(const std::string& path, Matrix value);
    void erase(const std::string& path) { entries_.erase(path); }

    std::vector<std::string> paths() const;
    std::vector<std::string> paths_with_prefix(const std::string& prefix) const;
    Index scalar_count() const;
    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }

    ParamSet zeros_like() const;
    bool all_finite() const;

    Map::const_iterator begin() const { return entries_.begin(); }
    Map::const_iterator end() const { return entries_.end(); }
    Map::iterator begin() { return entries_.begin(); }
    Map::iterator end() { return entries_.end(); }

    bool operator==(const ParamSet& other) const;

private:
    Map entries_;
};

/// Binds ParamSet entries onto a tape on first use, so gradients collect
/// per path. A frozen binding records the values as constants.
class ParamBinding {
public:
    ParamBinding(ad::Tape& tape, const ParamSet& params, bool trainable = true)
        : tape_(tape), params_(params), trainable_(trainable) {}

    ad::Var operator[](const std::string& path);
    ad::Tape& tape() const { return tape_; }
    const ParamSet& params() const { return params_; }

    /// Gradients from the most recent backward sweep, for every bound path.
    ParamSet gradients() const;
    /// Adds gradients of bound paths into `out`, creating zero entries as needed.
    void accumulate_gradients(ParamSet& out) const;

private:
    ad::Tape& tape_;
    const ParamSet& params_;
    bool trainable_;
    std::map<std::string, ad::Var> bound_;
};

/// Seeded Glorot-uniform weight for an (out x in) layer; the stream
/// depends only on (seed, path) so creation order never matters.
Matrix init_weight(std::uint64_t seed, const std::string& path, Index out, Index in, double gain = 1.0);

}  // namespace comet
