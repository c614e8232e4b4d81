#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace comet {

using Scalar = double;
using Index = Eigen::Index;

using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
using IndexList = std::vector<Index>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class ValueError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

inline void require_dims(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

/// T x D block of per-timestep features. Holds raw inputs, semantic
/// features, modality-specific features or recurrent contexts.
/// Shape and bitwise-value equality; Eigen's operator== requires equal shapes.
template <typename A, typename B>
bool same_matrix(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

class FeatureSequence {
public:
    FeatureSequence() = default;

    explicit FeatureSequence(Matrix data) : data_(std::move(data)) {
        require_dims(data_.rows() >= 1 && data_.cols() >= 1, "FeatureSequence needs T >= 1 and D >= 1");
        if (!data_.allFinite()) throw ValueError("FeatureSequence entries must be finite");
    }

    Index steps() const { return data_.rows(); }
    Index dim() const { return data_.cols(); }

    const Matrix& matrix() const { return data_; }
    auto row(Index t) const { return data_.row(t); }

    bool operator==(const FeatureSequence& other) const {
        return data_.rows() == other.data_.rows() && data_.cols() == other.data_.cols() &&
               data_ == other.data_;
    }

private:
    Matrix data_;
};

}  // namespace comet
