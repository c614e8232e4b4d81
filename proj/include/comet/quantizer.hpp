#pragma once

#include "comet/ad.hpp"
#include "comet/synthgen.hpp"
#include "comet/types.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <vector>

namespace comet {

/// Shared discrete codebook with EMA statistics. Rows [0, frozen_prefix)
/// were copied from the previous stage's codebook.
struct UnifiedCodebook {
    Matrix codes;    // K x D, e_i
    Vector counts;   // K, N_i
    Matrix volumes;  // K x D, o_i
    double gamma = 0.99;
    Index frozen_prefix = 0;       // K1
    double dead_threshold = 1e-3;  // eps_N

    Index size() const { return codes.rows(); }
    Index dim() const { return codes.cols(); }

    /// Codes drawn from N(0, scale^2); counts start at `initial_count` with
    /// volumes set so that e_i = o_i / N_i holds exactly.
    static UnifiedCodebook random(Index size, Index dim, double gamma, std::uint64_t seed, double scale = 1.0,
                                  double initial_count = 1.0, double dead_threshold = 1e-3);
    static UnifiedCodebook from_codes(Matrix codes, double gamma, double initial_count = 1.0,
                                      double dead_threshold = 1e-3);

    /// Throws unless shapes agree, entries are finite and 0 < gamma <= 1.
    void validate() const;
    bool operator==(const UnifiedCodebook& other) const;
};

/// Immutable copy of the previous stage's final codebook (V1).
class TeacherSnapshot {
public:
    TeacherSnapshot() = default;
    explicit TeacherSnapshot(const UnifiedCodebook& source) : codes_(source.codes) {}
    explicit TeacherSnapshot(Matrix codes) : codes_(std::move(codes)) {}

    const Matrix& codes() const { return codes_; }
    Index size() const { return codes_.rows(); }
    std::uint64_t fingerprint() const;

private:
    Matrix codes_;
};

struct Quantized {
    IndexList indices;
    Matrix codes;      // selected rows, T x D
    Vector distances;  // squared distances to the selected rows
};

/// Nearest code per row; ties go to the lowest index.
Quantized quantize(const Matrix& z, const Matrix& codes);
Quantized quantize(const FeatureSequence& z, const UnifiedCodebook& codebook);

/// beta * mean_t ||z_t - sg(e_t)||^2
double commitment_loss(const Matrix& z, const Matrix& codes, double beta);

/// Rows of modality A quantized to `indices_a`, with `r_b` the cross-attention
/// rows obtained by querying modality B with A (one per A row); symmetric for B.
void mm_ema_update(UnifiedCodebook& codebook, const Matrix& z_a, const IndexList& indices_a, const Matrix& r_b,
                   const Matrix& z_b, const IndexList& indices_b, const Matrix& r_a);

struct Expansion {
    UnifiedCodebook codebook;
    TeacherSnapshot teacher;
};

/// Copies `previous` and appends `added` rows drawn around the mean of its
/// active codes, with spread `init_scale` times their RMS deviation.
Expansion expand(const UnifiedCodebook& previous, Index added, std::uint64_t seed, double init_scale = 1.0);

struct CodeActivation {
    std::map<ModalityId, Index> counts;
    int effective_modalities = 0;
    int activation_class = 0;  // 0, 1, 2 or 3 (three or more)
};

struct ActivationReport {
    std::vector<CodeActivation> codes;
    std::array<Index, 4> class_counts{0, 0, 0, 0};

    /// Fraction of all codes shared by at least two modalities.
    double shared_fraction() const;
};

/// A code is effectively activated by a modality when its count exceeds
/// `threshold_fraction` of that modality's timesteps.
ActivationReport activation_stats(Index codebook_size, const std::map<ModalityId, IndexList>& runs,
                                  double threshold_fraction = 1e-3);

namespace ad {

Var commitment_loss(const Var& z, const Matrix& codes, double beta);

}  // namespace ad

}  // namespace comet
