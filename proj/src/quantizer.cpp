#include "comet/quantizer.hpp"

#include "comet/io.hpp"
#include "comet/rng.hpp"

#include <cmath>

namespace comet {

UnifiedCodebook UnifiedCodebook::random(Index size, Index dim, double gamma, std::uint64_t seed, double scale,
                                        double initial_count, double dead_threshold) {
    Rng rng(derive_seed(seed, "codebook.init"));
    std::normal_distribution<double> n01(0.0, 1.0);
    Matrix codes(size, dim);
    for (Index i = 0; i < size; ++i) {
        for (Index j = 0; j < dim; ++j) codes(i, j) = scale * n01(rng);
    }
    return from_codes(std::move(codes), gamma, initial_count, dead_threshold);
}

UnifiedCodebook UnifiedCodebook::from_codes(Matrix codes, double gamma, double initial_count, double dead_threshold) {
    UnifiedCodebook cb;
    cb.counts = Vector::Constant(codes.rows(), initial_count);
    cb.volumes = codes * initial_count;
    cb.codes = std::move(codes);
    cb.gamma = gamma;
    cb.dead_threshold = dead_threshold;
    cb.validate();
    return cb;
}

void UnifiedCodebook::validate() const {
    require_dims(counts.size() == codes.rows(), "codebook counts length mismatch");
    require_dims(volumes.rows() == codes.rows() && volumes.cols() == codes.cols(), "codebook volume shape mismatch");
    require_dims(frozen_prefix >= 0 && frozen_prefix <= codes.rows(), "codebook frozen prefix out of range");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValueError("codebook decay must lie in (0, 1]");
    if (!codes.allFinite() || !counts.allFinite() || !volumes.allFinite()) {
        throw ValueError("codebook contains non-finite entries");
    }
}

bool UnifiedCodebook::operator==(const UnifiedCodebook& other) const {
    auto same = [](const auto& a, const auto& b) { return a.rows() == b.rows() && a.cols() == b.cols() && a == b; };
    return same(codes, other.codes) && same(counts, other.counts) && same(volumes, other.volumes) &&
           gamma == other.gamma && frozen_prefix == other.frozen_prefix && dead_threshold == other.dead_threshold;
}

std::uint64_t TeacherSnapshot::fingerprint() const {
    io::ByteWriter w;
    w.u64(static_cast<std::uint64_t>(codes_.rows()));
    w.u64(static_cast<std::uint64_t>(codes_.cols()));
    w.matrix_row_major(codes_);
    return io::checksum64(w.buffer());
}

Quantized quantize(const Matrix& z, const Matrix& codes) {
    if (codes.rows() == 0) throw ValueError("quantize: empty codebook");
    require_dims(z.cols() == codes.cols(), "quantize: feature dimension " + std::to_string(z.cols()) +
                                               " does not match code dimension " + std::to_string(codes.cols()));
    Quantized out;
    out.indices.resize(static_cast<std::size_t>(z.rows()));
    out.codes.resize(z.rows(), z.cols());
    out.distances.resize(z.rows());
    for (Index t = 0; t < z.rows(); ++t) {
        Index best = 0;
        double best_d = (codes.row(0) - z.row(t)).squaredNorm();
        for (Index i = 1; i < codes.rows(); ++i) {
            const double d = (codes.row(i) - z.row(t)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        out.indices[static_cast<std::size_t>(t)] = best;
        out.codes.row(t) = codes.row(best);
        out.distances(t) = best_d;
    }
    return out;
}

Quantized quantize(const FeatureSequence& z, const UnifiedCodebook& codebook) {
    return quantize(z.matrix(), codebook.codes);
}

namespace ad {

Var commitment_loss(const Var& z, const Matrix& codes, double beta) {
    require_dims(z.rows() == codes.rows() && z.cols() == codes.cols(), "commitment_loss: shape mismatch");
    Var diff = sub(z, z.tape().constant(codes));
    // mean over rows of the squared row norm
    return scale(sum(square(diff)), beta / static_cast<double>(z.rows()));
}

}  // namespace ad

double commitment_loss(const Matrix& z, const Matrix& codes, double beta) {
    ad::Tape tape;
    return ad::scalar(ad::commitment_loss(tape.constant(z), codes, beta));
}

void mm_ema_update(UnifiedCodebook& cb, const Matrix& z_a, const IndexList& indices_a, const Matrix& r_b,
                   const Matrix& z_b, const IndexList& indices_b, const Matrix& r_a) {
    require_dims(static_cast<Index>(indices_a.size()) == z_a.rows() && r_b.rows() == z_a.rows(),
                 "mm_ema_update: cross-attention rows for modality A are misaligned");
    require_dims(static_cast<Index>(indices_b.size()) == z_b.rows() && r_a.rows() == z_b.rows(),
                 "mm_ema_update: cross-attention rows for modality B are misaligned");
    require_dims(z_a.cols() == cb.dim() && z_b.cols() == cb.dim() && r_a.cols() == cb.dim() && r_b.cols() == cb.dim(),
                 "mm_ema_update: feature dimension mismatch");
    // gamma == 1 keeps every statistic; skipping avoids re-deriving e from o/N.
    if (cb.gamma == 1.0) return;

    const Index k = cb.size();
    Vector assigned = Vector::Zero(k);
    Matrix sums = Matrix::Zero(k, cb.dim());
    auto gather = [&](const Matrix& z, const IndexList& idx, const Matrix& r) {
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const Index i = idx[j];
            require_dims(i >= 0 && i < k, "mm_ema_update: code index out of range");
            assigned(i) += 1.0;
            sums.row(i) += 0.5 * (z.row(static_cast<Index>(j)) + r.row(static_cast<Index>(j)));
        }
    };
    gather(z_a, indices_a, r_b);
    gather(z_b, indices_b, r_a);

    const double keep = cb.gamma;
    const double take = 1.0 - cb.gamma;
    cb.counts = keep * cb.counts + take * assigned;
    cb.volumes = keep * cb.volumes + take * sums;
    for (Index i = 0; i < k; ++i) {
        if (assigned(i) > 0.0 && cb.counts(i) > cb.dead_threshold) cb.codes.row(i) = cb.volumes.row(i) / cb.counts(i);
    }
}

Expansion expand(const UnifiedCodebook& previous, Index added, std::uint64_t seed, double init_scale) {
    if (added < 0) throw ValueError("expand: negative number of new codes");
    previous.validate();
    const Index k1 = previous.size();
    const Index d = previous.dim();

    std::vector<Index> active;
    for (Index i = 0; i < k1; ++i) {
        if (previous.counts(i) > previous.dead_threshold) active.push_back(i);
    }
    if (active.empty()) {
        for (Index i = 0; i < k1; ++i) active.push_back(i);
    }
    RowVector center = RowVector::Zero(d);
    for (Index i : active) center += previous.codes.row(i);
    double spread = 0.0;
    if (!active.empty()) {
        center /= static_cast<double>(active.size());
        for (Index i : active) spread += (previous.codes.row(i) - center).squaredNorm();
        spread = std::sqrt(spread / static_cast<double>(active.size() * static_cast<std::size_t>(d)));
    }
    if (!(spread > 0.0)) spread = 1.0;

    Expansion out{previous, TeacherSnapshot(previous)};
    UnifiedCodebook& cb = out.codebook;
    cb.codes.conservativeResize(k1 + added, d);
    cb.volumes.conservativeResize(k1 + added, d);
    cb.counts.conservativeResize(k1 + added);
    Rng rng(derive_seed(seed, "codebook.expand"));
    std::normal_distribution<double> n01(0.0, 1.0);
    for (Index i = k1; i < k1 + added; ++i) {
        for (Index j = 0; j < d; ++j) cb.codes(i, j) = center(j) + init_scale * spread * n01(rng);
        cb.counts(i) = previous.dead_threshold;
        cb.volumes.row(i) = previous.dead_threshold * cb.codes.row(i);
    }
    cb.frozen_prefix = k1;
    return out;
}

double ActivationReport::shared_fraction() const {
    if (codes.empty()) return 0.0;
    return static_cast<double>(class_counts[2] + class_counts[3]) / static_cast<double>(codes.size());
}

ActivationReport activation_stats(Index codebook_size, const std::map<ModalityId, IndexList>& runs,
                                  double threshold_fraction) {
    ActivationReport report;
    report.codes.resize(static_cast<std::size_t>(codebook_size));
    for (const auto& [modality, indices] : runs) {
        std::vector<Index> counts(static_cast<std::size_t>(codebook_size), 0);
        for (Index i : indices) {
            require_dims(i >= 0 && i < codebook_size, "activation_stats: code index out of range");
            ++counts[static_cast<std::size_t>(i)];
        }
        const double threshold = threshold_fraction * static_cast<double>(indices.size());
        for (Index i = 0; i < codebook_size; ++i) {
            auto& code = report.codes[static_cast<std::size_t>(i)];
            code.counts[modality] = counts[static_cast<std::size_t>(i)];
            if (static_cast<double>(counts[static_cast<std::size_t>(i)]) > threshold && counts[static_cast<std::size_t>(i)] > 0) {
                ++code.effective_modalities;
            }
        }
    }
    for (auto& code : report.codes) {
        code.activation_class = std::min(code.effective_modalities, 3);
        ++report.class_counts[static_cast<std::size_t>(code.activation_class)];
    }
    return report;
}

}  // namespace comet
