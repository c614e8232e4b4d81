#include "comet/optimizer.hpp"

#include <cmath>

namespace comet {

void AdamState::apply(ParamSet& params, const ParamSet& grads, double lr) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (const auto& [path, g] : grads) {
        Matrix& theta = params.at(path);
        require_dims(theta.rows() == g.rows() && theta.cols() == g.cols(), "adam: gradient shape mismatch at " + path);
        if (!m.contains(path)) {
            m.set(path, Matrix::Zero(g.rows(), g.cols()));
            v.set(path, Matrix::Zero(g.rows(), g.cols()));
        }
        Matrix& mm = m.at(path);
        Matrix& vv = v.at(path);
        mm = beta1 * mm + (1.0 - beta1) * g;
        vv = beta2 * vv + (1.0 - beta2) * g.cwiseAbs2();
        if (lr == 0.0) continue;
        theta.array() -= lr * (mm.array() / c1) / ((vv.array() / c2).sqrt() + eps);
    }
}

bool AdamState::operator==(const AdamState& other) const {
    return m == other.m && v == other.v && step == other.step && beta1 == other.beta1 && beta2 == other.beta2 &&
           eps == other.eps;
}

}  // namespace comet
