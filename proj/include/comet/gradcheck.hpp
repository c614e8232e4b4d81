#pragma once

#include "comet/numerics.hpp"
#include "comet/params.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace comet {

/// Scalar objective recorded on a tape from bound parameters.
using TapedObjective = std::function<ad::Var(ParamBinding&)>;

/// One random problem: parameters, their objective and its analytic gradient.
struct GradCheckInstance {
    ParamSet theta;
    std::function<double(const ParamSet&)> value;
    std::function<ParamSet(const ParamSet&)> gradient;

    static GradCheckInstance from_taped(ParamSet theta, TapedObjective objective);
};

struct GradCheck {
    std::string module;
    std::string name;
    std::function<GradCheckInstance(std::uint64_t seed)> make;
};

struct GradCheckOptions {
    std::string filter;  // module name, or module.name; empty runs all
    int instances = 20;
    double tolerance = 1e-4;
    double step = 1e-4;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    std::string module;
    std::string name;
    int instances = 0;
    GradientComparison worst;
    bool passed = false;
};

/// Every analytic-vs-finite-difference comparison the library registers.
const std::vector<GradCheck>& gradient_checks();

/// Copy of `check` whose analytic gradient is negated; used to confirm the
/// harness notices a wrong gradient.
GradCheck with_flipped_sign(const GradCheck& check);

bool matches_filter(const GradCheck& check, const std::string& filter);

std::vector<GradCheckResult> run_gradient_checks(const std::vector<GradCheck>& checks, const GradCheckOptions& options);

/// Fixed-width pass/fail table, one row per check.
std::string format_grad_table(const std::vector<GradCheckResult>& results, double tolerance);

}  // namespace comet
