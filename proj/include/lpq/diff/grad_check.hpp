#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lpq/diff/tape.hpp"

namespace lpq::diff {

// Builds a scalar objective on `tape` from leaf variables bound to the
// parameter tensors (same order as the parameter list).
template <typename T>
using GraphFn = std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>;

struct NamedTensor64 {
    std::string name;
    Tensor64 value;
};

struct GradCheckOptions {
    double eps = 1e-3;
    double tol = 1e-3;
    // 0 checks every entry; otherwise a seeded sample of this many entries
    // per parameter tensor.
    std::int64_t max_entries_per_param = 0;
    std::uint64_t seed = 0;
    // Optional digest of the discrete state reached by the most recent
    // evaluation (e.g. code signs). An entry whose +eps and -eps evaluations
    // disagree straddles a jump of the objective and is reported as skipped.
    std::function<std::uint64_t()> discrete_state;
};

struct GradCheckEntry {
    std::string name;
    std::int64_t checked = 0;
    std::int64_t skipped = 0;
    double max_rel_error = 0.0;
    std::int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    std::int64_t checked = 0;
    std::int64_t skipped = 0;
    bool passed = true;
};

// |a - n| / max(1, |a|, |n|)
double relative_error(double analytic, double numeric);

// Analytic gradients from a 64-bit reverse pass, compared against central
// differences of the same function.
GradCheckReport grad_check(const GraphFn<double>& f, const std::vector<NamedTensor64>& theta,
                           const GradCheckOptions& opt);

// As above, with the analytic gradients supplied by the caller (e.g. from the
// 32-bit training path). `analytic[i]` must match `theta[i]` in shape.
GradCheckReport grad_check_against(const GraphFn<double>& f, const std::vector<NamedTensor64>& theta,
                                   const std::vector<Tensor64>& analytic, const GradCheckOptions& opt);

// Evaluates f once without building gradients.
double evaluate(const GraphFn<double>& f, const std::vector<NamedTensor64>& theta);

}  // namespace lpq::diff
