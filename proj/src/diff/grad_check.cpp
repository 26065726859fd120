#include "lpq/diff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace lpq::diff {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

double evaluate(const GraphFn<double>& f, const std::vector<NamedTensor64>& theta) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    vars.reserve(theta.size());
    for (const auto& p : theta) vars.push_back(tape.constant(p.value));
    const double v = f(tape, vars).value().item();
    if (!std::isfinite(v)) throw NumericalError("objective returned a non-finite value");
    return v;
}

namespace {

std::vector<std::int64_t> pick_entries(std::int64_t n, std::int64_t limit, std::mt19937_64& rng) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (limit <= 0 || limit >= n) return idx;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(limit));
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

GradCheckReport grad_check_against(const GraphFn<double>& f, const std::vector<NamedTensor64>& theta,
                                   const std::vector<Tensor64>& analytic, const GradCheckOptions& opt) {
    require(opt.eps > 0, "grad_check: eps must be positive");
    require(analytic.size() == theta.size(), "grad_check: one analytic gradient per parameter");
    std::mt19937_64 rng(opt.seed);
    GradCheckReport report;
    std::vector<NamedTensor64> work = theta;
    for (std::size_t k = 0; k < theta.size(); ++k) {
        require(analytic[k].dims() == theta[k].value.dims(), "grad_check: gradient shape mismatch for " + theta[k].name);
        GradCheckEntry entry;
        entry.name = theta[k].name;
        for (std::int64_t i : pick_entries(theta[k].value.size(), opt.max_entries_per_param, rng)) {
            const double orig = theta[k].value[i];
            work[k].value[i] = orig + opt.eps;
            const double up = evaluate(f, work);
            const std::uint64_t up_state = opt.discrete_state ? opt.discrete_state() : 0;
            work[k].value[i] = orig - opt.eps;
            const double down = evaluate(f, work);
            const std::uint64_t down_state = opt.discrete_state ? opt.discrete_state() : 0;
            work[k].value[i] = orig;
            if (up_state != down_state) {
                ++entry.skipped;
                continue;
            }
            const double numeric = (up - down) / (2.0 * opt.eps);
            const double err = relative_error(analytic[k][i], numeric);
            ++entry.checked;
            if (err > entry.max_rel_error || entry.worst_index < 0) {
                entry.max_rel_error = std::max(entry.max_rel_error, err);
                entry.worst_index = i;
                entry.worst_analytic = analytic[k][i];
                entry.worst_numeric = numeric;
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.checked += entry.checked;
        report.skipped += entry.skipped;
        if (entry.max_rel_error > opt.tol) report.passed = false;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

GradCheckReport grad_check(const GraphFn<double>& f, const std::vector<NamedTensor64>& theta,
                           const GradCheckOptions& opt) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    vars.reserve(theta.size());
    for (const auto& p : theta) vars.push_back(tape.param(p.value));
    Var<double> loss = f(tape, vars);
    if (!std::isfinite(loss.value().item())) throw NumericalError("objective returned a non-finite value");
    auto grads = tape.backward(loss);
    std::vector<Tensor64> analytic;
    analytic.reserve(vars.size());
    for (const auto& v : vars) analytic.push_back(grads.at(v.id));
    return grad_check_against(f, theta, analytic, opt);
}

}  // namespace lpq::diff
