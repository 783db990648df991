#include "r3/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "r3/errors.hpp"

namespace r3 {

bool GradCheckReport::passed() const {
    return std::all_of(params.begin(), params.end(), [&](const ParamCheck& p) { return p.max_rel_error <= tol; });
}

double GradCheckReport::max_rel_error() const {
    double m = 0.0;
    for (const auto& p : params) m = std::max(m, p.max_rel_error);
    return m;
}

namespace {

double evaluate(const LossBuilder& loss) {
    Tape tape;
    Var out = loss(tape);
    const Tensor& v = tape.value(out);
    if (!v.is_scalar()) throw ContractError("finite_diff_check: loss is not a scalar, shape " + shape_str(v.shape()));
    return v.item();
}

}  // namespace

GradCheckReport finite_diff_check(const LossBuilder& loss, std::span<Parameter* const> params,
                                  const GradCheckOptions& opts) {
    if (!(opts.h > 0.0)) throw ContractError("finite_diff_check: step h must be positive");

    for (auto* p : params) p->zero_grad();
    {
        Tape tape;
        Var out = loss(tape);
        tape.backward(out);
    }

    const double base1 = evaluate(loss);
    const double base2 = evaluate(loss);
    if (std::memcmp(&base1, &base2, sizeof(double)) != 0) {
        throw OracleInvalid("finite_diff_check: loss is not deterministic (" + std::to_string(base1) + " vs " +
                            std::to_string(base2) + ")");
    }

    std::mt19937_64 rng(opts.seed);
    GradCheckReport report;
    report.tol = opts.tol;
    for (auto* p : params) {
        if (!p->trainable) continue;
        const std::size_t n = p->value.size();
        std::vector<std::size_t> coords(n);
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (opts.max_coords != 0 && n > opts.max_coords) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opts.max_coords);
            std::sort(coords.begin(), coords.end());
        }
        ParamCheck pc;
        pc.name = p->name;
        for (auto c : coords) {
            const double x0 = p->value[c];
            p->value[c] = x0 + opts.h;
            const double fp = evaluate(loss);
            p->value[c] = x0 - opts.h;
            const double fm = evaluate(loss);
            p->value[c] = x0;
            const double central = (fp - fm) / (2.0 * opts.h);
            const double analytic = p->grad[c];
            const double err = std::abs(analytic - central) / std::max(1.0, std::abs(analytic));
            pc.max_rel_error = std::max(pc.max_rel_error, err);
            ++pc.coords_checked;
        }
        report.params.push_back(std::move(pc));
    }
    return report;
}

}  // namespace r3
