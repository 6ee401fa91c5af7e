#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gopstream/autodiff.hpp"

namespace gopstream::ad {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    std::size_t coords_checked = 0;
    std::size_t params_with_nonzero_grad = 0;
};

struct GradCheckOptions {
    double eps = 1e-5;
    /// 0 checks every coordinate; otherwise a seeded random subset per parameter.
    std::size_t max_coords_per_param = 0;
    std::uint64_t seed = 1;
};

/// Compares reverse-mode gradients of a scalar graph against central
/// differences. `f` must build a fresh graph on the given tape and read the
/// parameters through Tape::param.
inline GradCheckReport grad_check(const std::function<Var<double>(Tape<double>&)>& f,
                                  const std::vector<Parameter<double>*>& params, const GradCheckOptions& opt = {}) {
    if (!(opt.eps > 0.0 && opt.eps <= 1e-3)) {
        throw Error(Errc::Precondition, "grad_check eps must lie in (0, 1e-3]");
    }
    auto eval = [&] {
        Tape<double> t;
        const double v = f(t).value()[0];
        if (!std::isfinite(v)) {
            throw Error(Errc::NonFiniteValue, "grad_check: objective is not finite");
        }
        return v;
    };

    GradStore<double> grads;
    {
        Tape<double> t;
        auto loss = f(t);
        if (!std::isfinite(loss.value()[0])) {
            throw Error(Errc::NonFiniteValue, "grad_check: objective is not finite");
        }
        t.backward(loss, grads);
    }

    GradCheckReport rep;
    std::mt19937_64 rng(opt.seed);
    for (auto* p : params) {
        const auto* g = grads.get(p);
        const std::size_t n = p->value.size();
        std::vector<std::size_t> coords(n);
        for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        if (opt.max_coords_per_param > 0 && n > opt.max_coords_per_param) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opt.max_coords_per_param);
        }
        bool nonzero = false;
        for (std::size_t i : coords) {
            const double saved = p->value[i];
            p->value[i] = saved + opt.eps;
            const double fp = eval();
            p->value[i] = saved - opt.eps;
            const double fm = eval();
            p->value[i] = saved;
            const double num = (fp - fm) / (2.0 * opt.eps);
            const double ana = g ? (*g)[i] : 0.0;
            nonzero = nonzero || ana != 0.0;
            const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-8});
            ++rep.coords_checked;
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_param = p->name;
                rep.worst_index = i;
                rep.analytic_at_worst = ana;
                rep.numeric_at_worst = num;
            }
        }
        rep.params_with_nonzero_grad += nonzero ? 1 : 0;
    }
    return rep;
}

}  // namespace gopstream::ad
