#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "gopstream/autodiff.hpp"

namespace gopstream::ad {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Parameters without a gradient in the store are
/// left untouched, as are frozen ones.
template <class T>
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamStore<T>& ps, const GradStore<T>& grads) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& p : ps) {
            if (!p.trainable) continue;
            const auto* g = grads.get(&p);
            if (g == nullptr) continue;
            if (g->size() != p.value.size()) {
                throw Error(Errc::ShapeMismatch, "gradient for '" + p.name + "' has " + std::to_string(g->size()) +
                                                     " entries, parameter has " + std::to_string(p.value.size()));
            }
            auto& st = state_[&p];
            if (st.m.empty()) {
                st.m.assign(p.value.size(), 0.0);
                st.v.assign(p.value.size(), 0.0);
            }
            for (std::size_t i = 0; i < g->size(); ++i) {
                const double gi = static_cast<double>((*g)[i]);
                st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
                st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
                const double mh = st.m[i] / c1;
                const double vh = st.v[i] / c2;
                p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
            }
        }
    }

    std::int64_t steps() const { return t_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::map<const Parameter<T>*, Moments> state_;
};

}  // namespace gopstream::ad
