#include "xilab/adam.hpp"

#include <cmath>

namespace xilab::autodiff {

AdamState AdamState::init(const std::vector<Tensor>& params) {
    AdamState st;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const Tensor& p : params) {
        st.m.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
        st.v.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
    return st;
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
               AdamState& state, const AdamConfig& config) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ShapeError("adam_step: parameter/gradient/state counts disagree");
    if (state.step < 0) throw ShapeError("adam_step: negative step counter");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));

    for (std::size_t p = 0; p < params.size(); ++p) {
        if (params[p].shape() != grads[p].shape())
            throw ShapeError("adam_step: gradient shape " + shape_str(grads[p].shape()) +
                             " does not match parameter shape " + shape_str(params[p].shape()));
        auto pv = params[p].values();
        auto gv = grads[p].values();
        auto& m = state.m[p];
        auto& v = state.v[p];
        if (m.size() != pv.size())
            throw ShapeError("adam_step: state size does not match parameter " + std::to_string(p));
        for (std::size_t i = 0; i < pv.size(); ++i) {
            const double g = gv[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            pv[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
        }
    }
}

} // namespace xilab::autodiff
