#include "usra/optim.hpp"

#include <cmath>

#include "usra/error.hpp"

namespace usra {

float LrMap::resolve(const std::string& name) const {
    const std::pair<std::string, float>* best = nullptr;
    for (const auto& e : entries) {
        if (name.compare(0, e.first.size(), e.first) != 0) continue;
        if (!best || e.first.size() > best->first.size()) best = &e;
    }
    if (!best) raise(ErrorKind::logic, "no learning rate matches parameter '" + name + "'");
    return best->second;
}

void Optimizer::step(ParamSet& params) {
    for (Parameter* p : params) {
        const float lr = lr_map_.resolve(p->name);
        if (cfg_.plain_gradient) {
            for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= lr * p->grad[i];
            continue;
        }
        Moments& st = state_[p->name];
        if (st.m.empty()) {
            st.m = Tensor(p->value.shape(), 0.0f);
            st.v = Tensor(p->value.shape(), 0.0f);
        }
        ++st.t;
        const float b1 = cfg_.beta1, b2 = cfg_.beta2;
        const float bias1 = 1.0f - std::pow(b1, static_cast<float>(st.t));
        const float bias2 = 1.0f - std::pow(b2, static_cast<float>(st.t));
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const float g = p->grad[i];
            st.m[i] = b1 * st.m[i] + (1.0f - b1) * g;
            st.v[i] = b2 * st.v[i] + (1.0f - b2) * g * g;
            const float m_hat = st.m[i] / bias1;
            const float v_hat = st.v[i] / bias2;
            p->value[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.epsilon);
        }
    }
}

}  // namespace usra
