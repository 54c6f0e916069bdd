#include "usra/gradcheck.hpp"

#include <cmath>
#include <cstdlib>

#include "usra/error.hpp"
#include "usra/rng.hpp"

namespace usra {

bool gradcheck_fault_injected() {
    const char* v = std::getenv("USRA_GRADCHECK_FAULT");
    return v && v[0] == '1';
}

GradCheckReport grad_check(const std::string& name, ParamSet& params, const LossBuilder& loss_fn, int n_probes,
                           float eps, float tol, uint64_t seed) {
    if (params.size() == 0) raise(ErrorKind::logic, "grad_check: empty parameter set");

    params.zero_grads();
    {
        Graph g;
        Var loss = loss_fn(g);
        if (!g.value(loss).all_finite()) raise(ErrorKind::logic, "grad_check: non-finite loss");
        g.backward(loss);
    }

    GradCheckReport report;
    report.name = name;
    for (std::size_t i = 0; i < params.size(); ++i)
        report.per_param.push_back({params[i].name, 0.0f, 0});

    const bool fault = gradcheck_fault_injected();
    Rng rng(derive_seed(seed, 0xfdba11));
    for (int probe = 0; probe < n_probes; ++probe) {
        const std::size_t pi = static_cast<std::size_t>(probe) % params.size();
        Parameter& p = params[pi];
        const std::size_t ei = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(p.value.size())));

        float analytic = p.grad[ei];
        if (fault && probe == 0) analytic += 0.1f;

        const float saved = p.value[ei];
        p.value[ei] = saved + eps;
        double plus, minus;
        {
            Graph g;
            plus = static_cast<double>(g.scalar_value(loss_fn(g)));
        }
        p.value[ei] = saved - eps;
        {
            Graph g;
            minus = static_cast<double>(g.scalar_value(loss_fn(g)));
        }
        p.value[ei] = saved;
        if (!std::isfinite(plus) || !std::isfinite(minus)) raise(ErrorKind::logic, "grad_check: non-finite loss");

        const double fd = (plus - minus) / (2.0 * static_cast<double>(eps));
        const double denom = std::max({1.0, std::fabs(static_cast<double>(analytic)), std::fabs(fd)});
        const float rel = static_cast<float>(std::fabs(static_cast<double>(analytic) - fd) / denom);

        report.per_param[pi].max_rel_err = std::max(report.per_param[pi].max_rel_err, rel);
        report.per_param[pi].probes += 1;
        report.max_rel_err = std::max(report.max_rel_err, rel);
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace usra
