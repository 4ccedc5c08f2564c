#include "dml/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dml {

OptimKind optim_kind_from_string(const std::string& s) {
    if (s == "sgd") return OptimKind::Sgd;
    if (s == "adaptive") return OptimKind::Adaptive;
    if (s == "adaptive_decoupled") return OptimKind::AdaptiveDecoupled;
    throw std::runtime_error("optim: unknown kind '" + s + "'");
}

std::string to_string(OptimKind k) {
    switch (k) {
        case OptimKind::Sgd: return "sgd";
        case OptimKind::Adaptive: return "adaptive";
        case OptimKind::AdaptiveDecoupled: return "adaptive_decoupled";
    }
    return "?";
}

double global_grad_norm(const std::vector<ParamRef>& params) {
    double ss = 0.0;
    for (const ParamRef& p : params)
        for (float g : p.tensor.grad()) ss += double(g) * double(g);
    return std::sqrt(ss);
}

void optimizer_step(OptimizerState& state, const std::vector<ParamRef>& params) {
    const OptimConfig& c = state.cfg;
    ++state.step;

    double clip_scale = 1.0;
    if (c.clip_norm > 0.0f) {
        double n = global_grad_norm(params);
        if (n > double(c.clip_norm)) clip_scale = double(c.clip_norm) / n;
    }
    double bc1 = 1.0 - std::pow(double(c.beta1), double(state.step));
    double bc2 = 1.0 - std::pow(double(c.beta2), double(state.step));

    for (const ParamRef& p : params) {
        Tensor t = p.tensor;
        auto data = t.data();
        t.ensure_grad();
        auto grad = t.grad();
        double lr = p.lr;
        switch (c.kind) {
            case OptimKind::Sgd:
                for (size_t i = 0; i < data.size(); ++i)
                    data[i] -= float(lr * clip_scale * double(grad[i]));
                break;
            case OptimKind::Adaptive:
            case OptimKind::AdaptiveDecoupled: {
                Moments& mo = state.moments[p.name];
                if (mo.m.size() != data.size()) {
                    mo.m.assign(data.size(), 0.0f);
                    mo.v.assign(data.size(), 0.0f);
                }
                for (size_t i = 0; i < data.size(); ++i) {
                    double g = double(grad[i]) * clip_scale;
                    double m = double(c.beta1) * mo.m[i] + (1.0 - c.beta1) * g;
                    double v = double(c.beta2) * mo.v[i] + (1.0 - c.beta2) * g * g;
                    mo.m[i] = float(m);
                    mo.v[i] = float(v);
                    double mhat = m / bc1;
                    double vhat = v / bc2;
                    double upd = lr * mhat / (std::sqrt(vhat) + double(c.eps));
                    if (c.kind == OptimKind::AdaptiveDecoupled)
                        upd += lr * double(c.weight_decay) * double(data[i]);
                    data[i] -= float(upd);
                }
                break;
            }
        }
    }
}

}  // namespace dml
