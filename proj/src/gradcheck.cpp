#include "dml/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace dml {

double grad_check(const TensorFn& f, const Tensor& x, double h) {
    Tensor probe = x.clone();
    probe.set_requires_grad(true);
    Graph g;
    Tensor y = f(g, probe);
    if (y.numel() != 1) throw std::runtime_error("grad_check: f must be scalar-valued");
    if (!std::isfinite(y.item())) throw std::runtime_error("grad_check: f(x) is not finite");
    probe.zero_grad();
    g.backward(y);
    probe.ensure_grad();

    auto eval = [&f, &x](int64_t i, double delta) {
        Tensor xq = x.clone();
        xq.data()[size_t(i)] = float(double(x.data()[size_t(i)]) + delta);
        Graph gq;
        double v = f(gq, xq).item();
        if (!std::isfinite(v)) throw std::runtime_error("grad_check: perturbed f(x) is not finite");
        return v;
    };

    // Error of the full gradient vector: ||analytic - numeric|| over
    // max(||analytic||, ||numeric||). Robust to f32 forward noise on
    // small-magnitude partials while still exposing any systematic
    // backward bug at O(0.1) and above.
    double diff2 = 0.0, an2 = 0.0, cd2sum = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        // Richardson-extrapolated central difference: the O(h^2) truncation term
        // cancels, leaving f32 forward noise ~ eps*|f|/h as the error floor.
        double cd1 = (eval(i, h) - eval(i, -h)) / (2.0 * h);
        double cd2 = (eval(i, h / 2) - eval(i, -h / 2)) / h;
        double cd = (4.0 * cd2 - cd1) / 3.0;
        double an = double(probe.grad()[size_t(i)]);
        diff2 += (an - cd) * (an - cd);
        an2 += an * an;
        cd2sum += cd * cd;
    }
    double denom = std::max({std::sqrt(an2), std::sqrt(cd2sum), 1e-8});
    return std::sqrt(diff2) / denom;
}

}  // namespace dml
