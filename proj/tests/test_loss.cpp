#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "dml/loss.hpp"
#include "dml/proxy.hpp"
#include "dml/rng.hpp"

using namespace dml;

namespace {

Tensor unit_rows(int64_t rows, int64_t cols, Rng& rng) {
    Tensor t({rows, cols});
    for (int64_t i = 0; i < rows; ++i) {
        double ss = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            double v = rng.uniform(-1.0, 1.0);
            t.data()[size_t(i * cols + j)] = float(v);
            ss += v * v;
        }
        double n = std::sqrt(ss);
        for (int64_t j = 0; j < cols; ++j) t.data()[size_t(i * cols + j)] /= float(n);
    }
    return t;
}

// brute-force double-loop evaluation of Eq. 2 in f64
double brute_force_pa(const Tensor& x, const Tensor& q, const std::vector<int>& labels,
                      const PALossConfig& cfg) {
    int64_t b = x.rows(), c = q.rows(), e = x.cols();
    auto sim = [&](int64_t i, int64_t p) {
        double s = 0.0;
        for (int64_t j = 0; j < e; ++j)
            s += double(x.data()[size_t(i * e + j)]) * q.data()[size_t(p * e + j)];
        return s;
    };
    double tau = cfg.pa_scale, delta = cfg.margin;
    int64_t pos_proxies = 0;
    for (int64_t p = 0; p < c; ++p)
        for (int64_t i = 0; i < b; ++i)
            if (labels[size_t(i)] == p) {
                ++pos_proxies;
                break;
            }
    double loss = 0.0;
    for (int64_t p = 0; p < c; ++p) {
        double pos_sum = 0.0, neg_sum = 0.0;
        bool has_pos = false;
        for (int64_t i = 0; i < b; ++i) {
            double d = sim(i, p);
            double tpos = cfg.published_convention ? -tau * (d - delta) : -tau * d + delta;
            double tneg = cfg.published_convention ? tau * (d + delta) : tau * d + delta;
            if (labels[size_t(i)] == p) {
                pos_sum += std::exp(tpos);
                has_pos = true;
            } else {
                neg_sum += std::exp(tneg);
            }
        }
        if (has_pos) loss += std::log1p(pos_sum) / double(pos_proxies);
        loss += std::log1p(neg_sum) / double(c);
    }
    return loss;
}

}  // namespace

TEST_CASE("single positive pair scalar oracle") {
    // B=1, C=1, d=1, tau=1, delta=0 -> log(1 + e^-1)
    Graph g;
    Tensor x = Tensor::from({1, 2}, {1.f, 0.f});
    Tensor q = Tensor::from({1, 2}, {1.f, 0.f});
    PALossConfig cfg;
    cfg.pa_scale = 1.0f;
    cfg.margin = 0.0f;
    CHECK(proxy_anchor_loss(g, x, q, {0}, cfg).item() ==
          doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-6));
    cfg.pa_scale = 2.0f;
    CHECK(proxy_anchor_loss(g, x, q, {0}, cfg).item() ==
          doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-6));
}

TEST_CASE("matches the brute-force oracle within 1e-6 on 20 instances") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed, 0xF0);
        int64_t b = 2 + int64_t(rng.below(15));   // <= 16
        int64_t c = 2 + int64_t(rng.below(7));    // <= 8
        int64_t e = 4 + int64_t(rng.below(29));   // <= 32
        Tensor x = unit_rows(b, e, rng);
        Tensor q = unit_rows(c, e, rng);
        std::vector<int> labels(size_t(b), 0);
        labels[0] = 0;  // guarantee at least one positive proxy
        for (size_t i = 1; i < labels.size(); ++i) labels[i] = int(rng.below(uint64_t(c)));
        PALossConfig cfg;
        cfg.pa_scale = float(4.0 + rng.uniform() * 28.0);
        cfg.margin = float(rng.uniform() * 0.3);
        cfg.published_convention = rng.below(2) == 1;
        Graph g;
        double got = proxy_anchor_loss(g, x, q, labels, cfg).item();
        double want = brute_force_pa(x, q, labels, cfg);
        INFO("seed ", seed);
        CHECK(std::abs(got - want) <= 1e-6 * (1.0 + std::abs(want)));
    }
}

TEST_CASE("loss is invariant under batch permutation") {
    Rng rng(77);
    Tensor x = unit_rows(6, 8, rng);
    Tensor q = unit_rows(3, 8, rng);
    std::vector<int> labels = {0, 1, 2, 0, 1, 2};
    PALossConfig cfg;
    cfg.pa_scale = 16.0f;
    Graph g;
    double base = proxy_anchor_loss(g, x, q, labels, cfg).item();
    // reverse the rows
    Tensor xr({6, 8});
    std::vector<int> lr(6);
    for (int64_t i = 0; i < 6; ++i) {
        lr[size_t(i)] = labels[size_t(5 - i)];
        for (int64_t j = 0; j < 8; ++j)
            xr.data()[size_t(i * 8 + j)] = x.data()[size_t((5 - i) * 8 + j)];
    }
    CHECK(proxy_anchor_loss(g, xr, q, lr, cfg).item() == doctest::Approx(base).epsilon(1e-6));
}

TEST_CASE("monotone in similarity: positive decreasing, negative increasing") {
    PALossConfig cfg;
    cfg.pa_scale = 8.0f;
    auto eval = [&](float pos_sim, float neg_sim) {
        float ps = std::sqrt(1.f - pos_sim * pos_sim);
        float ns = std::sqrt(1.f - neg_sim * neg_sim);
        Tensor x = Tensor::from({2, 2}, {pos_sim, ps, neg_sim, ns});
        Tensor q = Tensor::from({2, 2}, {1.f, 0.f, 0.f, 1.f});
        // row 0 positive for proxy 0; row 1 labeled 1 so it is a negative for proxy 0
        Graph g;
        return proxy_anchor_loss(g, x, q, {0, 1}, cfg).item();
    };
    CHECK(eval(0.9f, 0.1f) < eval(0.6f, 0.1f));  // higher positive sim, lower loss
    CHECK(eval(0.6f, 0.5f) > eval(0.6f, 0.1f));  // higher negative sim, higher loss
}

TEST_CASE("label out of range and empty positive set are errors") {
    Graph g;
    Tensor x = Tensor::from({1, 2}, {1.f, 0.f});
    Tensor q = Tensor::from({1, 2}, {1.f, 0.f});
    PALossConfig cfg;
    CHECK_THROWS_AS(proxy_anchor_loss(g, x, q, {3}, cfg), std::runtime_error);
    CHECK_THROWS_AS(proxy_anchor_loss(g, x, q, {0, 0}, cfg), std::runtime_error);  // B mismatch
}

TEST_CASE("training_loss with alpha=0 and all classes in batch equals PA on normalized P") {
    Rng rng(5);
    ProxyConfig pc;
    pc.alpha = 0.0f;
    pc.kind = AccumulatorKind::Ema;
    pc.lambda = 1.0f;  // identity accumulation, so P stays put
    ProxyState st = ProxyState::create(2, 6, pc, rng);
    st.cfg = pc;
    Tensor x0 = unit_rows(1, 6, rng);
    Tensor x1 = unit_rows(1, 6, rng);
    Graph g;
    auto row = [&](const Tensor& t) { return g.reshape(t, {6}); };
    std::vector<Tensor> embs = {row(x0), row(x1)};
    std::map<int, std::vector<Tensor>> grouped = {{0, {row(x0)}}, {1, {row(x1)}}};
    Rng order(0, 0);
    auto acc = accumulate_batch(g, grouped, st, order);
    PALossConfig cfg;
    cfg.pa_scale = 8.0f;
    double via_training = training_loss(g, embs, {0, 1}, acc, st, cfg).item();
    Tensor q = g.l2_normalize(st.P, 1, kL2NormEps);
    Tensor xs = g.stack_rows(embs);
    double via_pa = proxy_anchor_loss(g, xs, q, {0, 1}, cfg).item();
    CHECK(via_training == doctest::Approx(via_pa).epsilon(1e-6));
}

TEST_CASE("training_loss: non-batch gradients reach O but not P") {
    Rng rng(6);
    ProxyConfig pc;
    pc.alpha = 0.3f;
    pc.kind = AccumulatorKind::Ema;
    ProxyState st = ProxyState::create(3, 6, pc, rng);
    st.cfg = pc;
    st.O.set_requires_grad(true);
    st.P.set_requires_grad(true);
    Tensor x = unit_rows(2, 6, rng);
    Graph g;
    std::vector<Tensor> embs = {g.reshape(g.slice(x, 0, 0, 1), {6}),
                                g.reshape(g.slice(x, 0, 1, 2), {6})};
    std::map<int, std::vector<Tensor>> grouped = {{0, {embs[0]}}, {1, {embs[1]}}};
    Rng order(0, 0);
    auto acc = accumulate_batch(g, grouped, st, order);
    PALossConfig cfg;
    cfg.pa_scale = 8.0f;
    Tensor loss = training_loss(g, embs, {0, 1}, acc, st, cfg);
    g.backward(loss);
    st.O.ensure_grad();
    // class 2 is not in the batch: O row 2 gets gradient, P row 2 does not
    double o2 = 0.0;
    for (int64_t j = 0; j < 6; ++j) o2 += std::abs(st.O.grad()[size_t(2 * 6 + j)]);
    CHECK(o2 > 0.0);
    for (float v : st.P.grad()) CHECK(v == 0.0f);
    st.O.set_requires_grad(false);
    st.P.set_requires_grad(false);
}

TEST_CASE("cross entropy matches a scalar oracle and uniform baseline") {
    Graph g;
    Tensor logits = Tensor::from({1, 4}, {0.f, 0.f, 0.f, 0.f});
    CHECK(softmax_cross_entropy(g, logits, {2}).item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-6));
    Tensor l2 = Tensor::from({2, 2}, {3.f, 1.f, 0.5f, 2.5f});
    double want = 0.5 * (std::log1p(std::exp(-2.0)) + std::log1p(std::exp(-2.0)));
    CHECK(softmax_cross_entropy(g, l2, {0, 1}).item() == doctest::Approx(want).epsilon(1e-6));
}
