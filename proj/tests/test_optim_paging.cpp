#include <doctest.h>

#include <cmath>
#include <vector>

#include "dml/optim.hpp"
#include "dml/paging.hpp"
#include "dml/rng.hpp"

using namespace dml;

namespace {

ParamRef make_param(const std::string& name, std::vector<float> vals, std::vector<float> grads,
                    float lr) {
    Tensor t({int64_t(vals.size())});
    for (size_t i = 0; i < vals.size(); ++i) t.data()[i] = vals[i];
    t.ensure_grad();
    for (size_t i = 0; i < grads.size(); ++i) t.grad()[i] = grads[i];
    return ParamRef{name, t, lr};
}

}  // namespace

TEST_CASE("sgd scalar oracle") {
    OptimizerState st;
    st.cfg.kind = OptimKind::Sgd;
    ParamRef p = make_param("w", {1.0f}, {0.1f}, 1.0f);
    optimizer_step(st, {p});
    CHECK(p.tensor.data()[0] == doctest::Approx(0.9).epsilon(1e-7));
    CHECK(st.step == 1);
}

TEST_CASE("adaptive first step is a bias-corrected unit move") {
    // after bias correction mhat/sqrt(vhat) = g/|g|, so step 1 moves by ~lr
    OptimizerState st;
    st.cfg.kind = OptimKind::Adaptive;
    st.cfg.lr = 0.1f;
    for (float g : {0.5f, 4.0f, -0.01f}) {
        ParamRef p = make_param("w", {1.0f}, {g}, st.cfg.lr);
        OptimizerState fresh;
        fresh.cfg = st.cfg;
        optimizer_step(fresh, {p});
        double want = 1.0 - 0.1 * (g > 0 ? 1.0 : -1.0);
        CHECK(p.tensor.data()[0] == doctest::Approx(want).epsilon(1e-4));
    }
}

TEST_CASE("decoupled weight decay shrinks a parameter with zero gradient") {
    OptimizerState st;
    st.cfg.kind = OptimKind::AdaptiveDecoupled;
    st.cfg.lr = 1.0f;
    st.cfg.weight_decay = 0.01f;
    ParamRef p = make_param("w", {1.0f}, {0.0f}, st.cfg.lr);
    optimizer_step(st, {p});
    CHECK(p.tensor.data()[0] == doctest::Approx(0.99).epsilon(1e-7));
}

TEST_CASE("gradient clipping rescales to the requested global norm") {
    OptimizerState st;
    st.cfg.kind = OptimKind::Sgd;
    st.cfg.clip_norm = 1.0f;
    ParamRef p = make_param("w", {0.0f, 0.0f}, {3.0f, 4.0f}, 1.0f);
    CHECK(global_grad_norm({p}) == doctest::Approx(5.0));
    optimizer_step(st, {p});
    CHECK(p.tensor.data()[0] == doctest::Approx(-0.6).epsilon(1e-6));
    CHECK(p.tensor.data()[1] == doctest::Approx(-0.8).epsilon(1e-6));
}

TEST_CASE("moments are keyed by parameter name") {
    OptimizerState st;
    st.cfg.kind = OptimKind::Adaptive;
    ParamRef p = make_param("block0.wq", {1.0f}, {2.0f}, 0.1f);
    optimizer_step(st, {p});
    REQUIRE(st.moments.count("block0.wq") == 1);
    CHECK(st.moments["block0.wq"].m[0] == doctest::Approx(0.1 * 2.0));
    CHECK(st.moments["block0.wq"].v[0] == doctest::Approx(0.001 * 4.0));
    // a new tensor under the same name continues from the stored moments
    ParamRef q = make_param("block0.wq", {1.0f}, {0.0f}, 0.1f);
    optimizer_step(st, {q});
    CHECK(st.moments["block0.wq"].m[0] == doctest::Approx(0.9 * 0.2));
}

TEST_CASE("paging round-trips prompt bytes and optimizer moments") {
    Rng rng(3);
    ClassPromptStore store = ClassPromptStore::create(4, 2, 3, 8, 48, rng);
    OptimizerState opt;
    opt.cfg.kind = OptimKind::Adaptive;
    // give class 0 live moments by stepping its prompts once
    std::vector<ParamRef> params;
    for (int l = 0; l < 2; ++l) {
        Tensor t = store.class_layers(0)[size_t(l)];
        t.ensure_grad();
        for (float& g : t.grad()) g = 0.01f;
        params.push_back({store.param_name(0, l), t, 0.0f});  // lr 0: weights unchanged
    }
    optimizer_step(opt, params);
    REQUIRE(opt.moments.count(store.param_name(0, 0)) == 1);

    std::vector<std::vector<float>> before;
    for (int l = 0; l < 2; ++l)
        before.emplace_back(store.layer_data(0, l).begin(), store.layer_data(0, l).end());
    std::vector<float> m_before = opt.moments[store.param_name(0, 0)].m;

    PagingBuffer buf(store, opt, 2);  // classes 2,3 paged out at construction
    CHECK(store.resident(0));
    CHECK_FALSE(store.resident(3));
    buf.page({2, 3});  // evicts 0 and 1
    CHECK_FALSE(store.resident(0));
    CHECK(opt.moments.count(store.param_name(0, 0)) == 0);
    CHECK(buf.paged_moments().count(0) == 1);
    // paged-out tensors must not be silently readable
    CHECK_THROWS_AS(store.require_resident(0), std::runtime_error);

    buf.page({0, 1});
    CHECK(store.resident(0));
    for (int l = 0; l < 2; ++l) {
        const std::vector<float>& now = store.layer_data(0, l);
        REQUIRE(now.size() == before[size_t(l)].size());
        for (size_t i = 0; i < now.size(); ++i) CHECK(now[i] == before[size_t(l)][i]);
    }
    REQUIRE(opt.moments.count(store.param_name(0, 0)) == 1);
    const std::vector<float>& m_now = opt.moments[store.param_name(0, 0)].m;
    for (size_t i = 0; i < m_now.size(); ++i) CHECK(m_now[i] == m_before[i]);
}

TEST_CASE("paging counters track traffic and residency") {
    Rng rng(4);
    ClassPromptStore store = ClassPromptStore::create(5, 1, 2, 4, 48, rng);
    OptimizerState opt;
    PagingBuffer buf(store, opt, 2);
    int64_t per_class = store.bytes_per_class();
    CHECK(buf.counters().page_outs == 3);  // classes 2..4 trimmed at start
    CHECK(buf.counters().resident_bytes == 2 * per_class);
    buf.page({3, 4});
    CHECK(buf.counters().page_ins == 2);
    CHECK(buf.counters().page_outs == 5);
    CHECK(buf.counters().resident_bytes == 2 * per_class);
    CHECK(buf.counters().peak_resident_bytes == 2 * per_class);
    buf.page({3, 4});  // already resident: no traffic
    CHECK(buf.counters().page_ins == 2);
    CHECK(buf.counters().page_outs == 5);
}

TEST_CASE("full-capacity buffer never evicts") {
    Rng rng(5);
    ClassPromptStore store = ClassPromptStore::create(3, 1, 2, 4, 48, rng);
    OptimizerState opt;
    PagingBuffer buf(store, opt, 3);
    for (int pass = 0; pass < 4; ++pass) buf.page({0, 1, 2});
    CHECK(buf.counters().page_outs == 0);
    CHECK(buf.counters().page_ins == 0);
    for (int c = 0; c < 3; ++c) CHECK(store.resident(c));
}

TEST_CASE("oversized batches and bad capacities are rejected") {
    Rng rng(6);
    ClassPromptStore store = ClassPromptStore::create(4, 1, 2, 4, 48, rng);
    OptimizerState opt;
    CHECK_THROWS_AS(PagingBuffer(store, opt, 0), std::runtime_error);
    PagingBuffer buf(store, opt, 2);
    CHECK_THROWS_AS(buf.page({0, 1, 2}), std::runtime_error);
}

TEST_CASE("optimizer kind strings round-trip") {
    for (OptimKind k : {OptimKind::Sgd, OptimKind::Adaptive, OptimKind::AdaptiveDecoupled})
        CHECK(optim_kind_from_string(to_string(k)) == k);
    CHECK_THROWS_AS(optim_kind_from_string("momentum"), std::runtime_error);
}
