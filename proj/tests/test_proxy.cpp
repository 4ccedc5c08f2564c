#include <doctest.h>

#include <cmath>
#include <map>

#include "dml/proxy.hpp"
#include "dml/rng.hpp"
#include "dml/vit.hpp"

using namespace dml;

namespace {

double row_norm(const Tensor& t, int64_t row, int64_t cols) {
    double s = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
        double v = t.data()[size_t(row * cols + j)];
        s += v * v;
    }
    return std::sqrt(s);
}

Tensor unit(std::vector<float> v) {
    double s = 0.0;
    for (float x : v) s += double(x) * x;
    for (float& x : v) x = float(x / std::sqrt(s));
    int64_t n = int64_t(v.size());
    return Tensor::from({n}, std::move(v));
}

}  // namespace

TEST_CASE("ema: lambda=1 is the identity on unit input") {
    Graph g;
    Tensor prev = unit({1.f, 0.f, 0.f});
    Tensor p = unit({0.f, 1.f, 0.f});
    Tensor next = ema_update(g, prev, p, 1.0f, false, nullptr);
    for (int64_t i = 0; i < 3; ++i)
        CHECK(next.data()[size_t(i)] == doctest::Approx(prev.data()[size_t(i)]).epsilon(1e-6));
}

TEST_CASE("ema hand oracle: e1, e2, lambda=0.5") {
    Graph g;
    Tensor next = ema_update(g, unit({1.f, 0.f}), unit({0.f, 1.f}), 0.5f, false, nullptr);
    CHECK(next.data()[0] == doctest::Approx(0.8944).epsilon(1e-4));
    CHECK(next.data()[1] == doctest::Approx(0.4472).epsilon(1e-4));
}

TEST_CASE("ema: collinear input is a fixed point") {
    Graph g;
    Tensor p = unit({0.6f, 0.8f});
    Tensor next = ema_update(g, p, p, 0.3f, false, nullptr);
    for (int64_t i = 0; i < 2; ++i)
        CHECK(next.data()[size_t(i)] == doctest::Approx(p.data()[size_t(i)]).epsilon(1e-6));
}

TEST_CASE("ema textbook flag switches the update form") {
    Graph g;
    Tensor prev = unit({1.f, 0.f});
    Tensor p = unit({0.f, 1.f});
    // textbook: normalize(0.25*e1 + 0.75*e2)
    Tensor next = ema_update(g, prev, p, 0.25f, true, nullptr);
    double n = std::sqrt(0.25 * 0.25 + 0.75 * 0.75);
    CHECK(next.data()[0] == doctest::Approx(0.25 / n).epsilon(1e-5));
    CHECK(next.data()[1] == doctest::Approx(0.75 / n).epsilon(1e-5));
}

TEST_CASE("ema degenerate update keeps P and counts") {
    Graph g;
    int64_t count = 0;
    Tensor prev = unit({1.f, 0.f});
    Tensor p = Tensor::from({2}, {-1.f, 0.f});  // prev + (1-0)*p = 0
    Tensor next = ema_update(g, prev, p, 0.0f, false, &count);
    CHECK(count == 1);
    CHECK(next.data()[0] == prev.data()[0]);
}

TEST_CASE("gru: all-zero weights is the identity on unit P_prev") {
    Rng rng(1);
    ProxyConfig pc;
    ProxyState st = ProxyState::create(1, 5, pc, rng);
    for (Tensor* t : {&st.gru.wz, &st.gru.uz, &st.gru.bz, &st.gru.wr, &st.gru.ur, &st.gru.br,
                      &st.gru.wh, &st.gru.uh, &st.gru.bh})
        for (float& v : t->data()) v = 0.f;
    Graph g;
    Tensor prev = unit({0.f, 0.6f, 0.f, 0.8f, 0.f});
    Tensor p = unit({1.f, 0.f, 0.f, 0.f, 0.f});
    for (AccumulatorKind k : {AccumulatorKind::GruRelu, AccumulatorKind::GruTanh}) {
        Tensor next = gru_update(g, prev, p, st.gru, k, nullptr);
        for (int64_t i = 0; i < 5; ++i)
            CHECK(next.data()[size_t(i)] == doctest::Approx(prev.data()[size_t(i)]).epsilon(1e-6));
    }
}

TEST_CASE("gru D'=2 worked example matches a scalar oracle") {
    Rng rng(2);
    ProxyConfig pc;
    ProxyState st = ProxyState::create(1, 2, pc, rng);
    // W = 2*I, U = 0, b = 0 for all three gates
    auto set = [](Tensor& t, std::vector<float> v) {
        for (size_t i = 0; i < v.size(); ++i) t.data()[i] = v[i];
    };
    for (Tensor* t : {&st.gru.wz, &st.gru.wr, &st.gru.wh}) set(*t, {2.f, 0.f, 0.f, 2.f});
    for (Tensor* t : {&st.gru.uz, &st.gru.ur, &st.gru.uh}) set(*t, {0.f, 0.f, 0.f, 0.f});
    for (Tensor* t : {&st.gru.bz, &st.gru.br, &st.gru.bh}) set(*t, {0.f, 0.f});
    Graph g;
    Tensor prev = unit({0.f, 1.f});
    Tensor p = unit({1.f, 0.f});
    Tensor next = gru_update(g, prev, p, st.gru, AccumulatorKind::GruRelu, nullptr);
    // z = sigmoid([2,0]) = (0.880797, 0.5); N = relu([2,0]) = (2,0)
    // mix = (1-z)*prev + z*N = (1.761594, 0.5) -> normalize
    double z0 = 1.0 / (1.0 + std::exp(-2.0));
    double m0 = z0 * 2.0, m1 = 0.5;
    double n = std::sqrt(m0 * m0 + m1 * m1);
    CHECK(next.data()[0] == doctest::Approx(m0 / n).epsilon(1e-5));
    CHECK(next.data()[1] == doctest::Approx(m1 / n).epsilon(1e-5));
}

TEST_CASE("rows stay unit-norm after 1000 random updates") {
    Rng rng(3);
    ProxyConfig pc;
    pc.kind = AccumulatorKind::GruRelu;
    ProxyState st = ProxyState::create(1, 6, pc, rng);
    Tensor cur = st.p_row(0);
    Rng draw(4);
    for (int i = 0; i < 1000; ++i) {
        Graph g;
        std::vector<float> v(6);
        for (float& x : v) x = float(draw.uniform(-1.0, 1.0));
        Tensor p = unit(v);
        cur = (i % 2 == 0) ? gru_update(g, cur, p, st.gru, pc.kind, nullptr)
                           : ema_update(g, cur, p, 0.5f, false, nullptr);
        CHECK(row_norm(cur, 0, 6) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("fuse_bias trivial and hand oracles") {
    Graph g;
    Tensor p = unit({1.f, 0.f});
    SUBCASE("alpha=0 returns P") {
        Tensor q = fuse_bias(g, p, Tensor::from({2}, {5.f, -2.f}), 0.0f);
        CHECK(q.data()[0] == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(q.data()[1] == doctest::Approx(0.0).epsilon(1e-6));
    }
    SUBCASE("alpha=1 returns normalized O") {
        Tensor q = fuse_bias(g, p, Tensor::from({2}, {0.f, -3.f}), 1.0f);
        CHECK(q.data()[1] == doctest::Approx(-1.0).epsilon(1e-6));
    }
    SUBCASE("alpha=0.3, P=e1, O=2e2") {
        Tensor q = fuse_bias(g, p, Tensor::from({2}, {0.f, 2.f}), 0.3f);
        CHECK(q.data()[0] == doctest::Approx(0.7593).epsilon(1e-4));
        CHECK(q.data()[1] == doctest::Approx(0.6508).epsilon(1e-4));
    }
}

TEST_CASE("accumulate_batch is order-sensitive but seeded, and leaves absent classes alone") {
    Rng rng(5);
    ProxyConfig pc;
    pc.kind = AccumulatorKind::Ema;
    pc.lambda = 0.5f;
    ProxyState st = ProxyState::create(3, 4, pc, rng);
    std::vector<float> before2(st.P.data().begin() + 2 * 4, st.P.data().begin() + 3 * 4);
    std::map<int, std::vector<Tensor>> grouped;
    grouped[0] = {unit({1.f, 0.f, 0.f, 0.f}), unit({0.f, 1.f, 0.f, 0.f})};
    Graph g;
    Rng o1(9, 1);
    auto r1 = accumulate_batch(g, grouped, st, o1);
    Graph g2;
    Rng o1b(9, 1);
    auto r1b = accumulate_batch(g2, grouped, st, o1b);
    // same order seed -> identical result
    for (int64_t i = 0; i < 4; ++i)
        CHECK(r1.at(0).data()[size_t(i)] == r1b.at(0).data()[size_t(i)]);
    // class 2 untouched
    for (int64_t i = 0; i < 4; ++i)
        CHECK(st.P.data()[size_t(2 * 4 + i)] == before2[size_t(i)]);
    // order (a,b) differs from (b,a): compute both manually
    Graph g3;
    Tensor ab = ema_update(g3, ema_update(g3, st.p_row(0), grouped[0][0], 0.5f, false, nullptr),
                           grouped[0][1], 0.5f, false, nullptr);
    Tensor ba = ema_update(g3, ema_update(g3, st.p_row(0), grouped[0][1], 0.5f, false, nullptr),
                           grouped[0][0], 0.5f, false, nullptr);
    double diff = 0.0;
    for (int64_t i = 0; i < 4; ++i)
        diff += std::abs(double(ab.data()[size_t(i)]) - ba.data()[size_t(i)]);
    CHECK(diff > 1e-4);
}

TEST_CASE("no gradient crosses the iteration boundary") {
    Rng rng(6);
    ProxyConfig pc;
    pc.kind = AccumulatorKind::GruRelu;
    ProxyState st = ProxyState::create(1, 4, pc, rng);
    // p carries grad; P_prev entering the batch must receive none
    Tensor p = unit({0.5f, 0.5f, 0.5f, 0.5f});
    p.set_requires_grad(true);
    st.P.set_requires_grad(true);
    Graph g;
    std::map<int, std::vector<Tensor>> grouped;
    grouped[0] = {p};
    Rng order(0, 0);
    auto updated = accumulate_batch(g, grouped, st, order);
    // scalar target: sum of updated row
    Tensor w = Tensor::from({4, 1}, {1.f, 1.f, 1.f, 1.f});
    Tensor y = g.matmul(g.reshape(updated.at(0), {1, 4}), w);
    g.backward(y);
    p.ensure_grad();
    double pg = 0.0;
    for (float v : p.grad()) pg += std::abs(v);
    CHECK(pg > 0.0);
    for (float v : st.P.grad()) CHECK(v == 0.0f);
    st.P.set_requires_grad(false);
}

TEST_CASE("generate_proxy differs across classes with different prompts") {
    Rng rng(7);
    ViTConfig vc;
    vc.image_size = 8;
    vc.patch_size = 4;
    vc.layers = 2;
    vc.hidden_dim = 8;
    vc.heads = 2;
    vc.mlp_ratio = 2;
    vc.head_out_dim = 8;
    ViTModel m = ViTModel::create(vc, rng);
    ClassPromptStore store = ClassPromptStore::create(2, 1, 2, 8, 48, rng);
    Tensor img({8, 8, 3});
    Rng irng(8);
    for (float& v : img.data()) v = float(irng.uniform(0.0, 1.0));
    Graph g;
    Tensor p0 = generate_proxy(g, m, store, 0, img, AblationMode::Full);
    Tensor p1 = generate_proxy(g, m, store, 1, img, AblationMode::Full);
    CHECK(row_norm(p0, 0, 8) == doctest::Approx(1.0).epsilon(1e-6));
    double diff = 0.0;
    for (int64_t i = 0; i < 8; ++i)
        diff += std::abs(double(p0.data()[size_t(i)]) - p1.data()[size_t(i)]);
    CHECK(diff > 1e-3);
}

TEST_CASE("non-resident class access is a hard error") {
    Rng rng(9);
    ClassPromptStore store = ClassPromptStore::create(2, 1, 2, 8, 48, rng);
    // manually page out class 1
    store.entries[1].backing.push_back(
        std::vector<float>(store.entries[1].layers[0].data().begin(),
                           store.entries[1].layers[0].data().end()));
    store.entries[1].layers[0] = Tensor();
    store.entries[1].resident = false;
    CHECK_THROWS_AS(store.require_resident(1), std::runtime_error);
    CHECK_NOTHROW(store.require_resident(0));
}

TEST_CASE("P initializes as normalize(O)") {
    Rng rng(10);
    ProxyConfig pc;
    ProxyState st = ProxyState::create(3, 6, pc, rng);
    for (int64_t c = 0; c < 3; ++c) {
        CHECK(row_norm(st.P, c, 6) == doctest::Approx(1.0).epsilon(1e-6));
        double on = row_norm(st.O, c, 6);
        for (int64_t j = 0; j < 6; ++j)
            CHECK(st.P.data()[size_t(c * 6 + j)] ==
                  doctest::Approx(st.O.data()[size_t(c * 6 + j)] / on).epsilon(1e-5));
    }
}
