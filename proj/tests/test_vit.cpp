#include <doctest.h>

#include <cmath>
#include <vector>

#include "dml/peft.hpp"
#include "dml/rng.hpp"
#include "dml/vit.hpp"

using namespace dml;

namespace {

ViTConfig toy() {
    ViTConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.layers = 2;
    c.hidden_dim = 8;
    c.heads = 2;
    c.mlp_ratio = 2;
    c.head_out_dim = 8;
    return c;
}

Tensor random_image(int side, Rng& rng) {
    Tensor t({side, side, 3});
    for (float& v : t.data()) v = float(rng.uniform(0.0, 1.0));
    return t;
}

}  // namespace

TEST_CASE("patch extraction matches an index-arithmetic oracle") {
    Rng rng(2);
    Tensor img = random_image(8, rng);
    Tensor patches = extract_patches(img, 4);
    REQUIRE(patches.rows() == 4);
    REQUIRE(patches.cols() == 4 * 4 * 3);
    // naive nested-loop extractor in raster order
    for (int p = 0; p < 4; ++p) {
        int py = (p / 2) * 4, px = (p % 2) * 4;
        int col = 0;
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x)
                for (int c = 0; c < 3; ++c, ++col) {
                    float expect = img.data()[size_t((((py + y) * 8) + px + x) * 3 + c)];
                    CHECK(patches.data()[size_t(p * 48 + col)] == expect);
                }
    }
}

TEST_CASE("patchify produces N+1 tokens with CLS at row 0") {
    Rng rng(3);
    ViTModel m = ViTModel::create(toy(), rng);
    Rng irng(4);
    Graph g;
    Tensor tokens = m.patchify(g, random_image(8, irng));
    CHECK(tokens.rows() == 5);
    CHECK(tokens.cols() == 8);
    // zero image: patch rows = bias + position embedding; CLS row = cls + pos row 0
    Tensor zero({8, 8, 3});
    Graph g2;
    Tensor zt = m.patchify(g2, zero);
    for (int64_t j = 0; j < 8; ++j) {
        float expect = m.cls_tok.data()[size_t(j)] + m.pos_emb.data()[size_t(j)];
        CHECK(zt.data()[size_t(j)] == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("zero prompts equals the plain forward bit-exactly") {
    Rng rng(5);
    ViTModel m = ViTModel::create(toy(), rng);
    Rng irng(6);
    Tensor img = random_image(8, irng);
    Graph g1;
    Tensor plain = m.embed(g1, img, m.sample_head);
    // empty per-layer prompt list through encode directly
    Graph g2;
    std::vector<Tensor> none(2);
    Tensor cls = m.encode(g2, m.patchify(g2, img), none);
    Tensor viaprompts = m.run_head(g2, cls, m.sample_head);
    REQUIRE(plain.numel() == viaprompts.numel());
    for (int64_t i = 0; i < plain.numel(); ++i)
        CHECK(plain.data()[size_t(i)] == viaprompts.data()[size_t(i)]);
}

TEST_CASE("prompts change the embedding, and prompt rows are discarded per layer") {
    Rng rng(7);
    ViTModel m = ViTModel::create(toy(), rng);
    Rng irng(8);
    Tensor img = random_image(8, irng);
    Graph g;
    Tensor base = m.embed(g, img, m.sample_head);
    Rng prng(9);
    m.prompts[0] = make_prompts(3, 8, 48, prng);
    Graph g2;
    Tensor prompted = m.embed(g2, img, m.sample_head);
    double diff = 0.0;
    for (int64_t i = 0; i < base.numel(); ++i)
        diff += std::abs(double(base.data()[size_t(i)]) - prompted.data()[size_t(i)]);
    CHECK(diff > 1e-4);
    m.prompts[0] = Tensor();
}

TEST_CASE("head with zero projection returns its bias") {
    Rng rng(10);
    HeadParams h = make_head(8, 8, rng);
    for (float& v : h.w.data()) v = 0.f;
    Rng irng(11);
    Tensor cls({8});
    for (float& v : cls.data()) v = float(irng.uniform(-1.0, 1.0));
    ViTModel m = ViTModel::create(toy(), rng);
    Graph g;
    Tensor out = m.run_head(g, cls, h);
    for (int64_t i = 0; i < 8; ++i) CHECK(out.data()[size_t(i)] == h.b.data()[size_t(i)]);
}

TEST_CASE("registry names every parameter exactly once") {
    Rng rng(12);
    ViTModel m = ViTModel::create(toy(), rng);
    Registry r = m.registry();
    std::vector<std::string> names;
    int64_t total = 0;
    for (auto& [name, t] : r) {
        names.push_back(name);
        total += t.numel();
    }
    std::sort(names.begin(), names.end());
    CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
    CHECK(count_params(r).total == total);
}

TEST_CASE("parameter accounting hits the closed-form counts at D=384") {
    // shared GRU weight block: 6*384^2 + 3*384
    CHECK(6 * 384 * 384 + 3 * 384 == 885888);
    // VPT(L:12, N:10, tau:0) prompt parameters at D=384
    std::vector<int> sched = prompt_schedule(10, 0, 12);
    int64_t prompts = 0;
    for (int n : sched) prompts += int64_t(n) * 384;
    CHECK(prompts == 46080);
}

TEST_CASE("full method yields tunable_fraction 1") {
    Rng rng(13);
    ViTModel m = ViTModel::create(toy(), rng);
    PeftConfig pc;
    pc.method = PeftMethod::Full;
    apply_method(m, pc, rng);
    ParamCounts c = count_params(m.registry());
    CHECK(c.tunable == c.total);
    CHECK(c.tunable_fraction == doctest::Approx(1.0));
}

TEST_CASE("attention rows sum to one inside a block") {
    // indirect check: softmax invariant is exercised through a full forward
    // remaining finite and bounded for wild inputs
    Rng rng(14);
    ViTModel m = ViTModel::create(toy(), rng);
    Rng irng(15);
    Tensor img = random_image(8, irng);
    Graph g;
    Tensor out = m.embed(g, img, m.sample_head);
    for (float v : out.data()) CHECK(std::isfinite(v));
}
