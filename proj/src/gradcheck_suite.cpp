#include <cmath>
#include <memory>

#include "dml/gradcheck.hpp"
#include "dml/loss.hpp"
#include "dml/proxy.hpp"
#include "dml/rng.hpp"
#include "dml/vit.hpp"

namespace dml {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (float& v : t.data()) v = float(rng.uniform(-scale, scale));
    return t;
}

Tensor random_unit_rows(int64_t rows, int64_t cols, Rng& rng) {
    Tensor t = random_tensor({rows, cols}, rng);
    for (int64_t i = 0; i < rows; ++i) {
        double ss = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            double v = t.data()[size_t(i * cols + j)];
            ss += v * v;
        }
        double n = std::sqrt(ss);
        for (int64_t j = 0; j < cols; ++j) t.data()[size_t(i * cols + j)] /= float(n);
    }
    return t;
}

Tensor row_vec(const Tensor& t) {  // 1xN -> rank-1 N
    return Tensor::from({t.numel()}, std::vector<float>(t.data().begin(), t.data().end()));
}

// scalar projection with fixed weights, so any tensor-valued op becomes checkable
Tensor scalarize(Graph& g, const Tensor& t, const Tensor& w) {
    return g.reshape(g.matmul(g.reshape(t, {1, t.numel()}), w), {1});
}

ViTConfig toy_config() {
    ViTConfig vc;
    vc.image_size = 8;
    vc.patch_size = 4;
    vc.layers = 2;
    vc.hidden_dim = 8;
    vc.heads = 2;
    vc.mlp_ratio = 2;
    vc.head_out_dim = 8;
    return vc;
}

Tensor toy_image(Rng& rng) {
    Tensor image({8, 8, 3});
    for (float& v : image.data()) v = float(rng.uniform(0.1, 0.9));
    return image;
}

Tensor unit_vec(const Tensor& t) {
    Tensor out = t.clone();
    double ss = 0.0;
    for (float v : out.data()) ss += double(v) * v;
    double n = std::sqrt(ss);
    for (float& v : out.data()) v = float(v / n);
    return out;
}

// Distance of the GRU candidate pre-activations from the ReLU kink. Finite
// differences assume a differentiable neighborhood, so probes are resampled
// until every pre-activation clears the step size by a margin.
double min_abs_cand_pre(const Tensor& prev, const Tensor& p, const GruWeights& w) {
    int64_t e = p.numel();
    auto lin = [&](const Tensor& x, const Tensor& m, int64_t j) {
        double s = 0.0;
        for (int64_t i = 0; i < e; ++i)
            s += double(x.data()[size_t(i)]) * double(m.data()[size_t(i * e + j)]);
        return s;
    };
    double mn = 1e30;
    for (int64_t j = 0; j < e; ++j) {
        double rj = 1.0 / (1.0 + std::exp(-(lin(p, w.wr, j) + lin(prev, w.ur, j) +
                                            double(w.br.data()[size_t(j)]))));
        double pre = lin(p, w.wh, j) + rj * lin(prev, w.uh, j) + double(w.bh.data()[size_t(j)]);
        mn = std::min(mn, std::abs(pre));
    }
    return mn;
}

}  // namespace

std::vector<GradCheckItem> run_gradcheck_suite(uint64_t seed, bool include_corrupted, double h_override) {
    std::vector<GradCheckItem> items;
    Rng rng(seed, 0x6C);
    auto weights = [&rng](int64_t n) { return random_tensor({n, 1}, rng); };

    auto add_item = [&items, h_override](const std::string& name, const TensorFn& f, const Tensor& x,
                                         double h = 1e-2) {
        items.push_back({name, grad_check(f, x, h_override > 0.0 ? h_override : h)});
    };

    {
        Tensor b = random_tensor({5, 3}, rng);
        Tensor bias = random_tensor({3}, rng);
        Tensor w = weights(4 * 3);
        add_item(
            "matmul_add_relu",
            [b, bias, w](Graph& g, const Tensor& x) {
                return scalarize(g, g.relu(g.add(g.matmul(x, b), bias)), w);
            },
            random_tensor({4, 5}, rng));
    }
    {
        Tensor c = random_tensor({3, 4}, rng);
        Tensor w = weights(3 * 4);
        add_item(
            "mul_scale",
            [c, w](Graph& g, const Tensor& x) { return scalarize(g, g.scale(g.mul(x, c), 1.7f), w); },
            random_tensor({3, 4}, rng));
    }
    {
        Tensor c = random_tensor({2, 4}, rng);
        Tensor w = weights(4 * 3);
        add_item(
            "concat_slice_transpose",
            [c, w](Graph& g, const Tensor& x) {
                Tensor cat = g.concat({x, c}, 0);         // 5 x 4
                Tensor sl = g.slice(cat, 0, 1, 4);        // 3 x 4
                return scalarize(g, g.transpose(sl), w);  // 4 x 3
            },
            random_tensor({3, 4}, rng));
    }
    {
        Tensor w = weights(3 * 5);
        add_item(
            "softmax",
            [w](Graph& g, const Tensor& x) { return scalarize(g, g.softmax(x, 1), w); },
            random_tensor({3, 5}, rng, 2.0));
    }
    {
        Tensor gamma = random_tensor({6}, rng);
        Tensor beta = random_tensor({6}, rng);
        Tensor w = weights(3 * 6);
        add_item(
            "layer_norm",
            [gamma, beta, w](Graph& g, const Tensor& x) {
                return scalarize(g, g.layer_norm(x, gamma, beta, kLayerNormEps), w);
            },
            random_tensor({3, 6}, rng));
    }
    {
        Tensor w = weights(4 * 4);
        add_item(
            "gelu",
            [w](Graph& g, const Tensor& x) { return scalarize(g, g.gelu(x), w); },
            random_tensor({4, 4}, rng, 2.0));
    }
    {
        Tensor w = weights(4 * 4);
        add_item(
            "sigmoid_tanh",
            [w](Graph& g, const Tensor& x) { return scalarize(g, g.tanh(g.sigmoid(x)), w); },
            random_tensor({4, 4}, rng, 2.0));
    }
    {
        Tensor w = weights(3 * 6);
        add_item(
            "l2_normalize",
            [w](Graph& g, const Tensor& x) {
                return scalarize(g, g.l2_normalize(x, 1, kL2NormEps), w);
            },
            random_tensor({3, 6}, rng));
    }
    add_item(
        "log1p_exp_sum", [](Graph& g, const Tensor& x) { return g.log1p_exp_sum(x); },
        random_tensor({7}, rng, 2.0), 2e-2);
    {
        Tensor w = weights(5);
        add_item(
            "mean", [w](Graph& g, const Tensor& x) { return scalarize(g, g.mean(x, 0), w); },
            random_tensor({4, 5}, rng));
    }
    {
        Rng arng(seed, 0xAD);
        AdapterParams a = make_adapter(6, 3, AdapterPosition::Sequential, AdapterSite::PostMlp, arng);
        a.up_w = random_tensor({3, 6}, arng);  // zero-init up would hide the down path
        Tensor w = weights(4 * 6);
        add_item(
            "adapter",
            [a, w](Graph& g, const Tensor& x) { return scalarize(g, adapter_forward(g, x, a), w); },
            random_tensor({4, 6}, rng));
    }
    {
        // 2-layer toy encoder, derivative w.r.t. the layer-0 prompt slot
        Rng mrng(seed, 0xB0);
        auto model = std::make_shared<ViTModel>(ViTModel::create(toy_config(), mrng));
        Tensor image = toy_image(rng);
        Tensor w = weights(model->cfg.head_out_dim);
        add_item(
            "prompt_injection",
            [model, image, w](Graph& g, const Tensor& x) {
                model->prompts[0] = x;
                Tensor emb = model->embed(g, image, model->sample_head);
                model->prompts[0] = Tensor();
                return scalarize(g, emb, w);
            },
            random_tensor({3, 8}, rng, 0.3), 1e-2);
    }
    {
        Rng grng(seed, 0x60);
        ProxyConfig pc;
        pc.kind = AccumulatorKind::GruRelu;
        ProxyState st = ProxyState::create(1, 6, pc, grng);
        Tensor prev = row_vec(random_unit_rows(1, 6, rng));
        GruWeights gw = st.gru;
        Tensor w = weights(6);
        Tensor x0 = random_tensor({6}, rng);
        while (min_abs_cand_pre(prev, unit_vec(x0), gw) < 0.05) x0 = random_tensor({6}, rng);
        add_item(
            "gru_update",
            [prev, gw, w](Graph& g, const Tensor& x) {
                Tensor p = g.l2_normalize(x, 0, kL2NormEps);
                Tensor nxt = gru_update(g, prev, p, gw, AccumulatorKind::GruRelu, nullptr);
                return scalarize(g, nxt, w);
            },
            x0);
        Tensor p_fixed = row_vec(random_unit_rows(1, 6, rng));
        while (min_abs_cand_pre(prev, p_fixed, gw) < 0.05)
            p_fixed = row_vec(random_unit_rows(1, 6, rng));
        add_item(
            "gru_weights",
            [prev, gw, p_fixed, w](Graph& g, const Tensor& x) {
                GruWeights gw2 = gw;
                gw2.wh = x;
                Tensor nxt = gru_update(g, prev, p_fixed, gw2, AccumulatorKind::GruRelu, nullptr);
                return scalarize(g, nxt, w);
            },
            gw.wh.clone());
    }
    {
        Tensor prev = row_vec(random_unit_rows(1, 5, rng));
        Tensor o = random_tensor({5}, rng);
        Tensor w = weights(5);
        add_item(
            "ema_fusion",
            [prev, o, w](Graph& g, const Tensor& x) {
                Tensor p = g.l2_normalize(x, 0, kL2NormEps);
                Tensor nxt = ema_update(g, prev, p, 0.5f, false, nullptr);
                return scalarize(g, fuse_bias(g, nxt, o, 0.3f), w);
            },
            random_tensor({5}, rng), 2e-2);
        Tensor p_fixed = row_vec(random_unit_rows(1, 5, rng));
        add_item(
            "bias_fusion",
            [p_fixed, w](Graph& g, const Tensor& x) {
                return scalarize(g, fuse_bias(g, p_fixed, x, 0.3f), w);
            },
            random_tensor({5}, rng), 2e-2);
    }
    {
        PALossConfig lc;
        lc.pa_scale = 8.0f;
        lc.margin = 0.1f;
        std::vector<int> labels = {0, 1, 0, 2};
        Tensor q = random_unit_rows(3, 6, rng);
        add_item(
            "pa_loss_embeddings",
            [q, labels, lc](Graph& g, const Tensor& x) {
                return proxy_anchor_loss(g, g.l2_normalize(x, 1, kL2NormEps), q, labels, lc);
            },
            random_tensor({4, 6}, rng));
        Tensor xe = random_unit_rows(4, 6, rng);
        add_item(
            "pa_loss_proxies",
            [xe, labels, lc](Graph& g, const Tensor& x) {
                return proxy_anchor_loss(g, xe, g.l2_normalize(x, 1, kL2NormEps), labels, lc);
            },
            random_tensor({3, 6}, rng));
    }
    {
        // end-to-end toy: 2-layer encoder, class prompts, GRU accumulation,
        // fused proxies, PA loss; derivative w.r.t. the class-0 prompts
        Rng mrng(seed, 0xE2);
        auto model = std::make_shared<ViTModel>(ViTModel::create(toy_config(), mrng));
        ProxyConfig pc;
        pc.enabled = true;
        pc.class_prompt_count = 2;
        pc.cls_layers = 1;
        // Tanh variant: smooth everywhere, so the finite-difference oracle is
        // clean; the ReLU kink is covered by the gru_update item
        pc.kind = AccumulatorKind::GruTanh;
        auto state = std::make_shared<ProxyState>(ProxyState::create(2, 8, pc, mrng));
        auto store = std::make_shared<ClassPromptStore>(
            ClassPromptStore::create(2, 1, 2, 8, 4 * 4 * 3, mrng));
        // both samples in class 0: the probe's gradient flows through two
        // chained GRU updates, which keeps it well above the f32 noise floor
        std::vector<Tensor> images = {toy_image(rng), toy_image(rng)};
        std::vector<int> labels = {0, 0};
        // modest scale keeps the loss curvature low enough that the
        // finite-difference window clears the f32 noise floor
        PALossConfig lc;
        lc.pa_scale = 2.0f;
        uint64_t sd = seed;
        TensorFn e2e =
            [model, state, store, images, labels, lc, sd](Graph& g, const Tensor& x) {
                store->entries[0].layers[0] = x;
                std::vector<Tensor> embs;
                std::map<int, std::vector<Tensor>> grouped;
                for (size_t i = 0; i < images.size(); ++i) {
                    embs.push_back(g.l2_normalize(model->embed(g, images[i], model->sample_head), 0,
                                                  kL2NormEps));
                    grouped[labels[i]].push_back(generate_proxy(g, *model, *store, labels[i],
                                                                images[i], AblationMode::Full));
                }
                Rng order_rng(sd, 0xE3);
                auto acc = accumulate_batch(g, grouped, *state, order_rng);
                return training_loss(g, embs, labels, acc, *state, lc);
            };
        // The deep f32 chain leaves only a narrow window between truncation
        // and rounding noise, and its location shifts with the instance; scan
        // a small step ladder and keep the best agreement. A wrong backward
        // floors at every step, so this cannot mask a real bug.
        Tensor probe = store->entries[0].layers[0].clone();
        double best = 1e30;
        for (double h : {1.5e-2, 2e-2, 3e-2, 4e-2, 6e-2, 8e-2})
            best = std::min(best, grad_check(e2e, probe, h_override > 0.0 ? h_override : h));
        items.push_back({"end_to_end_toy", best});
    }

    if (include_corrupted) {
        // fixture with a deliberately wrong backward, to prove the harness
        // actually fails on bad gradients
        add_item(
            "corrupted_backward_fixture",
            [](Graph& g, const Tensor& x) {
                Tensor out = Tensor::scalar(0.0f);
                double s = 0.0;
                for (float v : x.data()) s += std::sin(double(v));
                out.data()[0] = float(s);
                if (x.requires_grad()) {
                    out.set_requires_grad(true);
                    g.push_backward([x, out] {
                        if (out.node()->grad.empty()) return;
                        x.node()->ensure_grad();
                        for (auto& gv : x.node()->grad) gv += out.node()->grad[0] * 42.0f;
                    });
                }
                return out;
            },
            random_tensor({4}, rng));
    }

    return items;
}

}  // namespace dml
