#include "dml/proxy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dml {

AccumulatorKind accumulator_from_string(const std::string& s) {
    if (s == "ema") return AccumulatorKind::Ema;
    if (s == "gru_relu") return AccumulatorKind::GruRelu;
    if (s == "gru_tanh") return AccumulatorKind::GruTanh;
    throw std::runtime_error("proxy: unknown accumulator '" + s + "'");
}

std::string to_string(AccumulatorKind k) {
    switch (k) {
        case AccumulatorKind::Ema: return "ema";
        case AccumulatorKind::GruRelu: return "gru_relu";
        case AccumulatorKind::GruTanh: return "gru_tanh";
    }
    return "?";
}

AblationMode ablation_from_string(const std::string& s) {
    if (s == "full") return AblationMode::Full;
    if (s == "sample") return AblationMode::Sample;
    if (s == "shared_encoder") return AblationMode::SharedEncoder;
    if (s == "fixed_encoder") return AblationMode::FixedEncoder;
    throw std::runtime_error("proxy: unknown ablation mode '" + s + "'");
}

std::string to_string(AblationMode m) {
    switch (m) {
        case AblationMode::Full: return "full";
        case AblationMode::Sample: return "sample";
        case AblationMode::SharedEncoder: return "shared_encoder";
        case AblationMode::FixedEncoder: return "fixed_encoder";
    }
    return "?";
}

ClassPromptStore ClassPromptStore::create(int num_classes, int cls_layers, int prompt_count, int dim,
                                          int patch_in_dim, Rng& rng) {
    ClassPromptStore s;
    s.num_classes = num_classes;
    s.cls_layers = cls_layers;
    s.prompt_count = prompt_count;
    s.dim = dim;
    s.entries.resize(size_t(num_classes));
    for (auto& e : s.entries) {
        e.layers.reserve(size_t(cls_layers));
        for (int l = 0; l < cls_layers; ++l)
            e.layers.push_back(prompt_count > 0 ? make_prompts(prompt_count, dim, patch_in_dim, rng)
                                                : Tensor());
    }
    return s;
}

void ClassPromptStore::require_resident(int c) const {
    if (c < 0 || c >= num_classes)
        throw std::runtime_error("class_prompts: class " + std::to_string(c) + " out of range");
    if (!entries[size_t(c)].resident)
        throw std::runtime_error("class_prompts: class " + std::to_string(c) +
                                 " is not resident (paging bug)");
}

int64_t ClassPromptStore::bytes_per_class() const {
    return int64_t(cls_layers) * prompt_count * dim * int64_t(sizeof(float));
}

std::string ClassPromptStore::param_name(int c, int layer) const {
    return "proxy.class_prompts.c" + std::to_string(c) + ".l" + std::to_string(layer);
}

std::vector<Tensor>& ClassPromptStore::class_layers(int c) {
    require_resident(c);
    return entries[size_t(c)].layers;
}

const std::vector<Tensor>& ClassPromptStore::class_layers(int c) const {
    require_resident(c);
    return entries[size_t(c)].layers;
}

const std::vector<float>& ClassPromptStore::layer_data(int c, int layer) const {
    const Entry& e = entries[size_t(c)];
    if (e.resident) {
        const Tensor& t = e.layers[size_t(layer)];
        return t.node()->data;
    }
    return e.backing[size_t(layer)];
}

void ClassPromptStore::set_layer_data(int c, int layer, const std::vector<float>& data) {
    Entry& e = entries[size_t(c)];
    if (int64_t(data.size()) != int64_t(prompt_count) * dim)
        throw std::runtime_error("class_prompts: bad payload size for " + param_name(c, layer));
    if (e.resident)
        e.layers[size_t(layer)].node()->data = data;
    else
        e.backing[size_t(layer)] = data;
}

ProxyState ProxyState::create(int num_classes, int embed_dim, const ProxyConfig& cfg, Rng& rng) {
    ProxyState s;
    s.cfg = cfg;
    int64_t c = num_classes, e = embed_dim;
    s.O = Tensor({c, e});
    double std = 1.0 / std::sqrt(double(e));
    for (float& v : s.O.data()) v = float(rng.normal(0.0, std));
    // P starts as normalize(O) so the first fusion is well defined
    s.P = Tensor({c, e});
    for (int64_t i = 0; i < c; ++i) {
        double ss = 0.0;
        for (int64_t j = 0; j < e; ++j) ss += double(s.O.data()[size_t(i * e + j)]) * double(s.O.data()[size_t(i * e + j)]);
        double n = std::max(std::sqrt(ss), double(kL2NormEps));
        for (int64_t j = 0; j < e; ++j) s.P.data()[size_t(i * e + j)] = float(double(s.O.data()[size_t(i * e + j)]) / n);
    }
    if (cfg.kind != AccumulatorKind::Ema) {
        double r = std::sqrt(6.0 / double(e + e));
        auto mk = [&](Tensor& t) {
            t = Tensor({e, e});
            for (float& v : t.data()) v = float(rng.uniform(-r, r));
        };
        mk(s.gru.wz);
        mk(s.gru.uz);
        mk(s.gru.wr);
        mk(s.gru.ur);
        mk(s.gru.wh);
        mk(s.gru.uh);
        s.gru.bz = Tensor({e});
        s.gru.br = Tensor({e});
        s.gru.bh = Tensor({e});
    }
    return s;
}

Tensor ProxyState::p_row(int c) const {
    int64_t e = P.cols();
    std::vector<float> row(size_t(e), 0.0f);
    std::copy(P.data().begin() + c * e, P.data().begin() + (c + 1) * e, row.begin());
    return Tensor::from({e}, std::move(row));
}

void ProxyState::set_p_row(int c, const Tensor& v) {
    int64_t e = P.cols();
    if (v.numel() != e) throw std::runtime_error("proxy: P row size mismatch");
    std::copy(v.data().begin(), v.data().end(), P.data().begin() + c * e);
}

Registry ProxyState::registry() const {
    Registry r;
    r.emplace_back("proxy.P", P);
    r.emplace_back("proxy.O", O);
    if (gru.present()) {
        r.emplace_back("proxy.gru.wz", gru.wz);
        r.emplace_back("proxy.gru.uz", gru.uz);
        r.emplace_back("proxy.gru.bz", gru.bz);
        r.emplace_back("proxy.gru.wr", gru.wr);
        r.emplace_back("proxy.gru.ur", gru.ur);
        r.emplace_back("proxy.gru.br", gru.br);
        r.emplace_back("proxy.gru.wh", gru.wh);
        r.emplace_back("proxy.gru.uh", gru.uh);
        r.emplace_back("proxy.gru.bh", gru.bh);
    }
    return r;
}

Registry ProxyState::trainable_registry() const {
    Registry r;
    for (auto& [name, t] : registry())
        if (name != "proxy.P") r.emplace_back(name, t);
    return r;
}

namespace {

double raw_norm(const Tensor& t) {
    double ss = 0.0;
    for (float v : t.data()) ss += double(v) * double(v);
    return std::sqrt(ss);
}

}  // namespace

Tensor ema_update(Graph& g, const Tensor& p_prev, const Tensor& p, float lambda, bool textbook,
                  int64_t* degenerate_counter) {
    if (lambda < 0.0f || lambda > 1.0f) throw std::runtime_error("ema_update: lambda must be in [0,1]");
    if (p_prev.shape() != p.shape())
        throw std::runtime_error("ema_update: shape mismatch " + shape_str(p_prev.shape()) + " vs " +
                                 shape_str(p.shape()));
    Tensor base = textbook ? g.scale(p_prev, lambda) : p_prev;
    Tensor s = g.add(base, g.scale(p, 1.0f - lambda));
    if (raw_norm(s) < 1e-12) {
        if (degenerate_counter) ++(*degenerate_counter);
        return p_prev;
    }
    return g.l2_normalize(s, 0, kL2NormEps);
}

Tensor gru_update(Graph& g, const Tensor& p_prev, const Tensor& p, const GruWeights& w,
                  AccumulatorKind kind, int64_t* degenerate_counter) {
    if (!w.present()) throw std::runtime_error("gru_update: weights not initialized");
    int64_t e = p.numel();
    if (p_prev.numel() != e || w.wz.rows() != e)
        throw std::runtime_error("gru_update: dimension mismatch");
    auto lin = [&](const Tensor& x, const Tensor& m) {
        return g.reshape(g.matmul(g.reshape(x, {1, e}), m), {e});
    };
    Tensor z = g.sigmoid(g.add(g.add(lin(p, w.wz), lin(p_prev, w.uz)), w.bz));
    Tensor r = g.sigmoid(g.add(g.add(lin(p, w.wr), lin(p_prev, w.ur)), w.br));
    Tensor cand_pre = g.add(g.add(lin(p, w.wh), g.mul(r, lin(p_prev, w.uh))), w.bh);
    Tensor cand = (kind == AccumulatorKind::GruTanh) ? g.tanh(cand_pre) : g.relu(cand_pre);
    Tensor one = Tensor::from({e}, std::vector<float>(size_t(e), 1.0f));
    Tensor keep = g.add(one, g.scale(z, -1.0f));
    Tensor mix = g.add(g.mul(keep, p_prev), g.mul(z, cand));
    if (raw_norm(mix) < 1e-12) {
        if (degenerate_counter) ++(*degenerate_counter);
        return p_prev;
    }
    return g.l2_normalize(mix, 0, kL2NormEps);
}

Tensor fuse_bias(Graph& g, const Tensor& p, const Tensor& o, float alpha) {
    if (alpha < 0.0f || alpha > 1.0f) throw std::runtime_error("fuse_bias: alpha must be in [0,1]");
    if (p.shape() != o.shape())
        throw std::runtime_error("fuse_bias: shape mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(o.shape()));
    Tensor mix = g.add(g.scale(p, 1.0f - alpha), g.scale(o, alpha));
    if (raw_norm(mix) < 1e-12)
        throw std::runtime_error("fuse_bias: zero-norm fusion (bad proxy initialization?)");
    return g.l2_normalize(mix, p.rank() - 1, kL2NormEps);
}

std::map<int, Tensor> accumulate_batch(Graph& g, const std::map<int, std::vector<Tensor>>& grouped,
                                       ProxyState& state, Rng& order_rng) {
    std::map<int, Tensor> updated;
    for (const auto& [cls, samples] : grouped) {
        if (samples.empty()) continue;
        std::vector<size_t> order(samples.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);
        // gradient never crosses into previous iterations
        Tensor cur = g.stop_gradient(state.p_row(cls));
        for (size_t idx : order) {
            const Tensor& p = samples[idx];
            switch (state.cfg.kind) {
                case AccumulatorKind::Ema:
                    cur = ema_update(g, cur, p, state.cfg.lambda, state.cfg.ema_textbook,
                                     &state.degenerate_updates);
                    break;
                case AccumulatorKind::GruRelu:
                case AccumulatorKind::GruTanh:
                    cur = gru_update(g, cur, p, state.gru, state.cfg.kind, &state.degenerate_updates);
                    break;
            }
        }
        updated.emplace(cls, cur);
    }
    return updated;
}

Tensor generate_proxy(Graph& g, const ViTModel& model, const ClassPromptStore& store, int class_id,
                      const Tensor& image, AblationMode mode) {
    Tensor out;
    switch (mode) {
        case AblationMode::Full: {
            store.require_resident(class_id);
            const auto& cls_prompts = store.class_layers(class_id);
            const HeadParams& head = model.proxy_head ? *model.proxy_head : model.sample_head;
            out = model.embed(g, image, head, cls_prompts);
            break;
        }
        case AblationMode::Sample:
        case AblationMode::SharedEncoder:
            out = model.embed(g, image, model.sample_head);
            break;
        case AblationMode::FixedEncoder:
            out = g.stop_gradient(model.embed(g, image, model.sample_head));
            break;
    }
    return g.l2_normalize(out, 0, kL2NormEps);
}

}  // namespace dml
