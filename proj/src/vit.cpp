#include "dml/vit.hpp"

#include <cmath>
#include <stdexcept>

namespace dml {

void ViTConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0 || layers <= 0 || hidden_dim <= 0 || heads <= 0 ||
        mlp_ratio <= 0 || head_out_dim <= 0)
        throw std::runtime_error("vit: all config dimensions must be positive");
    if (image_size % patch_size != 0)
        throw std::runtime_error("vit: image_size " + std::to_string(image_size) +
                                 " not divisible by patch_size " + std::to_string(patch_size));
    if (hidden_dim % heads != 0)
        throw std::runtime_error("vit: hidden_dim " + std::to_string(hidden_dim) +
                                 " not divisible by heads " + std::to_string(heads));
}

namespace {

Tensor uniform_init(Shape shape, double r, Rng& rng) {
    Tensor t(shape);
    for (float& v : t.data()) v = float(rng.uniform(-r, r));
    return t;
}

Tensor normal_init(Shape shape, double std, Rng& rng) {
    Tensor t(shape);
    for (float& v : t.data()) v = float(rng.normal(0.0, std));
    return t;
}

Tensor xavier(int64_t fan_in, int64_t fan_out, Rng& rng) {
    double r = std::sqrt(6.0 / double(fan_in + fan_out));
    return uniform_init({fan_in, fan_out}, r, rng);
}

Tensor ones(int64_t n) {
    Tensor t({n});
    std::fill(t.data().begin(), t.data().end(), 1.0f);
    return t;
}

}  // namespace

HeadParams make_head(int in_dim, int out_dim, Rng& rng) {
    HeadParams h;
    h.ln_g = ones(in_dim);
    h.ln_b = Tensor({in_dim});
    h.w = xavier(in_dim, out_dim, rng);
    h.b = Tensor({out_dim});
    return h;
}

AdapterParams make_adapter(int dim, int mid_dim, AdapterPosition pos, AdapterSite site, Rng& rng) {
    AdapterParams a;
    // kaiming-uniform down projection, zero up projection: identity at init
    double r = std::sqrt(6.0 / double(dim));
    a.down_w = uniform_init({dim, mid_dim}, r, rng);
    a.down_b = Tensor({mid_dim});
    a.up_w = Tensor({mid_dim, dim});
    a.up_b = Tensor({dim});
    a.position = pos;
    a.site = site;
    return a;
}

Tensor make_prompts(int count, int dim, int patch_in_dim, Rng& rng) {
    // fan-based range over the patch projection dims, as in shallow VPT init
    double r = std::sqrt(6.0 / double(dim + patch_in_dim));
    return uniform_init({count, dim}, r, rng);
}

ViTModel ViTModel::create(const ViTConfig& cfg, Rng& rng) {
    cfg.validate();
    ViTModel m;
    m.cfg = cfg;
    int d = cfg.hidden_dim;
    int pin = cfg.patch_size * cfg.patch_size * 3;
    m.patch_w = xavier(pin, d, rng);
    m.patch_b = Tensor({d});
    m.cls_tok = normal_init({1, d}, 0.02, rng);
    m.pos_emb = normal_init({cfg.n_patches() + 1, d}, 0.02, rng);
    m.blocks.resize(size_t(cfg.layers));
    for (auto& b : m.blocks) {
        b.wq = xavier(d, d, rng);
        b.bq = Tensor({d});
        b.wk = xavier(d, d, rng);
        b.bk = Tensor({d});
        b.wv = xavier(d, d, rng);
        b.bv = Tensor({d});
        b.wo = xavier(d, d, rng);
        b.bo = Tensor({d});
        b.ln1_g = ones(d);
        b.ln1_b = Tensor({d});
        b.ln2_g = ones(d);
        b.ln2_b = Tensor({d});
        b.mlp_w1 = xavier(d, d * cfg.mlp_ratio, rng);
        b.mlp_b1 = Tensor({int64_t(d) * cfg.mlp_ratio});
        b.mlp_w2 = xavier(d * cfg.mlp_ratio, d, rng);
        b.mlp_b2 = Tensor({d});
    }
    m.sample_head = make_head(d, cfg.head_out_dim, rng);
    m.prompts.resize(size_t(cfg.layers));
    return m;
}

Registry ViTModel::registry() const {
    Registry r;
    r.emplace_back("patch.w", patch_w);
    r.emplace_back("patch.b", patch_b);
    r.emplace_back("cls", cls_tok);
    r.emplace_back("pos", pos_emb);
    for (size_t i = 0; i < blocks.size(); ++i) {
        const BlockParams& b = blocks[i];
        std::string p = "block" + std::to_string(i) + ".";
        r.emplace_back(p + "wq", b.wq);
        r.emplace_back(p + "bq", b.bq);
        r.emplace_back(p + "wk", b.wk);
        r.emplace_back(p + "bk", b.bk);
        r.emplace_back(p + "wv", b.wv);
        r.emplace_back(p + "bv", b.bv);
        r.emplace_back(p + "wo", b.wo);
        r.emplace_back(p + "bo", b.bo);
        r.emplace_back(p + "ln1_g", b.ln1_g);
        r.emplace_back(p + "ln1_b", b.ln1_b);
        r.emplace_back(p + "ln2_g", b.ln2_g);
        r.emplace_back(p + "ln2_b", b.ln2_b);
        r.emplace_back(p + "mlp_w1", b.mlp_w1);
        r.emplace_back(p + "mlp_b1", b.mlp_b1);
        r.emplace_back(p + "mlp_w2", b.mlp_w2);
        r.emplace_back(p + "mlp_b2", b.mlp_b2);
        if (b.adapter) {
            r.emplace_back(p + "adapter.down_w", b.adapter->down_w);
            r.emplace_back(p + "adapter.down_b", b.adapter->down_b);
            r.emplace_back(p + "adapter.up_w", b.adapter->up_w);
            r.emplace_back(p + "adapter.up_b", b.adapter->up_b);
        }
    }
    r.emplace_back("head.sample.ln_g", sample_head.ln_g);
    r.emplace_back("head.sample.ln_b", sample_head.ln_b);
    r.emplace_back("head.sample.w", sample_head.w);
    r.emplace_back("head.sample.b", sample_head.b);
    if (proxy_head) {
        r.emplace_back("head.proxy.ln_g", proxy_head->ln_g);
        r.emplace_back("head.proxy.ln_b", proxy_head->ln_b);
        r.emplace_back("head.proxy.w", proxy_head->w);
        r.emplace_back("head.proxy.b", proxy_head->b);
    }
    for (size_t i = 0; i < prompts.size(); ++i) {
        if (prompts[i].numel() > 0) r.emplace_back("prompt." + std::to_string(i), prompts[i]);
    }
    return r;
}

Tensor extract_patches(const Tensor& image, int patch_size) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw std::runtime_error("patchify: expected HxWx3 image, got " + shape_str(image.shape()));
    int64_t h = image.dim(0), w = image.dim(1);
    int k = patch_size;
    if (h % k != 0 || w % k != 0) throw std::runtime_error("patchify: image dims not divisible by patch size");
    int64_t ph = h / k, pw = w / k;
    Tensor out({ph * pw, int64_t(k) * k * 3});
    auto src = image.data();
    auto dst = out.data();
    for (int64_t py = 0; py < ph; ++py)
        for (int64_t px = 0; px < pw; ++px) {
            float* row = dst.data() + (py * pw + px) * (k * k * 3);
            for (int dy = 0; dy < k; ++dy)
                for (int dx = 0; dx < k; ++dx)
                    for (int c = 0; c < 3; ++c)
                        row[(dy * k + dx) * 3 + c] = src[size_t(((py * k + dy) * w + (px * k + dx)) * 3 + c)];
        }
    return out;
}

Tensor ViTModel::patchify(Graph& g, const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != cfg.image_size || image.dim(1) != cfg.image_size)
        throw std::runtime_error("patchify: image " + shape_str(image.shape()) + " does not match config size " +
                                 std::to_string(cfg.image_size));
    Tensor patches = extract_patches(image, cfg.patch_size);
    Tensor tok = g.add(g.matmul(patches, patch_w), patch_b);
    Tensor seq = g.concat({cls_tok, tok}, 0);
    return g.add(seq, pos_emb);
}

Tensor block_forward(Graph& g, const Tensor& x, const BlockParams& p, int heads) {
    int64_t d = x.cols();
    int64_t dh = d / heads;
    float inv_sqrt_dh = 1.0f / std::sqrt(float(dh));

    Tensor h = g.layer_norm(x, p.ln1_g, p.ln1_b, kLayerNormEps);
    Tensor q = g.add(g.matmul(h, p.wq), p.bq);
    Tensor k = g.add(g.matmul(h, p.wk), p.bk);
    Tensor v = g.add(g.matmul(h, p.wv), p.bv);
    std::vector<Tensor> head_outs;
    head_outs.reserve(size_t(heads));
    for (int hh = 0; hh < heads; ++hh) {
        Tensor qh = g.slice(q, 1, hh * dh, (hh + 1) * dh);
        Tensor kh = g.slice(k, 1, hh * dh, (hh + 1) * dh);
        Tensor vh = g.slice(v, 1, hh * dh, (hh + 1) * dh);
        Tensor att = g.softmax(g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt_dh), 1);
        head_outs.push_back(g.matmul(att, vh));
    }
    Tensor att_out = g.add(g.matmul(g.concat(head_outs, 1), p.wo), p.bo);
    if (p.adapter && p.adapter->site == AdapterSite::PreAttention) {
        if (p.adapter->position == AdapterPosition::Sequential)
            att_out = adapter_forward(g, att_out, *p.adapter);
        else
            att_out = g.add(att_out, adapter_delta(g, h, *p.adapter));
    }
    Tensor x1 = g.add(x, att_out);

    Tensor h2 = g.layer_norm(x1, p.ln2_g, p.ln2_b, kLayerNormEps);
    Tensor m = g.add(g.matmul(g.gelu(g.add(g.matmul(h2, p.mlp_w1), p.mlp_b1)), p.mlp_w2), p.mlp_b2);
    if (p.adapter && p.adapter->site == AdapterSite::PostMlp) {
        if (p.adapter->position == AdapterPosition::Sequential)
            m = adapter_forward(g, m, *p.adapter);
        else
            m = g.add(m, adapter_delta(g, h2, *p.adapter));
    }
    return g.add(x1, m);
}

Tensor adapter_delta(Graph& g, const Tensor& x, const AdapterParams& a) {
    return g.add(g.matmul(g.relu(g.add(g.matmul(x, a.down_w), a.down_b)), a.up_w), a.up_b);
}

Tensor adapter_forward(Graph& g, const Tensor& x, const AdapterParams& a) {
    return g.add(x, adapter_delta(g, x, a));
}

Tensor ViTModel::encode(Graph& g, const Tensor& tokens, std::span<const Tensor> prompts_per_layer) const {
    if (prompts_per_layer.size() != size_t(cfg.layers))
        throw std::runtime_error("encode: prompt list length " + std::to_string(prompts_per_layer.size()) +
                                 " does not match layer count " + std::to_string(cfg.layers));
    int64_t base_len = tokens.rows();
    Tensor seq = tokens;
    for (int i = 0; i < cfg.layers; ++i) {
        const Tensor& pr = prompts_per_layer[size_t(i)];
        Tensor in = seq;
        if (pr.numel() > 0) {
            if (pr.rank() != 2 || pr.cols() != cfg.hidden_dim)
                throw std::runtime_error("encode: prompt dim mismatch at layer " + std::to_string(i) + ": " +
                                         shape_str(pr.shape()));
            in = g.concat({seq, pr}, 0);
        }
        Tensor out = block_forward(g, in, blocks[size_t(i)], cfg.heads);
        // rows at prompt positions are discarded; the next layer re-inserts its own
        seq = (pr.numel() > 0) ? g.slice(out, 0, 0, base_len) : out;
    }
    return g.reshape(g.slice(seq, 0, 0, 1), {cfg.hidden_dim});
}

Tensor ViTModel::run_head(Graph& g, const Tensor& cls, const HeadParams& head) const {
    Tensor row = g.reshape(cls, {1, int64_t(cfg.hidden_dim)});
    Tensor n = g.layer_norm(row, head.ln_g, head.ln_b, kLayerNormEps);
    Tensor out = g.add(g.matmul(n, head.w), head.b);
    return g.reshape(out, {int64_t(cfg.head_out_dim)});
}

Tensor ViTModel::embed(Graph& g, const Tensor& image, const HeadParams& head,
                       std::span<const Tensor> extra_prompts) const {
    std::vector<Tensor> layer_prompts(prompts.begin(), prompts.end());
    if (!extra_prompts.empty()) {
        if (extra_prompts.size() > layer_prompts.size())
            throw std::runtime_error("embed: more extra prompt layers than model layers");
        Graph& gg = g;
        for (size_t i = 0; i < extra_prompts.size(); ++i) {
            if (extra_prompts[i].numel() == 0) continue;
            if (layer_prompts[i].numel() == 0)
                layer_prompts[i] = extra_prompts[i];
            else
                layer_prompts[i] = gg.concat({layer_prompts[i], extra_prompts[i]}, 0);
        }
    }
    Tensor cls = encode(g, patchify(g, image), layer_prompts);
    return run_head(g, cls, head);
}

ParamCounts count_params(const Registry& model_registry, const Registry& extra_stores) {
    ParamCounts c;
    auto tally = [&c](const Registry& r) {
        for (const auto& [name, t] : r) {
            c.total += t.numel();
            if (t.requires_grad()) c.tunable += t.numel();
        }
    };
    tally(model_registry);
    tally(extra_stores);
    c.tunable_fraction = c.total ? double(c.tunable) / double(c.total) : 0.0;
    return c;
}

}  // namespace dml
