#include "dml/peft.hpp"

#include <algorithm>
#include <stdexcept>

namespace dml {

PeftMethod peft_method_from_string(const std::string& s) {
    if (s == "full") return PeftMethod::Full;
    if (s == "linear_probe") return PeftMethod::LinearProbe;
    if (s == "bitfit") return PeftMethod::BitFit;
    if (s == "adapter") return PeftMethod::Adapter;
    if (s == "vpt") return PeftMethod::Vpt;
    throw std::runtime_error("peft: unknown method '" + s + "'");
}

std::string to_string(PeftMethod m) {
    switch (m) {
        case PeftMethod::Full: return "full";
        case PeftMethod::LinearProbe: return "linear_probe";
        case PeftMethod::BitFit: return "bitfit";
        case PeftMethod::Adapter: return "adapter";
        case PeftMethod::Vpt: return "vpt";
    }
    return "?";
}

void PeftConfig::validate(int model_layers, int model_dim) const {
    if (method == PeftMethod::Adapter) {
        if (adapter.mid_dim < 1 || adapter.mid_dim > model_dim)
            throw std::runtime_error("peft: adapter mid_dim must be in [1, D]");
        if (adapter.layers < 0 || adapter.layers > model_layers)
            throw std::runtime_error("peft: adapter layers outside [0, L)");
    }
    if (method == PeftMethod::Vpt) {
        if (vpt.base_count < 0 || vpt.tau_step < 0)
            throw std::runtime_error("peft: vpt N and tau_step must be >= 0");
        if (vpt.layers < 0 || vpt.layers > model_layers)
            throw std::runtime_error("peft: vpt layers outside [0, L)");
    }
}

std::vector<int> prompt_schedule(int base_count, int tau_step, int layers) {
    if (base_count < 0 || tau_step < 0 || layers < 1)
        throw std::runtime_error("prompt_schedule: N >= 0, tau_step >= 0, L >= 1 required");
    std::vector<int> n(size_t(layers), 0);
    for (int i = 0; i < layers; ++i) n[size_t(i)] = std::max(base_count - tau_step * i, 0);
    return n;
}

bool is_bias_param(const std::string& name) {
    size_t dot = name.rfind('.');
    std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    static const char* bias_leaves[] = {"b",      "bq",     "bk",     "bv",     "bo",   "ln1_b", "ln2_b",
                                        "mlp_b1", "mlp_b2", "down_b", "up_b",   "ln_b"};
    for (const char* l : bias_leaves)
        if (leaf == l) return true;
    return false;
}

namespace {

void freeze_all(ViTModel& model) {
    for (auto& [name, t] : model.registry()) t.set_requires_grad(false);
}

void unfreeze_head(HeadParams& h) {
    h.ln_g.set_requires_grad(true);
    h.ln_b.set_requires_grad(true);
    h.w.set_requires_grad(true);
    h.b.set_requires_grad(true);
}

}  // namespace

std::vector<std::string> apply_method(ViTModel& model, const PeftConfig& cfg, Rng& rng) {
    cfg.validate(model.cfg.layers, model.cfg.hidden_dim);
    freeze_all(model);

    switch (cfg.method) {
        case PeftMethod::Full:
            for (auto& [name, t] : model.registry()) t.set_requires_grad(true);
            break;
        case PeftMethod::LinearProbe:
            unfreeze_head(model.sample_head);
            break;
        case PeftMethod::BitFit:
            for (auto& [name, t] : model.registry())
                if (is_bias_param(name)) t.set_requires_grad(true);
            unfreeze_head(model.sample_head);
            break;
        case PeftMethod::Adapter: {
            int n = cfg.adapter.layers == 0 ? model.cfg.layers : cfg.adapter.layers;
            for (int i = 0; i < n; ++i) {
                auto& blk = model.blocks[size_t(i)];
                if (!blk.adapter)
                    blk.adapter = make_adapter(model.cfg.hidden_dim, cfg.adapter.mid_dim, cfg.adapter.position,
                                               cfg.adapter.site, rng);
                blk.adapter->down_w.set_requires_grad(true);
                blk.adapter->down_b.set_requires_grad(true);
                blk.adapter->up_w.set_requires_grad(true);
                blk.adapter->up_b.set_requires_grad(true);
            }
            unfreeze_head(model.sample_head);
            break;
        }
        case PeftMethod::Vpt: {
            int n_layers = cfg.vpt.layers == 0 ? model.cfg.layers : cfg.vpt.layers;
            std::vector<int> sched = prompt_schedule(cfg.vpt.base_count, cfg.vpt.tau_step, n_layers);
            for (int i = 0; i < n_layers; ++i) {
                int n = sched[size_t(i)];
                if (n == 0) continue;
                Tensor& slot = model.prompts[size_t(i)];
                if (slot.numel() != int64_t(n) * model.cfg.hidden_dim)
                    slot = make_prompts(n, model.cfg.hidden_dim,
                                        model.cfg.patch_size * model.cfg.patch_size * 3, rng);
                slot.set_requires_grad(true);
            }
            unfreeze_head(model.sample_head);
            break;
        }
    }

    if (cfg.combine_bitfit && cfg.method != PeftMethod::Full) {
        for (auto& [name, t] : model.registry())
            if (is_bias_param(name)) t.set_requires_grad(true);
    }
    if (model.proxy_head) unfreeze_head(*model.proxy_head);

    std::vector<std::string> tunable;
    for (auto& [name, t] : model.registry())
        if (t.requires_grad()) tunable.push_back(name);
    return tunable;
}

}  // namespace dml
