#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dml/rng.hpp"
#include "dml/tensor.hpp"

namespace dml {

struct ViTConfig {
    int image_size = 32;
    int patch_size = 4;
    int layers = 6;
    int hidden_dim = 64;
    int heads = 4;
    int mlp_ratio = 4;
    int head_out_dim = 64;

    int n_patches() const {
        int side = image_size / patch_size;
        return side * side;
    }
    void validate() const;
};

enum class AdapterPosition { Sequential, Parallel };
enum class AdapterSite { PreAttention, PostMlp };

struct AdapterParams {
    Tensor down_w, down_b, up_w, up_b;
    AdapterPosition position = AdapterPosition::Sequential;
    AdapterSite site = AdapterSite::PostMlp;
};

struct BlockParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    std::optional<AdapterParams> adapter;
};

struct HeadParams {
    Tensor ln_g, ln_b, w, b;
};

using Registry = std::vector<std::pair<std::string, Tensor>>;

struct ViTModel {
    ViTConfig cfg;
    Tensor patch_w;  // (k*k*3) x D
    Tensor patch_b;  // D
    Tensor cls_tok;  // 1 x D
    Tensor pos_emb;  // (N+1) x D
    std::vector<BlockParams> blocks;
    HeadParams sample_head;
    std::optional<HeadParams> proxy_head;
    // per-layer encoder prompts; a default-constructed Tensor means "none"
    std::vector<Tensor> prompts;

    static ViTModel create(const ViTConfig& cfg, Rng& rng);

    // every parameter exactly once, stable dotted names
    Registry registry() const;

    Tensor patchify(Graph& g, const Tensor& image) const;
    Tensor encode(Graph& g, const Tensor& tokens, std::span<const Tensor> prompts_per_layer) const;
    Tensor run_head(Graph& g, const Tensor& cls, const HeadParams& head) const;

    // patchify + encode with this model's encoder prompts (optionally extended
    // per layer with extra prompts), then the given head
    Tensor embed(Graph& g, const Tensor& image, const HeadParams& head,
                 std::span<const Tensor> extra_prompts = {}) const;
};

Tensor block_forward(Graph& g, const Tensor& x, const BlockParams& p, int heads);
Tensor adapter_delta(Graph& g, const Tensor& x, const AdapterParams& a);
Tensor adapter_forward(Graph& g, const Tensor& x, const AdapterParams& a);

HeadParams make_head(int in_dim, int out_dim, Rng& rng);
AdapterParams make_adapter(int dim, int mid_dim, AdapterPosition pos, AdapterSite site, Rng& rng);
Tensor make_prompts(int count, int dim, int patch_in_dim, Rng& rng);

struct ParamCounts {
    int64_t total = 0;
    int64_t tunable = 0;
    double tunable_fraction = 0.0;
};

// extra_stores: prompts, class prompts, proxies, GRU weights etc.
ParamCounts count_params(const Registry& model_registry, const Registry& extra_stores = {});

// raster-order patch extraction into an N x (k*k*3) matrix, no autodiff
Tensor extract_patches(const Tensor& image, int patch_size);

}  // namespace dml
