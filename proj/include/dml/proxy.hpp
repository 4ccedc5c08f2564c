#pragma once

#include <map>
#include <string>
#include <vector>

#include "dml/rng.hpp"
#include "dml/tensor.hpp"
#include "dml/vit.hpp"

namespace dml {

enum class AccumulatorKind { Ema, GruRelu, GruTanh };
enum class AblationMode { Full, Sample, SharedEncoder, FixedEncoder };

AccumulatorKind accumulator_from_string(const std::string& s);
std::string to_string(AccumulatorKind k);
AblationMode ablation_from_string(const std::string& s);
std::string to_string(AblationMode m);

struct ProxyConfig {
    bool enabled = false;
    int class_prompt_count = 3;  // m
    int cls_layers = 2;          // CLS_L
    float lambda = 0.5f;
    float alpha = 0.3f;
    AccumulatorKind kind = AccumulatorKind::GruRelu;
    bool ema_textbook = false;
    AblationMode mode = AblationMode::Full;
};

struct GruWeights {
    Tensor wz, uz, bz, wr, ur, br, wh, uh, bh;
    bool present() const { return wz.numel() > 0; }
};

// Per-class prompt sets for the proxy tower. Paged-out classes keep their
// bytes in `backing`; the live tensors are emptied so any forward or
// optimizer touch trips a hard error.
struct ClassPromptStore {
    int num_classes = 0;
    int cls_layers = 0;
    int prompt_count = 0;  // m
    int dim = 0;

    struct Entry {
        std::vector<Tensor> layers;                // cls_layers tensors, m x D when resident
        std::vector<std::vector<float>> backing;   // non-empty iff paged out
        bool resident = true;
    };
    std::vector<Entry> entries;

    static ClassPromptStore create(int num_classes, int cls_layers, int prompt_count, int dim,
                                   int patch_in_dim, Rng& rng);

    bool resident(int c) const { return entries[size_t(c)].resident; }
    void require_resident(int c) const;
    int64_t bytes_per_class() const;
    std::string param_name(int c, int layer) const;

    // all live prompt tensors of a resident class
    std::vector<Tensor>& class_layers(int c);
    const std::vector<Tensor>& class_layers(int c) const;

    // data view regardless of residency, for serialization
    const std::vector<float>& layer_data(int c, int layer) const;
    void set_layer_data(int c, int layer, const std::vector<float>& data);
};

struct ProxyState {
    Tensor P;  // C x E accumulated semantic proxies, unit rows, not a trainable param
    Tensor O;  // C x E learnable bias proxies
    GruWeights gru;
    ProxyConfig cfg;
    int64_t degenerate_updates = 0;

    static ProxyState create(int num_classes, int embed_dim, const ProxyConfig& cfg, Rng& rng);

    Tensor p_row(int c) const;         // detached copy of P row c
    void set_p_row(int c, const Tensor& v);  // stores values, no grad linkage
    Registry registry() const;         // proxy.P, proxy.O, proxy.gru.*
    Registry trainable_registry() const;  // proxy.O (+ gru when used)
};

// Eq. semantics: P_next = normalize(P_prev + (1 - lambda) * p); the textbook
// flag switches to normalize(lambda * P_prev + (1 - lambda) * p).
Tensor ema_update(Graph& g, const Tensor& p_prev, const Tensor& p, float lambda, bool textbook,
                  int64_t* degenerate_counter);

Tensor gru_update(Graph& g, const Tensor& p_prev, const Tensor& p, const GruWeights& w,
                  AccumulatorKind kind, int64_t* degenerate_counter);

// Q = normalize((1 - alpha) * P + alpha * O), rank-1 rows
Tensor fuse_bias(Graph& g, const Tensor& p, const Tensor& o, float alpha);

// One accumulator step per sample, seeded-random in-class order, with the
// previous-iteration proxy behind a stop-gradient boundary.
std::map<int, Tensor> accumulate_batch(Graph& g, const std::map<int, std::vector<Tensor>>& grouped,
                                       ProxyState& state, Rng& order_rng);

// Proxy-tower forward for one image of class c, L2-normalized output.
Tensor generate_proxy(Graph& g, const ViTModel& model, const ClassPromptStore& store, int class_id,
                      const Tensor& image, AblationMode mode);

}  // namespace dml
