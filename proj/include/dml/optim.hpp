#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dml/tensor.hpp"

namespace dml {

enum class OptimKind { Sgd, Adaptive, AdaptiveDecoupled };

OptimKind optim_kind_from_string(const std::string& s);
std::string to_string(OptimKind k);

struct OptimConfig {
    OptimKind kind = OptimKind::AdaptiveDecoupled;
    float lr = 1e-3f;
    float lr_proxy = 1e-2f;  // bias proxies, class prompts, GRU weights
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f;
    float clip_norm = 0.0f;  // 0 = off
};

struct Moments {
    std::vector<float> m, v;
};

struct ParamRef {
    std::string name;
    Tensor tensor;
    float lr;
};

struct OptimizerState {
    OptimConfig cfg;
    int64_t step = 0;
    // keyed by parameter name so buffers can migrate with paged parameters
    std::unordered_map<std::string, Moments> moments;
};

// One update over the given tunable parameters. Gradients are read from each
// tensor's grad slot; missing grads are treated as zero.
void optimizer_step(OptimizerState& state, const std::vector<ParamRef>& params);

double global_grad_norm(const std::vector<ParamRef>& params);

}  // namespace dml
