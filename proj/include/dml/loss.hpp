#pragma once

#include <map>
#include <vector>

#include "dml/proxy.hpp"
#include "dml/tensor.hpp"

namespace dml {

struct PALossConfig {
    float pa_scale = 32.0f;  // tau
    float margin = 0.1f;     // delta
    // false: terms exp(-tau*d + delta) / exp(tau*d + delta)
    // true:  published Proxy-Anchor form exp(-tau*(d - delta)) / exp(tau*(d + delta))
    bool published_convention = false;

    void validate() const;
};

// X: B x E unit rows, Q: C x E unit rows. Positive term averages over proxies
// with at least one in-batch positive; negative term averages over all C.
Tensor proxy_anchor_loss(Graph& g, const Tensor& x, const Tensor& q, const std::vector<int>& labels,
                         const PALossConfig& cfg);

// Full training loss: fuses Q for every class. Rows freshly accumulated this
// iteration stay differentiable; all other P rows enter as constants so their
// gradient reaches only the bias proxies O.
Tensor training_loss(Graph& g, const std::vector<Tensor>& embeddings, const std::vector<int>& labels,
                     const std::map<int, Tensor>& accumulated, ProxyState& state,
                     const PALossConfig& cfg);

// Cross-entropy over logits for the classifier pretraining stage.
Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, const std::vector<int>& labels);

}  // namespace dml
