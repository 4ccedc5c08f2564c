#include "dml/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace dml {

void PALossConfig::validate() const {
    if (pa_scale <= 0.0f) throw std::runtime_error("pa_loss: pa_scale must be positive");
}

namespace {

// Stable log(1 + sum exp(t_i)) and the per-term softmax-like weights
// w_i = exp(t_i) / (1 + sum exp(t_j)).
double log1p_exp_terms(const std::vector<double>& t, std::vector<double>* weights) {
    double mx = 0.0;
    for (double v : t) mx = std::max(mx, v);
    double sum = std::exp(-mx);
    for (double v : t) sum += std::exp(v - mx);
    if (weights) {
        weights->resize(t.size());
        for (size_t i = 0; i < t.size(); ++i) (*weights)[i] = std::exp(t[i] - mx) / sum;
    }
    return mx + std::log(sum);
}

}  // namespace

Tensor proxy_anchor_loss(Graph& g, const Tensor& x, const Tensor& q, const std::vector<int>& labels,
                         const PALossConfig& cfg) {
    cfg.validate();
    if (x.rank() != 2 || q.rank() != 2 || x.cols() != q.cols())
        throw std::runtime_error("pa_loss: embedding/proxy shape mismatch " + shape_str(x.shape()) +
                                 " vs " + shape_str(q.shape()));
    int64_t b = x.rows(), c = q.rows();
    if (int64_t(labels.size()) != b) throw std::runtime_error("pa_loss: label count mismatch");
    for (int l : labels)
        if (l < 0 || int64_t(l) >= c)
            throw std::runtime_error("pa_loss: label " + std::to_string(l) + " out of range");

    // cosine similarities on unit rows
    Tensor s = g.matmul(x, g.transpose(q));

    double tau = cfg.pa_scale, delta = cfg.margin;
    bool pub = cfg.published_convention;
    auto pos_term = [tau, delta, pub](double sim) {
        return pub ? -tau * (sim - delta) : -tau * sim + delta;
    };
    auto neg_term = [tau, delta, pub](double sim) {
        return pub ? tau * (sim + delta) : tau * sim + delta;
    };

    int64_t pos_proxies = 0;
    for (int64_t p = 0; p < c; ++p) {
        for (int64_t i = 0; i < b; ++i)
            if (labels[size_t(i)] == p) {
                ++pos_proxies;
                break;
            }
    }
    if (pos_proxies == 0) throw std::runtime_error("pa_loss: no proxy has an in-batch positive");

    auto sd = s.data();
    double loss = 0.0;
    for (int64_t p = 0; p < c; ++p) {
        std::vector<double> tp, tn;
        for (int64_t i = 0; i < b; ++i) {
            double sim = sd[size_t(i * c + p)];
            if (labels[size_t(i)] == p)
                tp.push_back(pos_term(sim));
            else
                tn.push_back(neg_term(sim));
        }
        if (!tp.empty()) loss += log1p_exp_terms(tp, nullptr) / double(pos_proxies);
        if (!tn.empty()) loss += log1p_exp_terms(tn, nullptr) / double(c);
    }
    if (!std::isfinite(loss)) throw std::runtime_error("pa_loss: non-finite loss");

    Tensor out = Tensor::scalar(float(loss));
    if (s.requires_grad()) {
        out.set_requires_grad(true);
        std::vector<int> lab = labels;
        g.push_backward([s, out, lab, b, c, tau, pos_proxies, pos_term, neg_term] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            s.node()->ensure_grad();
            auto sd = s.data();
            auto& sg = s.node()->grad;
            double go = og[0];
            for (int64_t p = 0; p < c; ++p) {
                std::vector<double> tp, tn;
                std::vector<int64_t> ip, in;
                for (int64_t i = 0; i < b; ++i) {
                    double sim = sd[size_t(i * c + p)];
                    if (lab[size_t(i)] == p) {
                        tp.push_back(pos_term(sim));
                        ip.push_back(i);
                    } else {
                        tn.push_back(neg_term(sim));
                        in.push_back(i);
                    }
                }
                std::vector<double> w;
                if (!tp.empty()) {
                    log1p_exp_terms(tp, &w);
                    for (size_t k = 0; k < ip.size(); ++k)
                        sg[size_t(ip[k] * c + p)] += float(go * w[k] * (-tau) / double(pos_proxies));
                }
                if (!tn.empty()) {
                    log1p_exp_terms(tn, &w);
                    for (size_t k = 0; k < in.size(); ++k)
                        sg[size_t(in[k] * c + p)] += float(go * w[k] * tau / double(c));
                }
            }
        });
    }
    return out;
}

Tensor training_loss(Graph& g, const std::vector<Tensor>& embeddings, const std::vector<int>& labels,
                     const std::map<int, Tensor>& accumulated, ProxyState& state,
                     const PALossConfig& cfg) {
    if (embeddings.empty()) throw std::runtime_error("training_loss: empty batch");
    int64_t num_classes = state.O.rows();
    int64_t e = state.O.cols();
    std::vector<Tensor> q_rows;
    q_rows.reserve(size_t(num_classes));
    for (int64_t c = 0; c < num_classes; ++c) {
        auto it = accumulated.find(int(c));
        // non-batch classes: semantic proxy is a constant, gradient reaches only O
        Tensor p_c = (it != accumulated.end()) ? it->second : state.p_row(int(c));
        Tensor o_c = g.reshape(g.slice(state.O, 0, c, c + 1), {e});
        q_rows.push_back(fuse_bias(g, p_c, o_c, state.cfg.alpha));
    }
    Tensor q = g.stack_rows(q_rows);
    Tensor x = g.stack_rows(embeddings);
    return proxy_anchor_loss(g, x, q, labels, cfg);
}

Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw std::runtime_error("cross_entropy: expected rank-2 logits");
    int64_t b = logits.rows(), c = logits.cols();
    if (int64_t(labels.size()) != b) throw std::runtime_error("cross_entropy: label count mismatch");
    auto ld = logits.data();
    double loss = 0.0;
    for (int64_t i = 0; i < b; ++i) {
        int y = labels[size_t(i)];
        if (y < 0 || int64_t(y) >= c) throw std::runtime_error("cross_entropy: label out of range");
        const float* row = ld.data() + i * c;
        double mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, double(row[j]));
        double sum = 0.0;
        for (int64_t j = 0; j < c; ++j) sum += std::exp(double(row[j]) - mx);
        loss += (mx + std::log(sum)) - double(row[y]);
    }
    loss /= double(b);
    Tensor out = Tensor::scalar(float(loss));
    if (logits.requires_grad()) {
        out.set_requires_grad(true);
        std::vector<int> lab = labels;
        g.push_backward([logits, out, lab, b, c] {
            auto& og = out.node()->grad;
            if (og.empty()) return;
            logits.node()->ensure_grad();
            auto ld = logits.data();
            auto& lg = logits.node()->grad;
            double go = og[0] / double(b);
            for (int64_t i = 0; i < b; ++i) {
                const float* row = ld.data() + i * c;
                double mx = row[0];
                for (int64_t j = 1; j < c; ++j) mx = std::max(mx, double(row[j]));
                double sum = 0.0;
                for (int64_t j = 0; j < c; ++j) sum += std::exp(double(row[j]) - mx);
                for (int64_t j = 0; j < c; ++j) {
                    double p = std::exp(double(row[j]) - mx) / sum;
                    double onehot = (j == lab[size_t(i)]) ? 1.0 : 0.0;
                    lg[size_t(i * c + j)] += float(go * (p - onehot));
                }
            }
        });
    }
    return out;
}

}  // namespace dml
