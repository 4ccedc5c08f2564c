#include "dml/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dml {

void RetrievalIndex::validate() const {
    if (embeddings.rank() != 2) throw std::runtime_error("metrics: embeddings must be rank 2");
    if (int64_t(labels.size()) != embeddings.rows())
        throw std::runtime_error("metrics: label count does not match embedding rows");
}

std::vector<int> RetrievalIndex::ranked_candidates(int query) const {
    int64_t m = embeddings.rows(), e = embeddings.cols();
    auto d = embeddings.data();
    const float* q = d.data() + int64_t(query) * e;
    std::vector<std::pair<double, int>> sims;
    sims.reserve(size_t(m - 1));
    for (int64_t i = 0; i < m; ++i) {
        if (i == query) continue;
        double s = 0.0;
        const float* r = d.data() + i * e;
        for (int64_t j = 0; j < e; ++j) s += double(q[j]) * double(r[j]);
        sims.emplace_back(s, int(i));
    }
    std::stable_sort(sims.begin(), sims.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<int> out;
    out.reserve(sims.size());
    for (auto& [s, i] : sims) out.push_back(i);
    return out;
}

MetricResult recall_at_k(const RetrievalIndex& index, int k) {
    index.validate();
    int64_t m = index.embeddings.rows();
    if (k < 1 || int64_t(k) >= m) throw std::runtime_error("recall_at_k: need 1 <= K < M");
    MetricResult res;
    int64_t counted = 0, hits = 0;
    for (int64_t q = 0; q < m; ++q) {
        bool has_peer = false;
        for (int64_t i = 0; i < m; ++i)
            if (i != q && index.labels[size_t(i)] == index.labels[size_t(q)]) {
                has_peer = true;
                break;
            }
        if (!has_peer) {
            ++res.excluded_queries;
            continue;
        }
        ++counted;
        auto ranked = index.ranked_candidates(int(q));
        for (int i = 0; i < k; ++i)
            if (index.labels[size_t(ranked[size_t(i)])] == index.labels[size_t(q)]) {
                ++hits;
                break;
            }
    }
    res.value = counted ? double(hits) / double(counted) : 0.0;
    return res;
}

MetricResult map_at_r(const RetrievalIndex& index) {
    index.validate();
    int64_t m = index.embeddings.rows();
    MetricResult res;
    double sum = 0.0;
    int64_t counted = 0;
    for (int64_t q = 0; q < m; ++q) {
        int64_t r = 0;
        for (int64_t i = 0; i < m; ++i)
            if (i != q && index.labels[size_t(i)] == index.labels[size_t(q)]) ++r;
        if (r == 0) {
            ++res.excluded_queries;
            continue;
        }
        ++counted;
        auto ranked = index.ranked_candidates(int(q));
        double ap = 0.0;
        int64_t rel_seen = 0;
        for (int64_t rank = 1; rank <= r; ++rank) {
            if (index.labels[size_t(ranked[size_t(rank - 1)])] == index.labels[size_t(q)]) {
                ++rel_seen;
                ap += double(rel_seen) / double(rank);
            }
        }
        sum += ap / double(r);
    }
    res.value = counted ? sum / double(counted) : 0.0;
    return res;
}

}  // namespace dml
