#pragma once

#include <vector>

#include "dml/tensor.hpp"

namespace dml {

// Cosine retrieval over unit-norm rows; the query is excluded from its own
// candidate set, ties broken by lower candidate index.
struct RetrievalIndex {
    Tensor embeddings;  // M x E, unit rows
    std::vector<int> labels;

    void validate() const;
    // candidate indices for one query, most similar first
    std::vector<int> ranked_candidates(int query) const;
};

struct MetricResult {
    double value = 0.0;
    int excluded_queries = 0;  // queries whose class has no other member
};

MetricResult recall_at_k(const RetrievalIndex& index, int k);
MetricResult map_at_r(const RetrievalIndex& index);

}  // namespace dml
