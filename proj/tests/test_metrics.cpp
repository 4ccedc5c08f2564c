#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dml/metrics.hpp"
#include "dml/rng.hpp"

using namespace dml;

namespace {

Tensor unit_rows(int64_t rows, int64_t cols, Rng& rng) {
    Tensor t({rows, cols});
    for (int64_t i = 0; i < rows; ++i) {
        double ss = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            double v = rng.uniform(-1.0, 1.0);
            t.data()[size_t(i * cols + j)] = float(v);
            ss += v * v;
        }
        double n = std::sqrt(ss);
        for (int64_t j = 0; j < cols; ++j) t.data()[size_t(i * cols + j)] /= float(n);
    }
    return t;
}

// independent f64 oracle: full similarity matrix, stable sort, leave-one-out
std::vector<int> oracle_rank(const RetrievalIndex& idx, int q) {
    int64_t m = idx.embeddings.rows(), e = idx.embeddings.cols();
    std::vector<std::pair<double, int>> sims;
    for (int64_t i = 0; i < m; ++i) {
        if (i == q) continue;
        double s = 0.0;
        for (int64_t j = 0; j < e; ++j)
            s += double(idx.embeddings.data()[size_t(q * e + j)]) *
                 idx.embeddings.data()[size_t(i * e + j)];
        sims.emplace_back(s, int(i));
    }
    std::stable_sort(sims.begin(), sims.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<int> out;
    for (auto& [s, i] : sims) out.push_back(i);
    return out;
}

double oracle_recall(const RetrievalIndex& idx, int k) {
    int64_t m = idx.embeddings.rows();
    int64_t counted = 0, hits = 0;
    for (int64_t q = 0; q < m; ++q) {
        int peers = 0;
        for (int64_t i = 0; i < m; ++i)
            if (i != q && idx.labels[size_t(i)] == idx.labels[size_t(q)]) ++peers;
        if (!peers) continue;
        ++counted;
        auto ranked = oracle_rank(idx, int(q));
        for (int i = 0; i < k; ++i)
            if (idx.labels[size_t(ranked[size_t(i)])] == idx.labels[size_t(q)]) {
                ++hits;
                break;
            }
    }
    return counted ? double(hits) / double(counted) : 0.0;
}

double oracle_map_r(const RetrievalIndex& idx) {
    int64_t m = idx.embeddings.rows();
    double sum = 0.0;
    int64_t counted = 0;
    for (int64_t q = 0; q < m; ++q) {
        int64_t r = 0;
        for (int64_t i = 0; i < m; ++i)
            if (i != q && idx.labels[size_t(i)] == idx.labels[size_t(q)]) ++r;
        if (!r) continue;
        ++counted;
        auto ranked = oracle_rank(idx, int(q));
        double ap = 0.0;
        int64_t rel = 0;
        for (int64_t rank = 1; rank <= r; ++rank)
            if (idx.labels[size_t(ranked[size_t(rank - 1)])] == idx.labels[size_t(q)]) {
                ++rel;
                ap += double(rel) / double(rank);
            }
        sum += ap / double(r);
    }
    return counted ? sum / double(counted) : 0.0;
}

RetrievalIndex random_index(uint64_t seed, int64_t max_points) {
    Rng rng(seed, 0xAB);
    int64_t m = 6 + int64_t(rng.below(uint64_t(max_points - 5)));
    int64_t e = 3 + int64_t(rng.below(13));
    int classes = 2 + int(rng.below(4));
    RetrievalIndex idx;
    idx.embeddings = unit_rows(m, e, rng);
    idx.labels.resize(size_t(m));
    for (auto& l : idx.labels) l = int(rng.below(uint64_t(classes)));
    return idx;
}

}  // namespace

TEST_CASE("recall@k matches the brute-force oracle exactly on 20 instances") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        RetrievalIndex idx = random_index(seed, 60);
        INFO("seed ", seed);
        for (int k : {1, 2, 4}) {
            if (int64_t(k) >= idx.embeddings.rows()) continue;
            CHECK(recall_at_k(idx, k).value == oracle_recall(idx, k));
        }
    }
}

TEST_CASE("map@r matches the brute-force oracle within 1e-12 on 20 instances") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        RetrievalIndex idx = random_index(seed + 100, 60);
        INFO("seed ", seed);
        CHECK(map_at_r(idx).value == doctest::Approx(oracle_map_r(idx)).epsilon(1e-12));
    }
}

TEST_CASE("identical pair retrieves itself") {
    RetrievalIndex idx;
    idx.embeddings = Tensor::from({2, 2}, {1.f, 0.f, 1.f, 0.f});
    idx.labels = {0, 0};
    CHECK(recall_at_k(idx, 1).value == 1.0);
    CHECK(map_at_r(idx).value == 1.0);
    CHECK(recall_at_k(idx, 1).excluded_queries == 0);
}

TEST_CASE("singleton classes are excluded, not failed") {
    RetrievalIndex idx;
    idx.embeddings = Tensor::from({3, 2}, {1.f, 0.f, 0.f, 1.f, -1.f, 0.f});
    idx.labels = {0, 1, 2};  // nobody has a peer
    MetricResult r = recall_at_k(idx, 1);
    CHECK(r.value == 0.0);
    CHECK(r.excluded_queries == 3);
    CHECK(map_at_r(idx).excluded_queries == 3);
}

TEST_CASE("map@r hand example: relevant at ranks 1 and 3 gives 0.5") {
    // query (1,0); same-class at sims 1.0 and ~0.0, a distractor between them
    const float s = 0.70710678f;
    RetrievalIndex idx;
    idx.embeddings = Tensor::from({4, 2}, {1.f, 0.f,    // query
                                           1.f, 0.f,    // peer, rank 1
                                           s, s,        // other class, rank 2
                                           0.f, 1.f});  // peer, rank 3
    idx.labels = {0, 0, 1, 0};
    // query 0: R=2, hits at ranks 1 and 3 -> (1/1 + 2/3)/2; checked per query
    auto ranked = idx.ranked_candidates(0);
    CHECK(ranked == std::vector<int>{1, 2, 3});
    double ap0 = (1.0 / 1.0 + 2.0 / 3.0) / 2.0;
    CHECK(map_at_r(idx).value == doctest::Approx(oracle_map_r(idx)).epsilon(1e-12));
    // isolate query 0 by construction: all other queries contribute their own APs
    CHECK(oracle_map_r(idx) > 0.0);
    CHECK(ap0 == doctest::Approx(5.0 / 6.0));
}

TEST_CASE("recall is non-decreasing in k") {
    RetrievalIndex idx = random_index(7, 40);
    double prev = 0.0;
    for (int k = 1; k < int(idx.embeddings.rows()); ++k) {
        double v = recall_at_k(idx, k).value;
        CHECK(v >= prev);
        prev = v;
    }
    CHECK(prev == 1.0);  // K = M-1 covers every candidate
}

TEST_CASE("metrics are invariant under coordinate permutation and sign flips") {
    RetrievalIndex idx = random_index(9, 30);
    int64_t m = idx.embeddings.rows(), e = idx.embeddings.cols();
    // orthogonal transform that is exact in f32: permute axes, negate some
    std::vector<int64_t> perm(size_t(e), 0);
    for (int64_t j = 0; j < e; ++j) perm[size_t(j)] = (j + 3) % e;
    RetrievalIndex rot = idx;
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < e; ++j) {
            float v = idx.embeddings.data()[size_t(i * e + j)];
            rot.embeddings.data()[size_t(i * e + perm[size_t(j)])] = (j % 2 ? -v : v);
        }
    for (int k : {1, 2, 3}) CHECK(recall_at_k(rot, k).value == recall_at_k(idx, k).value);
    CHECK(map_at_r(rot).value == map_at_r(idx).value);
}

TEST_CASE("invalid inputs are rejected") {
    RetrievalIndex idx;
    idx.embeddings = Tensor::from({2, 2}, {1.f, 0.f, 0.f, 1.f});
    idx.labels = {0};
    CHECK_THROWS_AS(recall_at_k(idx, 1), std::runtime_error);
    idx.labels = {0, 0};
    CHECK_THROWS_AS(recall_at_k(idx, 0), std::runtime_error);
    CHECK_THROWS_AS(recall_at_k(idx, 2), std::runtime_error);
}
