#include "dml/paging.hpp"

#include <algorithm>
#include <stdexcept>

namespace dml {

PagingBuffer::PagingBuffer(ClassPromptStore& store, OptimizerState& optimizer, int capacity)
    : store_(&store), optimizer_(&optimizer), capacity_(capacity) {
    if (capacity_ < 1) throw std::runtime_error("paging: capacity must be >= 1");
    // store starts all-resident; trim down to capacity, evicting high ids
    for (int c = 0; c < store_->num_classes && c < capacity_; ++c) lru_.push_back(c);
    for (int c = capacity_; c < store_->num_classes; ++c) page_out(c);
    counters_.resident_bytes = int64_t(std::min(capacity_, store_->num_classes)) * store_->bytes_per_class();
    counters_.peak_resident_bytes = counters_.resident_bytes;
}

void PagingBuffer::touch(int c) {
    auto it = std::find(lru_.begin(), lru_.end(), c);
    if (it != lru_.end()) lru_.erase(it);
    lru_.push_back(c);
}

void PagingBuffer::page(const std::vector<int>& classes_in) {
    if (int(classes_in.size()) > capacity_)
        throw std::runtime_error("paging: batch needs " + std::to_string(classes_in.size()) +
                                 " resident classes but capacity is " + std::to_string(capacity_));
    std::vector<int> wanted = classes_in;
    std::sort(wanted.begin(), wanted.end());
    for (int c : wanted) {
        if (store_->resident(c)) {
            touch(c);
            continue;
        }
        while (int(lru_.size()) >= capacity_) {
            // evict the least recently used class not wanted this step
            auto victim = std::find_if(lru_.begin(), lru_.end(), [&](int v) {
                return std::find(wanted.begin(), wanted.end(), v) == wanted.end();
            });
            if (victim == lru_.end()) throw std::runtime_error("paging: no evictable class");
            int v = *victim;
            lru_.erase(victim);
            page_out(v);
        }
        page_in(c);
        lru_.push_back(c);
    }
    counters_.resident_bytes = int64_t(lru_.size()) * store_->bytes_per_class();
    counters_.peak_resident_bytes = std::max(counters_.peak_resident_bytes, counters_.resident_bytes);
}

void PagingBuffer::page_out(int c) {
    auto& e = store_->entries[size_t(c)];
    if (!e.resident) return;
    e.backing.resize(e.layers.size());
    std::vector<std::pair<std::string, Moments>> mom;
    for (size_t l = 0; l < e.layers.size(); ++l) {
        e.backing[l] = std::move(e.layers[l].node()->data);
        e.layers[l].node()->data.clear();
        e.layers[l].node()->grad.clear();
        std::string name = store_->param_name(c, int(l));
        auto it = optimizer_->moments.find(name);
        if (it != optimizer_->moments.end()) {
            mom.emplace_back(name, std::move(it->second));
            optimizer_->moments.erase(it);
        }
    }
    if (!mom.empty()) paged_moments_[c] = std::move(mom);
    e.resident = false;
    ++counters_.page_outs;
}

void PagingBuffer::page_in(int c) {
    auto& e = store_->entries[size_t(c)];
    if (e.resident) return;
    for (size_t l = 0; l < e.layers.size(); ++l) {
        e.layers[l].node()->data = std::move(e.backing[l]);
        e.backing[l].clear();
    }
    e.backing.clear();
    auto it = paged_moments_.find(c);
    if (it != paged_moments_.end()) {
        for (auto& [name, mo] : it->second) optimizer_->moments[name] = std::move(mo);
        paged_moments_.erase(it);
    }
    e.resident = true;
    ++counters_.page_ins;
}

}  // namespace dml
