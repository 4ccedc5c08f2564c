#pragma once

#include <map>
#include <vector>

#include "dml/optim.hpp"
#include "dml/proxy.hpp"

namespace dml {

struct PagingCounters {
    int64_t page_ins = 0;
    int64_t page_outs = 0;
    int64_t resident_bytes = 0;
    int64_t peak_resident_bytes = 0;
};

// Residency manager for class prompts and their optimizer moments. Paged-out
// bytes move into the store's backing area; moments move into this buffer.
// Everything moves atomically per class, so trajectories are unchanged.
class PagingBuffer {
public:
    PagingBuffer(ClassPromptStore& store, OptimizerState& optimizer, int capacity);

    // make all given classes resident, LRU-evicting others as needed
    void page(const std::vector<int>& classes_in);
    const PagingCounters& counters() const { return counters_; }
    int capacity() const { return capacity_; }
    // moments travelling with paged-out classes, for checkpoint serialization
    const std::map<int, std::vector<std::pair<std::string, Moments>>>& paged_moments() const {
        return paged_moments_;
    }

private:
    void page_out(int c);
    void page_in(int c);
    void touch(int c);

    ClassPromptStore* store_;
    OptimizerState* optimizer_;
    int capacity_;
    PagingCounters counters_;
    std::vector<int> lru_;  // most recently used at the back
    std::map<int, std::vector<std::pair<std::string, Moments>>> paged_moments_;
};

}  // namespace dml
