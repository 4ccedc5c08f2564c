#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dml/checkpoint.hpp"
#include "dml/config.hpp"
#include "dml/data.hpp"
#include "dml/loss.hpp"
#include "dml/metrics.hpp"
#include "dml/optim.hpp"
#include "dml/paging.hpp"
#include "dml/peft.hpp"
#include "dml/proxy.hpp"
#include "dml/vit.hpp"

namespace dml {

// raised when a step produces a non-finite loss; the CLI maps it to exit 3
struct NonFiniteLossError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StepStats {
    int step = 0;  // number of steps completed after this one (1-based)
    double loss = 0.0;
    double grad_norm = 0.0;
    int64_t page_ins = 0;  // cumulative
    double step_ms = 0.0;
};

struct EvalStats {
    double r1 = 0.0, r2 = 0.0, r4 = 0.0, map_r = 0.0;
    int excluded = 0;
};

// Owns one experiment: data, model, proxy state, optimizer, paging, sampler.
// All randomness derives from (config seed, fixed stream id) or
// (seed, step id), so trajectories are bit-reproducible.
class Trainer {
public:
    explicit Trainer(const ExperimentConfig& cfg);

    StepStats train_step();
    EvalStats evaluate();
    int step() const { return step_; }

    std::vector<CheckpointEntry> state_entries() const;
    void save(const std::string& path) const;
    // parameters only, by name, missing/extra entries ignored
    void load_weights(const std::string& path);
    // full state: parameters, optimizer moments, step counters, sampler replay
    void resume(const std::string& path);

    ParamCounts param_counts() const { return counts_; }
    PagingCounters paging_counters() const;
    const ExperimentConfig& config() const { return cfg_; }
    ViTModel& model() { return model_; }
    const Dataset& train_data() const { return train_; }
    const Dataset& eval_data() const { return eval_; }
    ProxyState* proxy_state() { return has_state_ ? &state_ : nullptr; }
    ClassPromptStore* prompt_store() { return store_ ? store_.get() : nullptr; }
    OptimizerState& optimizer() { return opt_; }

    // every parameter tensor exactly once, class prompts excluded
    Registry param_registry() const;

private:
    std::vector<ParamRef> step_params(const std::vector<int>& batch_classes);
    void load_state(const std::vector<CheckpointEntry>& entries, bool strict);

    ExperimentConfig cfg_;
    Dataset train_, eval_;
    ViTModel model_;
    Tensor classifier_w_, classifier_b_;  // cross-entropy pretraining head
    bool has_state_ = false;
    ProxyState state_;
    std::unique_ptr<ClassPromptStore> store_;
    OptimizerState opt_;
    std::unique_ptr<PagingBuffer> paging_;
    std::unique_ptr<BalancedSampler> sampler_;
    ParamCounts counts_;
    int step_ = 0;
};

struct CompareRow {
    std::string method;
    int64_t tunable_params = 0;
    double tunable_fraction = 0.0;
    int64_t peak_resident_bytes = 0;
    double r1 = 0.0;
    double map_r = 0.0;
    double step_ms = 0.0;  // median over the run
};

// method names: full, linear_probe, bitfit, adapter, vpt, vptsp_m, vptsp_g,
// each optionally suffixed with "+bitfit"
ExperimentConfig apply_compare_method(ExperimentConfig base, const std::string& name);
std::vector<CompareRow> run_compare(const ExperimentConfig& base,
                                    const std::vector<std::string>& methods);

std::string compare_csv(const std::vector<CompareRow>& rows);
std::string compare_table(const std::vector<CompareRow>& rows);

}  // namespace dml
