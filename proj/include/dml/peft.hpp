#pragma once

#include <string>
#include <vector>

#include "dml/vit.hpp"

namespace dml {

enum class PeftMethod { Full, LinearProbe, BitFit, Adapter, Vpt };

PeftMethod peft_method_from_string(const std::string& s);
std::string to_string(PeftMethod m);

struct PeftConfig {
    PeftMethod method = PeftMethod::LinearProbe;
    struct {
        int mid_dim = 8;
        int layers = 0;  // 0 = all blocks; otherwise the first `layers` blocks
        AdapterPosition position = AdapterPosition::Sequential;
        AdapterSite site = AdapterSite::PostMlp;
    } adapter;
    struct {
        int base_count = 10;  // N
        int tau_step = 0;
        int layers = 0;  // 0 = all blocks
    } vpt;
    bool combine_bitfit = false;

    void validate(int model_layers, int model_dim) const;
};

// n_i = max(N - tau_step * i, 0)
std::vector<int> prompt_schedule(int base_count, int tau_step, int layers);

// Applies the freeze mask and structural additions for the chosen method.
// Only flags and structure change; existing weight values are never touched.
// Returns the tunable parameter names after application.
std::vector<std::string> apply_method(ViTModel& model, const PeftConfig& cfg, Rng& rng);

bool is_bias_param(const std::string& name);

}  // namespace dml
