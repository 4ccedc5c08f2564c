#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "dml/data.hpp"
#include "dml/loss.hpp"
#include "dml/optim.hpp"
#include "dml/peft.hpp"
#include "dml/proxy.hpp"
#include "dml/vit.hpp"

namespace dml {

using Json = nlohmann::ordered_json;

struct ExperimentConfig {
    ViTConfig model;
    PeftConfig peft;
    ProxyConfig proxy;
    struct LossCfg {
        std::string kind = "proxy_anchor";  // or "cross_entropy"
        PALossConfig pa;
    } loss;
    OptimConfig optim;
    struct DataCfg {
        std::string source = "synthetic";  // or "folder"
        std::string path;
        int batch_size = 8;
        int per_class = 2;
        int train_classes = -1;  // -1 = half of the classes
        std::string eval_on = "eval";  // "eval" | "train"
        SyntheticSpec synthetic;
        AugmentConfig augment;
    } data;
    struct RunCfg {
        int steps = 100;
        int eval_every = 50;
        uint64_t seed = 1;
        int buffer_capacity = 0;  // 0 = all classes resident
        std::string init_checkpoint;
        std::string out_dir = ".";
    } run;

    static ExperimentConfig from_json(const Json& j);
    static ExperimentConfig load(const std::string& path);
    Json to_json() const;
    void validate() const;
};

}  // namespace dml
