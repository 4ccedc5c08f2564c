#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dml/checkpoint.hpp"
#include "dml/config.hpp"
#include "dml/experiment.hpp"
#include "dml/gradcheck.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNonFinite = 3;

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

dml::ExperimentConfig load_config(const std::string& path, int64_t seed_override) {
    dml::ExperimentConfig cfg = dml::ExperimentConfig::load(path);
    if (seed_override >= 0) cfg.run.seed = uint64_t(seed_override);
    return cfg;
}

std::string eval_row(int step, const dml::EvalStats& ev) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f\n", step, ev.r1, ev.r2, ev.r4, ev.map_r);
    return buf;
}

int cmd_train(const std::string& config_path, int64_t seed_override, const std::string& resume_path) {
    dml::ExperimentConfig cfg;
    try {
        cfg = load_config(config_path, seed_override);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    try {
        std::filesystem::create_directories(cfg.run.out_dir);
        dml::Trainer trainer(cfg);
        if (!cfg.run.init_checkpoint.empty()) trainer.load_weights(cfg.run.init_checkpoint);
        if (!resume_path.empty()) trainer.resume(resume_path);

        std::ofstream csv(cfg.run.out_dir + "/metrics.csv");
        if (!csv) throw std::runtime_error("cannot write " + cfg.run.out_dir + "/metrics.csv");
        csv << "step,loss,grad_norm,page_ins,step_ms\n";
        bool evaled_last = false;
        int done = trainer.step();
        for (; done < cfg.run.steps; ) {
            dml::StepStats st = trainer.train_step();
            done = trainer.step();
            char buf[200];
            std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%lld,%.3f\n", st.step, st.loss,
                          st.grad_norm, (long long)st.page_ins, st.step_ms);
            csv << buf;
            evaled_last = false;
            if (cfg.run.eval_every > 0 && done % cfg.run.eval_every == 0) {
                csv << eval_row(done, trainer.evaluate());
                evaled_last = true;
            }
        }
        if (!evaled_last) csv << eval_row(done, trainer.evaluate());
        trainer.save(cfg.run.out_dir + "/checkpoint.vpck");
    } catch (const dml::NonFiniteLossError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNonFinite;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int cmd_eval(const std::string& config_path, int64_t seed_override, const std::string& checkpoint) {
    dml::ExperimentConfig cfg;
    try {
        cfg = load_config(config_path, seed_override);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    try {
        dml::Trainer trainer(cfg);
        if (!checkpoint.empty()) trainer.load_weights(checkpoint);
        dml::EvalStats ev = trainer.evaluate();
        std::cout << "step,R@1,R@2,R@4,MAP@R\n" << eval_row(trainer.step(), ev);
        if (ev.excluded > 0)
            std::cerr << "warning: " << ev.excluded << " queries excluded (no same-class peer)\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int cmd_compare(const std::string& config_path, int64_t seed_override, const std::string& methods_arg) {
    dml::ExperimentConfig cfg;
    std::vector<std::string> methods = split_csv(methods_arg);
    try {
        cfg = load_config(config_path, seed_override);
        if (methods.empty()) throw std::runtime_error("compare: --methods must list at least one method");
        for (const std::string& m : methods) dml::apply_compare_method(cfg, m);  // validate names
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    try {
        std::vector<dml::CompareRow> rows = dml::run_compare(cfg, methods);
        std::string csv = dml::compare_csv(rows);
        std::cout << csv << "\n" << dml::compare_table(rows);
        std::filesystem::create_directories(cfg.run.out_dir);
        std::ofstream out(cfg.run.out_dir + "/compare.csv");
        out << csv;
    } catch (const dml::NonFiniteLossError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNonFinite;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int cmd_gradcheck(uint64_t seed, bool corrupt, double h) {
    std::vector<dml::GradCheckItem> items = dml::run_gradcheck_suite(seed, corrupt, h);
    bool ok = true;
    std::printf("%-28s %14s\n", "item", "max_rel_error");
    for (const auto& it : items) {
        bool pass = it.max_rel_error <= 1e-4;
        ok = ok && pass;
        std::printf("%-28s %14.3e  %s\n", it.name.c_str(), it.max_rel_error, pass ? "ok" : "FAIL");
    }
    std::printf("%zu items checked\n", items.size());
    return ok ? 0 : 1;
}

int cmd_inspect(const std::string& path) {
    try {
        std::vector<dml::CheckpointEntry> entries = dml::load_checkpoint(path);
        std::printf("%-40s %-16s %-6s %12s\n", "name", "shape", "dtype", "bytes");
        for (const auto& e : entries)
            std::printf("%-40s %-16s %-6s %12zu\n", e.name.c_str(), dml::shape_str(e.shape).c_str(),
                        "f32", e.data.size() * sizeof(float));
        std::printf("%zu entries\n", entries.size());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dml: desk-scale deep metric learning with semantic proxies"};
    app.require_subcommand(1);
    int64_t seed = -1;

    std::string train_cfg, train_resume;
    CLI::App* train = app.add_subcommand("train", "train per config, write checkpoint + metrics.csv");
    train->add_option("-c,--config", train_cfg, "config JSON path")->required();
    train->add_option("--seed", seed, "override config seed");
    train->add_option("--resume", train_resume, "resume from a checkpoint written by train");

    std::string eval_cfg, eval_ckpt;
    CLI::App* ev = app.add_subcommand("eval", "evaluate retrieval metrics on the eval split");
    ev->add_option("-c,--config", eval_cfg, "config JSON path")->required();
    ev->add_option("--checkpoint", eval_ckpt, "checkpoint to load");
    ev->add_option("--seed", seed, "override config seed");

    std::string cmp_cfg, cmp_methods;
    CLI::App* cmp = app.add_subcommand("compare", "run the method grid and print the table");
    cmp->add_option("-c,--config", cmp_cfg, "config JSON path")->required();
    cmp->add_option("--methods", cmp_methods, "comma-separated method list")->required();
    cmp->add_option("--seed", seed, "override config seed");

    uint64_t gc_seed = 7;
    bool gc_corrupt = false;
    CLI::App* gc = app.add_subcommand("gradcheck", "run the gradient-check suite");
    gc->add_option("--seed", gc_seed, "suite seed");
    gc->add_flag("--corrupt", gc_corrupt, "include the deliberately-broken fixture");
    double gc_h = 0.0;
    gc->add_option("--fd-step", gc_h, "override the finite-difference step");

    std::string ins_path;
    CLI::App* ins = app.add_subcommand("inspect", "list checkpoint entries");
    ins->add_option("checkpoint", ins_path, "VPCK file")->required();

    CLI11_PARSE(app, argc, argv);

    if (train->parsed()) return cmd_train(train_cfg, seed, train_resume);
    if (ev->parsed()) return cmd_eval(eval_cfg, seed, eval_ckpt);
    if (cmp->parsed()) return cmd_compare(cmp_cfg, seed, cmp_methods);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_corrupt, gc_h);
    if (ins->parsed()) return cmd_inspect(ins_path);
    return 1;
}
