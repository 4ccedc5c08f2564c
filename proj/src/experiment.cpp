#include "dml/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <set>
#include <sstream>

namespace dml {

namespace {

// fixed stream ids; per-step streams add the step index
constexpr uint64_t kStreamModel = 1;
constexpr uint64_t kStreamPeft = 2;
constexpr uint64_t kStreamClassPrompts = 3;
constexpr uint64_t kStreamProxy = 4;
constexpr uint64_t kStreamClassifier = 5;
constexpr uint64_t kStreamAugmentBase = 0x41550000'00000000ULL;
constexpr uint64_t kStreamAccumBase = 0xACC00000'00000000ULL;

}  // namespace

Trainer::Trainer(const ExperimentConfig& cfg) : cfg_(cfg) {
    cfg_.validate();

    Dataset all = cfg_.data.source == "synthetic"
                      ? generate_synthetic(cfg_.data.synthetic, cfg_.run.seed)
                      : load_image_folder(cfg_.data.path);
    int train_classes = cfg_.data.train_classes < 0 ? all.num_classes / 2 : cfg_.data.train_classes;
    if (train_classes < 1 || train_classes > all.num_classes)
        throw std::runtime_error("config: data.train_classes outside [1, C]");
    if (train_classes == all.num_classes) {
        train_ = all;
        eval_ = all;
    } else {
        std::tie(train_, eval_) = split_by_classes(all, train_classes);
    }
    int c = train_.num_classes;

    Rng model_rng(cfg_.run.seed, kStreamModel);
    model_ = ViTModel::create(cfg_.model, model_rng);
    Rng peft_rng(cfg_.run.seed, kStreamPeft);
    apply_method(model_, cfg_.peft, peft_rng);

    int e = cfg_.model.head_out_dim;
    if (cfg_.loss.kind == "cross_entropy") {
        Rng cls_rng(cfg_.run.seed, kStreamClassifier);
        double r = std::sqrt(6.0 / double(e + c));
        classifier_w_ = Tensor({int64_t(e), int64_t(c)});
        for (float& v : classifier_w_.data()) v = float(cls_rng.uniform(-r, r));
        classifier_b_ = Tensor({int64_t(c)});
        classifier_w_.set_requires_grad(true);
        classifier_b_.set_requires_grad(true);
    } else {
        ProxyConfig pc = cfg_.proxy;
        if (!pc.enabled) pc.kind = AccumulatorKind::Ema;  // no GRU weights for plain PA
        Rng proxy_rng(cfg_.run.seed, kStreamProxy);
        state_ = ProxyState::create(c, e, pc, proxy_rng);
        has_state_ = true;
        for (auto& [name, t] : state_.trainable_registry()) t.set_requires_grad(true);
        if (cfg_.proxy.enabled && cfg_.proxy.mode == AblationMode::Full) {
            Rng cp_rng(cfg_.run.seed, kStreamClassPrompts);
            store_ = std::make_unique<ClassPromptStore>(ClassPromptStore::create(
                c, cfg_.proxy.cls_layers, cfg_.proxy.class_prompt_count, cfg_.model.hidden_dim,
                cfg_.model.patch_size * cfg_.model.patch_size * 3, cp_rng));
            for (auto& entry : store_->entries)
                for (Tensor& t : entry.layers)
                    if (t.numel() > 0) t.set_requires_grad(true);
        }
    }

    // parameter accounting, while everything is still resident
    {
        Registry extra;
        if (classifier_w_.numel() > 0) {
            extra.emplace_back("classifier.w", classifier_w_);
            extra.emplace_back("classifier.b", classifier_b_);
        }
        if (has_state_)
            for (auto& [name, t] : state_.trainable_registry()) extra.emplace_back(name, t);
        if (store_)
            for (int cc = 0; cc < store_->num_classes; ++cc)
                for (int l = 0; l < store_->cls_layers; ++l)
                    extra.emplace_back(store_->param_name(cc, l), store_->class_layers(cc)[size_t(l)]);
        counts_ = count_params(model_.registry(), extra);
    }

    opt_.cfg = cfg_.optim;

    int classes_per_batch = cfg_.data.batch_size / cfg_.data.per_class;
    if (store_ && store_->bytes_per_class() > 0) {
        int capacity = cfg_.run.buffer_capacity == 0 ? c : cfg_.run.buffer_capacity;
        if (capacity < classes_per_batch)
            throw std::runtime_error("config: run.buffer_capacity " + std::to_string(capacity) +
                                     " below classes-per-batch " + std::to_string(classes_per_batch));
        paging_ = std::make_unique<PagingBuffer>(*store_, opt_, capacity);
    }

    sampler_ = std::make_unique<BalancedSampler>(train_, cfg_.data.batch_size, cfg_.data.per_class,
                                                 cfg_.run.seed);
}

std::vector<ParamRef> Trainer::step_params(const std::vector<int>& batch_classes) {
    std::vector<ParamRef> ps;
    for (auto& [name, t] : model_.registry())
        if (t.requires_grad()) ps.push_back({name, t, cfg_.optim.lr});
    if (classifier_w_.numel() > 0) {
        ps.push_back({"classifier.w", classifier_w_, cfg_.optim.lr});
        ps.push_back({"classifier.b", classifier_b_, cfg_.optim.lr});
    }
    if (has_state_)
        for (auto& [name, t] : state_.trainable_registry())
            ps.push_back({name, t, cfg_.optim.lr_proxy});
    if (store_)
        for (int c : batch_classes)
            for (int l = 0; l < store_->cls_layers; ++l) {
                Tensor& t = store_->class_layers(c)[size_t(l)];
                if (t.numel() > 0) ps.push_back({store_->param_name(c, l), t, cfg_.optim.lr_proxy});
            }
    return ps;
}

StepStats Trainer::train_step() {
    auto t0 = std::chrono::steady_clock::now();

    std::vector<int> idx = sampler_->next_batch();
    std::vector<int> labels(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) labels[i] = train_.items[size_t(idx[i])].label;
    std::vector<int> classes(labels);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

    if (paging_) paging_->page(classes);

    // stale gradients from earlier steps must not leak into this update
    std::vector<ParamRef> params = step_params(classes);
    for (auto& pr : params) pr.tensor.zero_grad();

    Graph g;
    Rng aug_rng(cfg_.run.seed, kStreamAugmentBase + uint64_t(step_));
    std::vector<Tensor> images;
    images.reserve(idx.size());
    for (int i : idx)
        images.push_back(augment(train_.items[size_t(i)].image, cfg_.model.image_size,
                                 cfg_.data.augment, aug_rng));

    Tensor loss;
    std::map<int, Tensor> accumulated;
    try {
        if (cfg_.loss.kind == "cross_entropy") {
            std::vector<Tensor> rows;
            rows.reserve(images.size());
            for (const Tensor& img : images) rows.push_back(model_.embed(g, img, model_.sample_head));
            Tensor logits = g.matmul(g.stack_rows(rows), classifier_w_);
            logits = g.add(logits, classifier_b_);
            loss = softmax_cross_entropy(g, logits, labels);
        } else {
            std::vector<Tensor> embs;
            embs.reserve(images.size());
            for (const Tensor& img : images)
                embs.push_back(g.l2_normalize(model_.embed(g, img, model_.sample_head), 0, kL2NormEps));
            if (cfg_.proxy.enabled) {
                // the proxy tower sees the same augmented views as the sample tower
                static const ClassPromptStore kEmptyStore;
                const ClassPromptStore& store = store_ ? *store_ : kEmptyStore;
                std::map<int, std::vector<Tensor>> grouped;
                for (size_t i = 0; i < images.size(); ++i)
                    grouped[labels[i]].push_back(
                        generate_proxy(g, model_, store, labels[i], images[i], cfg_.proxy.mode));
                Rng order_rng(cfg_.run.seed, kStreamAccumBase + uint64_t(step_));
                accumulated = accumulate_batch(g, grouped, state_, order_rng);
                loss = training_loss(g, embs, labels, accumulated, state_, cfg_.loss.pa);
            } else {
                Tensor q = g.l2_normalize(state_.O, 1, kL2NormEps);
                loss = proxy_anchor_loss(g, g.stack_rows(embs), q, labels, cfg_.loss.pa);
            }
        }
    } catch (const std::runtime_error& err) {
        if (std::strstr(err.what(), "non-finite")) throw NonFiniteLossError(err.what());
        throw;
    }
    if (!std::isfinite(loss.item()))
        throw NonFiniteLossError("train_step: non-finite loss at step " + std::to_string(step_));

    g.backward(loss);
    double grad_norm = global_grad_norm(params);
    optimizer_step(opt_, params);
    for (auto& [c, p_new] : accumulated) state_.set_p_row(c, p_new);

    StepStats st;
    st.step = ++step_;
    st.loss = loss.item();
    st.grad_norm = grad_norm;
    st.page_ins = paging_ ? paging_->counters().page_ins : 0;
    st.step_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return st;
}

EvalStats Trainer::evaluate() {
    const Dataset& ds = cfg_.data.eval_on == "train" ? train_ : eval_;
    if (ds.items.empty()) throw std::runtime_error("evaluate: empty evaluation split");
    int64_t m = int64_t(ds.items.size());
    int64_t e = cfg_.model.head_out_dim;
    RetrievalIndex index;
    index.embeddings = Tensor({m, e});
    index.labels.resize(size_t(m));
    for (int64_t i = 0; i < m; ++i) {
        Graph g;
        Tensor img = eval_transform(ds.items[size_t(i)].image, cfg_.model.image_size);
        Tensor emb = model_.embed(g, img, model_.sample_head);
        double ss = 0.0;
        for (float v : emb.data()) ss += double(v) * double(v);
        double n = std::max(std::sqrt(ss), double(kL2NormEps));
        for (int64_t j = 0; j < e; ++j)
            index.embeddings.data()[size_t(i * e + j)] = float(double(emb.data()[size_t(j)]) / n);
        index.labels[size_t(i)] = ds.items[size_t(i)].label;
    }
    EvalStats s;
    auto k = [&](int kk) { return recall_at_k(index, int(std::min(int64_t(kk), m - 1))).value; };
    s.r1 = k(1);
    s.r2 = k(2);
    s.r4 = k(4);
    MetricResult mr = map_at_r(index);
    s.map_r = mr.value;
    s.excluded = mr.excluded_queries;
    return s;
}

Registry Trainer::param_registry() const {
    Registry r = model_.registry();
    if (classifier_w_.numel() > 0) {
        r.emplace_back("classifier.w", classifier_w_);
        r.emplace_back("classifier.b", classifier_b_);
    }
    if (has_state_)
        for (auto& [name, t] : state_.registry()) r.emplace_back(name, t);
    return r;
}

std::vector<CheckpointEntry> Trainer::state_entries() const {
    std::vector<CheckpointEntry> out;
    for (const auto& [name, t] : param_registry()) {
        CheckpointEntry e;
        e.name = name;
        e.shape = t.shape();
        e.data.assign(t.data().begin(), t.data().end());
        out.push_back(std::move(e));
    }
    if (store_) {
        for (int c = 0; c < store_->num_classes; ++c)
            for (int l = 0; l < store_->cls_layers; ++l) {
                CheckpointEntry e;
                e.name = store_->param_name(c, l);
                e.shape = {int64_t(store_->prompt_count), int64_t(store_->dim)};
                e.data = store_->layer_data(c, l);
                out.push_back(std::move(e));
            }
    }
    auto push_moments = [&out](const std::string& pname, const Moments& mo) {
        CheckpointEntry m{"opt." + pname + ".m", {int64_t(mo.m.size())}, mo.m};
        CheckpointEntry v{"opt." + pname + ".v", {int64_t(mo.v.size())}, mo.v};
        out.push_back(std::move(m));
        out.push_back(std::move(v));
    };
    // deterministic order: sorted parameter names
    std::map<std::string, const Moments*> mom;
    for (const auto& [name, mo] : opt_.moments) mom[name] = &mo;
    if (paging_)
        for (const auto& [c, list] : paging_->paged_moments())
            for (const auto& [name, mo] : list) mom[name] = &mo;
    for (const auto& [name, mo] : mom) push_moments(name, *mo);
    out.push_back({"meta.step", {1}, {float(step_)}});
    out.push_back({"meta.opt_step", {1}, {float(opt_.step)}});
    return out;
}

void Trainer::save(const std::string& path) const { save_checkpoint(path, state_entries()); }

void Trainer::load_state(const std::vector<CheckpointEntry>& entries, bool strict) {
    std::map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;
    std::set<std::string> consumed;

    auto take = [&](const std::string& name) -> const CheckpointEntry* {
        auto it = by_name.find(name);
        if (it == by_name.end()) return nullptr;
        consumed.insert(name);
        return it->second;
    };

    for (auto& [name, t] : param_registry()) {
        const CheckpointEntry* e = take(name);
        if (!e) {
            if (strict) throw std::runtime_error("checkpoint: missing entry " + name);
            continue;
        }
        if (int64_t(e->data.size()) != t.numel())
            throw std::runtime_error("checkpoint: size mismatch for " + name);
        std::copy(e->data.begin(), e->data.end(), t.data().begin());
    }
    if (store_) {
        for (int c = 0; c < store_->num_classes; ++c)
            for (int l = 0; l < store_->cls_layers; ++l) {
                std::string name = store_->param_name(c, l);
                const CheckpointEntry* e = take(name);
                if (!e) {
                    if (strict) throw std::runtime_error("checkpoint: missing entry " + name);
                    continue;
                }
                store_->set_layer_data(c, l, e->data);
            }
    }
    if (strict) {
        for (const auto& e : entries) {
            if (consumed.count(e.name)) continue;
            if (e.name == "meta.step") {
                int target = int(e.data.at(0));
                // replay the sampler so the resumed run continues the sequence
                for (int i = step_; i < target; ++i) sampler_->next_batch();
                step_ = target;
            } else if (e.name == "meta.opt_step") {
                opt_.step = int64_t(e.data.at(0));
            } else if (e.name.rfind("opt.", 0) == 0) {
                std::string rest = e.name.substr(4);
                if (rest.size() < 2 || (rest.substr(rest.size() - 2) != ".m" &&
                                        rest.substr(rest.size() - 2) != ".v"))
                    throw std::runtime_error("checkpoint: malformed moment entry " + e.name);
                std::string pname = rest.substr(0, rest.size() - 2);
                Moments& mo = opt_.moments[pname];
                (rest.back() == 'm' ? mo.m : mo.v) = e.data;
            } else {
                throw std::runtime_error("checkpoint: unknown entry " + e.name);
            }
        }
    }
}

void Trainer::load_weights(const std::string& path) { load_state(load_checkpoint(path), false); }

void Trainer::resume(const std::string& path) { load_state(load_checkpoint(path), true); }

PagingCounters Trainer::paging_counters() const {
    return paging_ ? paging_->counters() : PagingCounters{};
}

ExperimentConfig apply_compare_method(ExperimentConfig base, const std::string& name) {
    std::string m = name;
    bool bitfit_combo = false;
    const std::string suffix = "+bitfit";
    if (m.size() > suffix.size() && m.substr(m.size() - suffix.size()) == suffix) {
        bitfit_combo = true;
        m = m.substr(0, m.size() - suffix.size());
    }
    base.loss.kind = "proxy_anchor";
    base.proxy.enabled = false;
    if (m == "full")
        base.peft.method = PeftMethod::Full;
    else if (m == "linear_probe")
        base.peft.method = PeftMethod::LinearProbe;
    else if (m == "bitfit")
        base.peft.method = PeftMethod::BitFit;
    else if (m == "adapter")
        base.peft.method = PeftMethod::Adapter;
    else if (m == "vpt")
        base.peft.method = PeftMethod::Vpt;
    else if (m == "vptsp_m" || m == "vptsp_g") {
        base.peft.method = PeftMethod::Vpt;
        base.proxy.enabled = true;
        base.proxy.mode = AblationMode::Full;
        base.proxy.kind = m == "vptsp_m" ? AccumulatorKind::Ema : AccumulatorKind::GruRelu;
    } else {
        throw std::runtime_error("compare: unknown method '" + name + "'");
    }
    base.peft.combine_bitfit = bitfit_combo;
    return base;
}

std::vector<CompareRow> run_compare(const ExperimentConfig& base,
                                    const std::vector<std::string>& methods) {
    std::vector<CompareRow> rows;
    for (const std::string& name : methods) {
        ExperimentConfig cfg = apply_compare_method(base, name);
        Trainer t(cfg);
        if (!cfg.run.init_checkpoint.empty()) t.load_weights(cfg.run.init_checkpoint);
        std::vector<double> times;
        times.reserve(size_t(cfg.run.steps));
        for (int s = 0; s < cfg.run.steps; ++s) times.push_back(t.train_step().step_ms);
        CompareRow r;
        r.method = name;
        r.tunable_params = t.param_counts().tunable;
        r.tunable_fraction = t.param_counts().tunable_fraction;
        r.peak_resident_bytes = t.paging_counters().peak_resident_bytes;
        EvalStats ev = t.evaluate();
        r.r1 = ev.r1;
        r.map_r = ev.map_r;
        if (!times.empty()) {
            std::sort(times.begin(), times.end());
            r.step_ms = times[times.size() / 2];
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
    std::ostringstream os;
    os << "method,tunable_params,tunable_fraction,peak_resident_bytes,R@1,MAP@R,step_ms\n";
    for (const CompareRow& r : rows) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%lld,%.6f,%lld,%.4f,%.4f,%.2f\n", r.method.c_str(),
                      (long long)r.tunable_params, r.tunable_fraction, (long long)r.peak_resident_bytes,
                      r.r1, r.map_r, r.step_ms);
        os << buf;
    }
    return os.str();
}

std::string compare_table(const std::vector<CompareRow>& rows) {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-16s %14s %10s %14s %8s %8s %10s\n", "method", "tunable_params",
                  "fraction", "peak_bytes", "R@1", "MAP@R", "step_ms");
    os << buf;
    for (const CompareRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-16s %14lld %10.6f %14lld %8.4f %8.4f %10.2f\n",
                      r.method.c_str(), (long long)r.tunable_params, r.tunable_fraction,
                      (long long)r.peak_resident_bytes, r.r1, r.map_r, r.step_ms);
        os << buf;
    }
    return os.str();
}

}  // namespace dml
