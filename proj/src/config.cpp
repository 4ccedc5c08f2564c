#include "dml/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace dml {

namespace {

// parse-then-validate with typo protection: any key we don't know is an error
class Section {
public:
    Section(const Json& j, std::string path) : j_(&j), path_(std::move(path)) {
        if (!j.is_object()) throw std::runtime_error("config: " + path_ + " must be an object");
    }
    ~Section() = default;

    template <typename T>
    T get(const std::string& key, T fallback) {
        seen_.insert(key);
        if (!j_->contains(key)) return fallback;
        try {
            return j_->at(key).get<T>();
        } catch (const std::exception&) {
            throw std::runtime_error("config: bad value type at " + path_ + "." + key);
        }
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_->contains(key);
    }

    const Json& sub(const std::string& key) {
        seen_.insert(key);
        return j_->at(key);
    }

    void finish() const {
        for (auto& [key, value] : j_->items()) {
            if (!seen_.count(key))
                throw std::runtime_error("config: unknown key " +
                                         (path_.empty() ? key : path_ + "." + key));
        }
    }

private:
    const Json* j_;
    std::string path_;
    std::set<std::string> seen_;
};

AdapterPosition adapter_position_from_string(const std::string& s) {
    if (s == "sequential") return AdapterPosition::Sequential;
    if (s == "parallel") return AdapterPosition::Parallel;
    throw std::runtime_error("config: unknown adapter position '" + s + "'");
}

AdapterSite adapter_site_from_string(const std::string& s) {
    if (s == "pre") return AdapterSite::PreAttention;
    if (s == "post") return AdapterSite::PostMlp;
    throw std::runtime_error("config: unknown adapter site '" + s + "'");
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
    ExperimentConfig c;
    Section root(j, "");

    if (root.has("model")) {
        Section s(root.sub("model"), "model");
        c.model.image_size = s.get("image_size", c.model.image_size);
        c.model.patch_size = s.get("patch_size", c.model.patch_size);
        c.model.layers = s.get("layers", c.model.layers);
        c.model.hidden_dim = s.get("hidden_dim", c.model.hidden_dim);
        c.model.heads = s.get("heads", c.model.heads);
        c.model.mlp_ratio = s.get("mlp_ratio", c.model.mlp_ratio);
        c.model.head_out_dim = s.get("head_out_dim", c.model.head_out_dim);
        s.finish();
    }
    if (root.has("peft")) {
        Section s(root.sub("peft"), "peft");
        c.peft.method = peft_method_from_string(s.get<std::string>("method", to_string(c.peft.method)));
        c.peft.combine_bitfit = s.get("combine_bitfit", c.peft.combine_bitfit);
        if (s.has("adapter")) {
            Section a(s.sub("adapter"), "peft.adapter");
            c.peft.adapter.mid_dim = a.get("mid_dim", c.peft.adapter.mid_dim);
            c.peft.adapter.layers = a.get("layers", c.peft.adapter.layers);
            c.peft.adapter.position =
                adapter_position_from_string(a.get<std::string>("position", "sequential"));
            c.peft.adapter.site = adapter_site_from_string(a.get<std::string>("site", "post"));
            a.finish();
        }
        if (s.has("vpt")) {
            Section v(s.sub("vpt"), "peft.vpt");
            c.peft.vpt.base_count = v.get("n", c.peft.vpt.base_count);
            c.peft.vpt.tau_step = v.get("tau_step", c.peft.vpt.tau_step);
            c.peft.vpt.layers = v.get("layers", c.peft.vpt.layers);
            v.finish();
        }
        s.finish();
    }
    if (root.has("proxy")) {
        Section s(root.sub("proxy"), "proxy");
        c.proxy.enabled = s.get("enabled", c.proxy.enabled);
        c.proxy.class_prompt_count = s.get("m", c.proxy.class_prompt_count);
        c.proxy.cls_layers = s.get("cls_layers", c.proxy.cls_layers);
        c.proxy.lambda = s.get("lambda", c.proxy.lambda);
        c.proxy.alpha = s.get("alpha", c.proxy.alpha);
        c.proxy.kind = accumulator_from_string(s.get<std::string>("accumulator", to_string(c.proxy.kind)));
        c.proxy.ema_textbook = s.get("ema_textbook", c.proxy.ema_textbook);
        c.proxy.mode = ablation_from_string(s.get<std::string>("ablation_mode", to_string(c.proxy.mode)));
        s.finish();
    }
    if (root.has("loss")) {
        Section s(root.sub("loss"), "loss");
        c.loss.kind = s.get<std::string>("kind", c.loss.kind);
        c.loss.pa.pa_scale = s.get("pa_scale", c.loss.pa.pa_scale);
        c.loss.pa.margin = s.get("margin", c.loss.pa.margin);
        std::string conv = s.get<std::string>("pa_margin_convention", "paper");
        if (conv == "paper")
            c.loss.pa.published_convention = false;
        else if (conv == "published")
            c.loss.pa.published_convention = true;
        else
            throw std::runtime_error("config: loss.pa_margin_convention must be 'paper' or 'published'");
        s.finish();
    }
    if (root.has("optim")) {
        Section s(root.sub("optim"), "optim");
        c.optim.kind = optim_kind_from_string(s.get<std::string>("kind", to_string(c.optim.kind)));
        c.optim.lr = s.get("lr", c.optim.lr);
        c.optim.lr_proxy = s.get("lr_proxy", c.optim.lr_proxy);
        c.optim.beta1 = s.get("beta1", c.optim.beta1);
        c.optim.beta2 = s.get("beta2", c.optim.beta2);
        c.optim.weight_decay = s.get("weight_decay", c.optim.weight_decay);
        c.optim.clip_norm = s.get("clip_norm", c.optim.clip_norm);
        s.finish();
    }
    if (root.has("data")) {
        Section s(root.sub("data"), "data");
        c.data.source = s.get<std::string>("source", c.data.source);
        c.data.path = s.get<std::string>("path", c.data.path);
        c.data.batch_size = s.get("batch_size", c.data.batch_size);
        c.data.per_class = s.get("per_class", c.data.per_class);
        c.data.train_classes = s.get("train_classes", c.data.train_classes);
        c.data.eval_on = s.get<std::string>("eval_on", c.data.eval_on);
        if (s.has("synthetic")) {
            Section y(s.sub("synthetic"), "data.synthetic");
            c.data.synthetic.num_classes = y.get("classes", c.data.synthetic.num_classes);
            c.data.synthetic.per_class = y.get("per_class", c.data.synthetic.per_class);
            c.data.synthetic.image_size = y.get("image_size", c.data.synthetic.image_size);
            c.data.synthetic.cluster_separation = y.get("separation", c.data.synthetic.cluster_separation);
            c.data.synthetic.noise_std = y.get("noise_std", c.data.synthetic.noise_std);
            y.finish();
        }
        if (s.has("augment")) {
            Section a(s.sub("augment"), "data.augment");
            c.data.augment.enabled = a.get("enabled", c.data.augment.enabled);
            c.data.augment.min_scale = a.get("min_scale", c.data.augment.min_scale);
            c.data.augment.max_scale = a.get("max_scale", c.data.augment.max_scale);
            c.data.augment.flip = a.get("flip", c.data.augment.flip);
            a.finish();
        }
        s.finish();
    }
    if (root.has("run")) {
        Section s(root.sub("run"), "run");
        c.run.steps = s.get("steps", c.run.steps);
        c.run.eval_every = s.get("eval_every", c.run.eval_every);
        c.run.seed = s.get("seed", c.run.seed);
        c.run.buffer_capacity = s.get("buffer_capacity", c.run.buffer_capacity);
        c.run.init_checkpoint = s.get<std::string>("init_checkpoint", c.run.init_checkpoint);
        c.run.out_dir = s.get<std::string>("out_dir", c.run.out_dir);
        s.finish();
    }
    root.finish();
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    Json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("config: JSON parse error in " + path + ": " + e.what());
    }
    return from_json(j);
}

Json ExperimentConfig::to_json() const {
    Json j;
    j["model"] = {{"image_size", model.image_size}, {"patch_size", model.patch_size},
                  {"layers", model.layers},         {"hidden_dim", model.hidden_dim},
                  {"heads", model.heads},           {"mlp_ratio", model.mlp_ratio},
                  {"head_out_dim", model.head_out_dim}};
    j["peft"] = {{"method", to_string(peft.method)},
                 {"combine_bitfit", peft.combine_bitfit},
                 {"adapter",
                  {{"mid_dim", peft.adapter.mid_dim},
                   {"layers", peft.adapter.layers},
                   {"position", peft.adapter.position == AdapterPosition::Sequential ? "sequential" : "parallel"},
                   {"site", peft.adapter.site == AdapterSite::PostMlp ? "post" : "pre"}}},
                 {"vpt",
                  {{"n", peft.vpt.base_count}, {"tau_step", peft.vpt.tau_step}, {"layers", peft.vpt.layers}}}};
    j["proxy"] = {{"enabled", proxy.enabled},       {"m", proxy.class_prompt_count},
                  {"cls_layers", proxy.cls_layers}, {"lambda", proxy.lambda},
                  {"alpha", proxy.alpha},           {"accumulator", to_string(proxy.kind)},
                  {"ema_textbook", proxy.ema_textbook}, {"ablation_mode", to_string(proxy.mode)}};
    j["loss"] = {{"kind", loss.kind},
                 {"pa_scale", loss.pa.pa_scale},
                 {"margin", loss.pa.margin},
                 {"pa_margin_convention", loss.pa.published_convention ? "published" : "paper"}};
    j["optim"] = {{"kind", to_string(optim.kind)}, {"lr", optim.lr},
                  {"lr_proxy", optim.lr_proxy},    {"beta1", optim.beta1},
                  {"beta2", optim.beta2},          {"weight_decay", optim.weight_decay},
                  {"clip_norm", optim.clip_norm}};
    j["data"] = {{"source", data.source},
                 {"path", data.path},
                 {"batch_size", data.batch_size},
                 {"per_class", data.per_class},
                 {"train_classes", data.train_classes},
                 {"eval_on", data.eval_on},
                 {"synthetic",
                  {{"classes", data.synthetic.num_classes},
                   {"per_class", data.synthetic.per_class},
                   {"image_size", data.synthetic.image_size},
                   {"separation", data.synthetic.cluster_separation},
                   {"noise_std", data.synthetic.noise_std}}},
                 {"augment",
                  {{"enabled", data.augment.enabled},
                   {"min_scale", data.augment.min_scale},
                   {"max_scale", data.augment.max_scale},
                   {"flip", data.augment.flip}}}};
    j["run"] = {{"steps", run.steps},
                {"eval_every", run.eval_every},
                {"seed", run.seed},
                {"buffer_capacity", run.buffer_capacity},
                {"init_checkpoint", run.init_checkpoint},
                {"out_dir", run.out_dir}};
    return j;
}

void ExperimentConfig::validate() const {
    model.validate();
    peft.validate(model.layers, model.hidden_dim);
    if (loss.kind != "proxy_anchor" && loss.kind != "cross_entropy")
        throw std::runtime_error("config: loss.kind must be proxy_anchor or cross_entropy");
    loss.pa.validate();
    if (data.source != "synthetic" && data.source != "folder")
        throw std::runtime_error("config: data.source must be synthetic or folder");
    if (data.eval_on != "eval" && data.eval_on != "train")
        throw std::runtime_error("config: data.eval_on must be eval or train");
    if (data.batch_size < 1 || data.per_class < 1 || data.batch_size % data.per_class != 0)
        throw std::runtime_error("config: data.batch_size must be a positive multiple of data.per_class");
    if (proxy.enabled) {
        if (proxy.cls_layers < 0 || proxy.cls_layers > model.layers)
            throw std::runtime_error("config: proxy.cls_layers outside [0, model.layers]");
        if (proxy.class_prompt_count < 0) throw std::runtime_error("config: proxy.m must be >= 0");
        if (proxy.lambda < 0.0f || proxy.lambda > 1.0f)
            throw std::runtime_error("config: proxy.lambda must be in [0,1]");
        if (proxy.alpha < 0.0f || proxy.alpha > 1.0f)
            throw std::runtime_error("config: proxy.alpha must be in [0,1]");
    }
    if (run.steps < 0 || run.eval_every < 0) throw std::runtime_error("config: run.steps/eval_every must be >= 0");
    if (run.buffer_capacity < 0) throw std::runtime_error("config: run.buffer_capacity must be >= 0");
}

}  // namespace dml
