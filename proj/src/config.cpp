#include "aau/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace aau {

namespace {

using nlohmann::json;

json parse(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    require(!j.is_discarded(), "bad-config", "config is not valid JSON");
    return j;
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    require(j.is_object(), "bad-config", where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        require(allowed.count(it.key()) > 0, "unknown-key", where + " has unknown key '" + it.key() + "'");
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

ModelConfig model_from(const json& j) {
    static const std::set<std::string> keys = {
        "preset",          "embed_dim",        "window",
        "stride",          "swin_blocks_per_rstb", "num_scales",
        "heads_per_scale", "skip_count",       "skip_placement",
        "max_interp_window", "use_ape",        "use_rpe",
        "input_h",         "input_w",          "rstb_conv_kernel",
        "mlp_ratio",       "sinkhorn_iters",   "sinkhorn_temperature",
        "occlusion_threshold", "ctx_channels", "ctx_blocks",
        "ctx_use_occ_input"};
    check_keys(j, keys, "model");
    ModelConfig c;
    if (j.contains("preset")) c = ModelConfig::preset(j.at("preset").get<std::string>());
    get_if(j, "embed_dim", c.embed_dim);
    get_if(j, "window", c.window);
    get_if(j, "stride", c.stride);
    get_if(j, "swin_blocks_per_rstb", c.swin_blocks_per_rstb);
    get_if(j, "num_scales", c.num_scales);
    if (j.contains("heads_per_scale")) c.heads_per_scale = j.at("heads_per_scale").get<std::vector<int>>();
    get_if(j, "skip_count", c.skip_count);
    if (j.contains("skip_placement")) {
        const std::string v = j.at("skip_placement").get<std::string>();
        if (v == "before_cross") {
            c.skip_placement = ModelConfig::SkipPlacement::BeforeCross;
        } else if (v == "after_cross") {
            c.skip_placement = ModelConfig::SkipPlacement::AfterCross;
        } else {
            fail("bad-config", "skip_placement must be before_cross or after_cross");
        }
    }
    get_if(j, "max_interp_window", c.max_interp_window);
    get_if(j, "use_ape", c.use_ape);
    get_if(j, "use_rpe", c.use_rpe);
    get_if(j, "input_h", c.input_h);
    get_if(j, "input_w", c.input_w);
    get_if(j, "rstb_conv_kernel", c.rstb_conv_kernel);
    get_if(j, "mlp_ratio", c.mlp_ratio);
    get_if(j, "sinkhorn_iters", c.sinkhorn_iters);
    get_if(j, "sinkhorn_temperature", c.sinkhorn_temperature);
    get_if(j, "occlusion_threshold", c.occlusion_threshold);
    get_if(j, "ctx_channels", c.ctx_channels);
    get_if(j, "ctx_blocks", c.ctx_blocks);
    get_if(j, "ctx_use_occ_input", c.ctx_use_occ_input);
    c.validate();
    return c;
}

json model_to(const ModelConfig& c) {
    json j;
    j["embed_dim"] = c.embed_dim;
    j["window"] = c.window;
    j["stride"] = c.stride;
    j["swin_blocks_per_rstb"] = c.swin_blocks_per_rstb;
    j["num_scales"] = c.num_scales;
    if (!c.heads_per_scale.empty()) j["heads_per_scale"] = c.heads_per_scale;
    j["skip_count"] = c.skip_count;
    j["skip_placement"] =
        c.skip_placement == ModelConfig::SkipPlacement::BeforeCross ? "before_cross" : "after_cross";
    j["max_interp_window"] = c.max_interp_window;
    j["use_ape"] = c.use_ape;
    j["use_rpe"] = c.use_rpe;
    j["input_h"] = c.input_h;
    j["input_w"] = c.input_w;
    j["rstb_conv_kernel"] = c.rstb_conv_kernel;
    j["mlp_ratio"] = c.mlp_ratio;
    j["sinkhorn_iters"] = c.sinkhorn_iters;
    j["sinkhorn_temperature"] = c.sinkhorn_temperature;
    j["occlusion_threshold"] = c.occlusion_threshold;
    j["ctx_channels"] = c.ctx_channels;
    j["ctx_blocks"] = c.ctx_blocks;
    j["ctx_use_occ_input"] = c.ctx_use_occ_input;
    return j;
}

} // namespace

ModelConfig model_config_from_json(const std::string& text) { return model_from(parse(text)); }

std::string model_config_to_json(const ModelConfig& cfg) { return model_to(cfg).dump(2); }

RunConfig run_config_from_json(const std::string& text) {
    const json j = parse(text);
    static const std::set<std::string> keys = {"model", "seed", "loss_weights", "train"};
    check_keys(j, keys, "config");
    RunConfig c;
    if (j.contains("model")) c.model = model_from(j.at("model"));
    get_if(j, "seed", c.seed);
    if (j.contains("loss_weights")) {
        const json& w = j.at("loss_weights");
        check_keys(w, {"w_rr", "w_d1r", "w_d1f", "w_be"}, "loss_weights");
        get_if(w, "w_rr", c.loss_weights.w_rr);
        get_if(w, "w_d1r", c.loss_weights.w_d1r);
        get_if(w, "w_d1f", c.loss_weights.w_d1f);
        get_if(w, "w_be", c.loss_weights.w_be);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, {"lr", "lr_context", "weight_decay", "steps"}, "train");
        get_if(t, "lr", c.train.lr);
        if (t.contains("lr_context")) {
            c.train.lr_context = t.at("lr_context").get<double>();
        } else if (t.contains("lr")) {
            c.train.lr_context = 2.0 * c.train.lr;
        }
        get_if(t, "weight_decay", c.train.weight_decay);
        get_if(t, "steps", c.train.steps);
    }
    return c;
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["model"] = model_to(cfg.model);
    j["seed"] = cfg.seed;
    j["loss_weights"] = {{"w_rr", cfg.loss_weights.w_rr},
                         {"w_d1r", cfg.loss_weights.w_d1r},
                         {"w_d1f", cfg.loss_weights.w_d1f},
                         {"w_be", cfg.loss_weights.w_be}};
    j["train"] = {{"lr", cfg.train.lr},
                  {"lr_context", cfg.train.lr_context},
                  {"weight_decay", cfg.train.weight_decay},
                  {"steps", cfg.train.steps}};
    return j.dump(2);
}

RunConfig run_config_from_file(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "io-error", "cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return run_config_from_json(text);
}

} // namespace aau
