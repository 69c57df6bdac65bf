// SPDX-License-Identifier: Apache-2.0
#include "crossmatch/config.hpp"

#include <json.hpp>

#include <algorithm>

#include "crossmatch/common.hpp"
#include "crossmatch/sha256.hpp"

namespace crossmatch {

using nlohmann::json;

namespace {

template <typename T>
T enum_from(const json& j, const std::string& key, const std::vector<std::pair<std::string, T>>& table) {
    const std::string s = j.at(key).get<std::string>();
    for (const auto& [name, v] : table)
        if (name == s) return v;
    throw ConfigError("unknown value '" + s + "' for " + key);
}

const std::vector<std::pair<std::string, Method>> kMethods = {
    {"crossmatch", Method::crossmatch},
    {"fixmatch", Method::fixmatch},
    {"dualstream", Method::dualstream},
    {"supervised_only", Method::supervised_only}};
const std::vector<std::pair<std::string, Normalization>> kNorms = {
    {"group", Normalization::group}, {"instance", Normalization::instance}, {"batch", Normalization::batch}};
const std::vector<std::pair<std::string, OptKind>> kOpts = {
    {"sgd_momentum", OptKind::sgd_momentum}, {"adamw", OptKind::adamw}};
const std::vector<std::pair<std::string, LrSchedule>> kSchedules = {
    {"constant", LrSchedule::constant}, {"poly", LrSchedule::poly}};
const std::vector<std::pair<std::string, HKind>> kHKinds = {
    {"dice", HKind::dice}, {"ce", HKind::ce}, {"kl", HKind::kl}};
const std::vector<std::pair<std::string, PerturbKind>> kPerturbKinds = {
    {"none", PerturbKind::none},
    {"channel_dropout", PerturbKind::channel_dropout},
    {"alpha_dropout", PerturbKind::alpha_dropout},
    {"feature_alpha_dropout", PerturbKind::feature_alpha_dropout}};

template <typename T>
std::string enum_name(T v, const std::vector<std::pair<std::string, T>>& table) {
    for (const auto& [name, x] : table)
        if (x == v) return name;
    throw InternalError("unmapped enum value");
}

void reject_unknown_keys(const json& j, const std::string& section,
                         std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        check_config(ok, "unknown config key '" + section + it.key() + "'");
    }
}

std::set<std::string> string_set(const json& j, const std::string& key,
                                 const std::set<std::string>& universe) {
    std::set<std::string> out;
    for (const auto& v : j.at(key)) {
        const std::string s = v.get<std::string>();
        check_config(universe.count(s) > 0, "invalid entry '" + s + "' in " + key);
        out.insert(s);
    }
    return out;
}

json parse_json(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

}  // namespace

std::string method_name(Method m) { return enum_name(m, kMethods); }
std::string h_kind_name(HKind k) { return enum_name(k, kHKinds); }
std::string perturb_kind_name(PerturbKind k) { return enum_name(k, kPerturbKinds); }

void apply_method_preset(TrainConfig& cfg) {
    switch (cfg.method) {
        case Method::crossmatch:
            break;
        case Method::fixmatch:
            // One weak→strong pair, no feature-perturbed streams.
            cfg.loss.tkd_students.clear();
            cfg.loss.dkd_terms.clear();
            cfg.loss.ip_streams = {"s1"};
            cfg.perturb.kind = PerturbKind::none;
            break;
        case Method::dualstream:
            cfg.loss.tkd_students = {"p_w_w", "p_s_s"};
            break;
        case Method::supervised_only:
            cfg.loss.tkd_students.clear();
            cfg.loss.dkd_terms.clear();
            cfg.loss.ip_streams.clear();
            break;
    }
}

TrainConfig parse_train_config(const std::string& json_text) {
    const json j = parse_json(json_text);
    TrainConfig cfg;
    reject_unknown_keys(j, "", {"method", "iterations", "batch_size", "seed", "eval_every",
                                "checkpoint_every", "naive_mode", "net", "optimizer", "loss",
                                "perturb", "augment", "split"});
    if (j.contains("method")) cfg.method = enum_from(j, "method", kMethods);
    cfg.iterations = j.value("iterations", cfg.iterations);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    cfg.naive_mode = j.value("naive_mode", cfg.naive_mode);

    if (j.contains("net")) {
        const json& n = j.at("net");
        reject_unknown_keys(n, "net.", {"in_channels", "num_classes", "base_width", "depth", "normalization"});
        cfg.net.in_channels = n.value("in_channels", cfg.net.in_channels);
        cfg.net.num_classes = n.value("num_classes", cfg.net.num_classes);
        cfg.net.base_width = n.value("base_width", cfg.net.base_width);
        cfg.net.depth = n.value("depth", cfg.net.depth);
        if (n.contains("normalization")) cfg.net.normalization = enum_from(n, "normalization", kNorms);
    }
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        reject_unknown_keys(o, "optimizer.", {"kind", "lr", "momentum", "beta1", "beta2", "eps",
                                              "weight_decay", "schedule", "poly_power"});
        if (o.contains("kind")) cfg.optimizer.kind = enum_from(o, "kind", kOpts);
        cfg.optimizer.lr = o.value("lr", cfg.optimizer.lr);
        cfg.optimizer.momentum = o.value("momentum", cfg.optimizer.momentum);
        cfg.optimizer.beta1 = o.value("beta1", cfg.optimizer.beta1);
        cfg.optimizer.beta2 = o.value("beta2", cfg.optimizer.beta2);
        cfg.optimizer.eps = o.value("eps", cfg.optimizer.eps);
        cfg.optimizer.weight_decay = o.value("weight_decay", cfg.optimizer.weight_decay);
        if (o.contains("schedule")) cfg.optimizer.schedule = enum_from(o, "schedule", kSchedules);
        cfg.optimizer.poly_power = o.value("poly_power", cfg.optimizer.poly_power);
    }
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        reject_unknown_keys(l, "loss.", {"tau", "eta", "h_kind", "temperature", "dice_smooth",
                                         "tkd_students", "dkd_terms", "ip_streams"});
        cfg.loss.tau = l.value("tau", cfg.loss.tau);
        cfg.loss.eta = l.value("eta", cfg.loss.eta);
        if (l.contains("h_kind")) cfg.loss.h_kind = enum_from(l, "h_kind", kHKinds);
        cfg.loss.temperature = l.value("temperature", cfg.loss.temperature);
        cfg.loss.dice_smooth = l.value("dice_smooth", cfg.loss.dice_smooth);
        if (l.contains("tkd_students"))
            cfg.loss.tkd_students = string_set(l, "tkd_students", {"p_w_w", "p_s_w", "p_w_s", "p_s_s"});
        if (l.contains("dkd_terms")) cfg.loss.dkd_terms = string_set(l, "dkd_terms", {"w", "s"});
        if (l.contains("ip_streams")) cfg.loss.ip_streams = string_set(l, "ip_streams", {"s1", "s2"});
    }
    if (j.contains("perturb")) {
        const json& p = j.at("perturb");
        reject_unknown_keys(p, "perturb.", {"kind", "weak_rate", "strong_rate", "scale_correction"});
        if (p.contains("kind")) cfg.perturb.kind = enum_from(p, "kind", kPerturbKinds);
        cfg.perturb.weak_rate = p.value("weak_rate", cfg.perturb.weak_rate);
        cfg.perturb.strong_rate = p.value("strong_rate", cfg.perturb.strong_rate);
        cfg.perturb.scale_correction = p.value("scale_correction", cfg.perturb.scale_correction);
    }
    if (j.contains("augment")) {
        const json& a = j.at("augment");
        reject_unknown_keys(a, "augment.", {"crop_h", "crop_w", "strong_prob", "brightness",
                                            "contrast_lo", "contrast_hi", "gamma_lo", "gamma_hi",
                                            "blur_sigma_max", "noise_sigma_max", "cutmix"});
        cfg.augment.crop_h = a.value("crop_h", cfg.augment.crop_h);
        cfg.augment.crop_w = a.value("crop_w", cfg.augment.crop_w);
        cfg.augment.strong_prob = a.value("strong_prob", cfg.augment.strong_prob);
        cfg.augment.brightness = a.value("brightness", cfg.augment.brightness);
        cfg.augment.contrast_lo = a.value("contrast_lo", cfg.augment.contrast_lo);
        cfg.augment.contrast_hi = a.value("contrast_hi", cfg.augment.contrast_hi);
        cfg.augment.gamma_lo = a.value("gamma_lo", cfg.augment.gamma_lo);
        cfg.augment.gamma_hi = a.value("gamma_hi", cfg.augment.gamma_hi);
        cfg.augment.blur_sigma_max = a.value("blur_sigma_max", cfg.augment.blur_sigma_max);
        cfg.augment.noise_sigma_max = a.value("noise_sigma_max", cfg.augment.noise_sigma_max);
        cfg.augment.cutmix = a.value("cutmix", cfg.augment.cutmix);
    }
    if (j.contains("split")) {
        const json& s = j.at("split");
        reject_unknown_keys(s, "split.", {"labeled_fraction", "seed", "num_classes"});
        cfg.split.labeled_fraction = s.value("labeled_fraction", cfg.split.labeled_fraction);
        cfg.split.seed = s.value("seed", cfg.split.seed);
        cfg.split.num_classes = s.value("num_classes", cfg.split.num_classes);
    }
    cfg.split.num_classes = cfg.net.num_classes;

    check_config(cfg.iterations >= 0, "iterations must be >= 0");
    check_config(cfg.batch_size >= 2, "batch_size must be >= 2");
    if (cfg.method != Method::supervised_only)
        check_config(cfg.batch_size % 2 == 0, "batch_size must be even for semi-supervised methods");
    check_config(cfg.net.depth >= 2, "net.depth must be >= 2");
    check_config(cfg.net.num_classes >= 2, "net.num_classes must be >= 2");
    check_config(cfg.net.base_width >= 2, "net.base_width must be >= 2");
    if (cfg.net.normalization == Normalization::group)
        check_config(cfg.net.base_width % 4 == 0, "group normalization requires base_width divisible by 4");
    check_config(cfg.optimizer.lr > 0.0, "optimizer.lr must be > 0");
    check_config(cfg.optimizer.weight_decay >= 0.0, "optimizer.weight_decay must be >= 0");
    check_config(cfg.loss.tau >= 0.0 && cfg.loss.tau <= 1.0, "loss.tau must be in [0,1]");
    check_config(cfg.loss.eta >= 0.0 && cfg.loss.eta <= 1.0, "loss.eta must be in [0,1]");
    check_config(cfg.loss.temperature > 0.0, "loss.temperature must be > 0");
    check_config(cfg.loss.h_kind == HKind::kl || cfg.loss.temperature == 1.0,
                 "loss.temperature must be 1 unless h_kind is kl");
    check_config(cfg.loss.dice_smooth >= 0.0, "loss.dice_smooth must be >= 0");
    check_config(cfg.perturb.weak_rate >= 0.0 && cfg.perturb.weak_rate < 1.0,
                 "perturb.weak_rate must be in [0,1)");
    check_config(cfg.perturb.strong_rate >= 0.0 && cfg.perturb.strong_rate < 1.0,
                 "perturb.strong_rate must be in [0,1)");
    if (cfg.perturb.kind != PerturbKind::none)
        check_config(cfg.perturb.weak_rate < cfg.perturb.strong_rate,
                     "perturb.weak_rate must be < perturb.strong_rate");
    check_config(cfg.split.labeled_fraction > 0.0 && cfg.split.labeled_fraction <= 1.0,
                 "split.labeled_fraction must be in (0,1]");
    check_config(cfg.augment.strong_prob >= 0.0 && cfg.augment.strong_prob <= 1.0,
                 "augment.strong_prob must be in [0,1]");

    apply_method_preset(cfg);
    return cfg;
}

SynthSpec parse_synth_spec(const std::string& json_text) {
    const json j = parse_json(json_text);
    SynthSpec s;
    reject_unknown_keys(j, "", {"count", "height", "width", "num_classes", "shapes_min",
                                "shapes_max", "noise_sigma", "blur_sigma", "seed"});
    s.count = j.value("count", s.count);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.num_classes = j.value("num_classes", s.num_classes);
    s.shapes_min = j.value("shapes_min", s.shapes_min);
    s.shapes_max = j.value("shapes_max", s.shapes_max);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.blur_sigma = j.value("blur_sigma", s.blur_sigma);
    s.seed = j.value("seed", s.seed);
    check_config(s.count >= 0, "count must be >= 0");
    check_config(s.height >= 8 && s.width >= 8, "height/width must be >= 8");
    check_config(s.num_classes >= 2, "num_classes must be >= 2");
    check_config(s.shapes_min >= 1 && s.shapes_max >= s.shapes_min, "invalid shapes range");
    check_config(s.noise_sigma >= 0.0 && s.blur_sigma >= 0.0, "sigmas must be >= 0");
    return s;
}

namespace {

json to_json(const TrainConfig& c) {
    json j;
    j["method"] = method_name(c.method);
    j["iterations"] = c.iterations;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["eval_every"] = c.eval_every;
    j["checkpoint_every"] = c.checkpoint_every;
    j["naive_mode"] = c.naive_mode;
    j["net"] = {{"in_channels", c.net.in_channels},
                {"num_classes", c.net.num_classes},
                {"base_width", c.net.base_width},
                {"depth", c.net.depth},
                {"normalization", enum_name(c.net.normalization, kNorms)}};
    j["optimizer"] = {{"kind", enum_name(c.optimizer.kind, kOpts)},
                      {"lr", c.optimizer.lr},
                      {"momentum", c.optimizer.momentum},
                      {"beta1", c.optimizer.beta1},
                      {"beta2", c.optimizer.beta2},
                      {"eps", c.optimizer.eps},
                      {"weight_decay", c.optimizer.weight_decay},
                      {"schedule", enum_name(c.optimizer.schedule, kSchedules)},
                      {"poly_power", c.optimizer.poly_power}};
    j["loss"] = {{"tau", c.loss.tau},
                 {"eta", c.loss.eta},
                 {"h_kind", h_kind_name(c.loss.h_kind)},
                 {"temperature", c.loss.temperature},
                 {"dice_smooth", c.loss.dice_smooth},
                 {"tkd_students", c.loss.tkd_students},
                 {"dkd_terms", c.loss.dkd_terms},
                 {"ip_streams", c.loss.ip_streams}};
    j["perturb"] = {{"kind", perturb_kind_name(c.perturb.kind)},
                    {"weak_rate", c.perturb.weak_rate},
                    {"strong_rate", c.perturb.strong_rate},
                    {"scale_correction", c.perturb.scale_correction}};
    j["augment"] = {{"crop_h", c.augment.crop_h},
                    {"crop_w", c.augment.crop_w},
                    {"strong_prob", c.augment.strong_prob},
                    {"brightness", c.augment.brightness},
                    {"contrast_lo", c.augment.contrast_lo},
                    {"contrast_hi", c.augment.contrast_hi},
                    {"gamma_lo", c.augment.gamma_lo},
                    {"gamma_hi", c.augment.gamma_hi},
                    {"blur_sigma_max", c.augment.blur_sigma_max},
                    {"noise_sigma_max", c.augment.noise_sigma_max},
                    {"cutmix", c.augment.cutmix}};
    j["split"] = {{"labeled_fraction", c.split.labeled_fraction},
                  {"seed", c.split.seed},
                  {"num_classes", c.split.num_classes}};
    return j;
}

}  // namespace

std::string canonical_json(const TrainConfig& cfg) { return to_json(cfg).dump(2); }

std::string canonical_json(const SynthSpec& s) {
    json j;
    j["count"] = s.count;
    j["height"] = s.height;
    j["width"] = s.width;
    j["num_classes"] = s.num_classes;
    j["shapes_min"] = s.shapes_min;
    j["shapes_max"] = s.shapes_max;
    j["noise_sigma"] = s.noise_sigma;
    j["blur_sigma"] = s.blur_sigma;
    j["seed"] = s.seed;
    return j.dump(2);
}

std::string config_hash(const TrainConfig& cfg) { return sha256_hex(canonical_json(cfg)); }

}  // namespace crossmatch
