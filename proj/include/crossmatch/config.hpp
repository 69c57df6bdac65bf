// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace crossmatch {

enum class Method { crossmatch, fixmatch, dualstream, supervised_only };
enum class Normalization { group, instance, batch };
enum class OptKind { sgd_momentum, adamw };
enum class LrSchedule { constant, poly };
enum class HKind { dice, ce, kl };
enum class PerturbKind { none, channel_dropout, alpha_dropout, feature_alpha_dropout };

struct NetConfig {
    int in_channels = 1;
    int num_classes = 2;
    int base_width = 16;
    int depth = 4;
    Normalization normalization = Normalization::group;
};

struct OptimizerConfig {
    OptKind kind = OptKind::sgd_momentum;
    double lr = 0.01;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    LrSchedule schedule = LrSchedule::poly;
    double poly_power = 0.9;
};

struct LossConfig {
    double tau = 0.85;
    double eta = 0.3;
    HKind h_kind = HKind::dice;
    double temperature = 1.0;
    double dice_smooth = 1e-5;
    std::set<std::string> tkd_students = {"p_w_w", "p_s_w", "p_w_s", "p_s_s"};
    std::set<std::string> dkd_terms = {"w", "s"};
    std::set<std::string> ip_streams = {"s1", "s2"};
};

struct PerturbConfig {
    PerturbKind kind = PerturbKind::channel_dropout;
    double weak_rate = 0.25;
    double strong_rate = 0.75;
    bool scale_correction = true;
};

struct AugmentConfig {
    int crop_h = 0;  // 0 = full image (no crop jitter)
    int crop_w = 0;
    double strong_prob = 0.5;
    double brightness = 0.25;
    double contrast_lo = 0.75, contrast_hi = 1.25;
    double gamma_lo = 0.75, gamma_hi = 1.25;
    double blur_sigma_max = 1.5;
    double noise_sigma_max = 0.05;
    bool cutmix = true;
};

struct SynthSpec {
    int count = 200;
    int height = 128;
    int width = 128;
    int num_classes = 2;
    int shapes_min = 1;
    int shapes_max = 3;
    double noise_sigma = 0.08;
    double blur_sigma = 1.0;
    uint64_t seed = 1;
};

struct SplitSpec {
    double labeled_fraction = 0.05;
    uint64_t seed = 1;
    int num_classes = 2;
};

struct TrainConfig {
    Method method = Method::crossmatch;
    long iterations = 2000;
    int batch_size = 8;
    uint64_t seed = 1;
    long eval_every = 500;
    long checkpoint_every = 1000;
    bool naive_mode = false;
    NetConfig net;
    OptimizerConfig optimizer;
    LossConfig loss;
    PerturbConfig perturb;
    AugmentConfig augment;
    SplitSpec split;
};

// Parse + validate; throws ConfigError with a field path on any violation.
TrainConfig parse_train_config(const std::string& json_text);
SynthSpec parse_synth_spec(const std::string& json_text);

// Fully resolved form with defaults applied, keys sorted; identical configs
// serialize to identical bytes.
std::string canonical_json(const TrainConfig& cfg);
std::string canonical_json(const SynthSpec& spec);
std::string config_hash(const TrainConfig& cfg);

// Applies the method presets (stream subsets, perturbation on/off) on top of
// the parsed config; parse_train_config already calls this.
void apply_method_preset(TrainConfig& cfg);

std::string method_name(Method m);
std::string h_kind_name(HKind k);
std::string perturb_kind_name(PerturbKind k);

}  // namespace crossmatch
