// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "crossmatch/config.hpp"
#include "crossmatch/nn.hpp"
#include "crossmatch/png_io.hpp"
#include "crossmatch/rng.hpp"

using namespace crossmatch;

TEST_CASE("defaults parse from an empty object") {
    const TrainConfig cfg = parse_train_config("{}");
    CHECK(cfg.method == Method::crossmatch);
    CHECK(cfg.loss.tau == doctest::Approx(0.85));
    CHECK(cfg.loss.eta == doctest::Approx(0.3));
    CHECK(cfg.perturb.weak_rate == doctest::Approx(0.25));
    CHECK(cfg.perturb.strong_rate == doctest::Approx(0.75));
    CHECK(cfg.optimizer.kind == OptKind::sgd_momentum);
    CHECK(cfg.optimizer.lr == doctest::Approx(0.01));
    CHECK(cfg.loss.tkd_students.size() == 4);
    CHECK(cfg.loss.dkd_terms == std::set<std::string>{"w", "s"});
    CHECK(cfg.loss.ip_streams == std::set<std::string>{"s1", "s2"});
}

TEST_CASE("unknown keys are rejected") {
    CHECK_THROWS_AS((void)parse_train_config(R"({"tipo": 1})"), ConfigError);
    CHECK_THROWS_AS((void)parse_train_config(R"({"loss": {"taw": 0.9}})"), ConfigError);
    CHECK_THROWS_AS((void)parse_train_config("not json"), ConfigError);
}

TEST_CASE("validation rules") {
    CHECK_THROWS_AS((void)parse_train_config(R"({"batch_size": 7})"), ConfigError);
    CHECK_THROWS_AS((void)parse_train_config(R"({"loss": {"tau": 1.5}})"), ConfigError);
    CHECK_THROWS_AS((void)parse_train_config(R"({"loss": {"eta": -0.1}})"), ConfigError);
    CHECK_THROWS_AS((void)parse_train_config(R"({"optimizer": {"lr": 0}})"), ConfigError);
    // weak rate must be strictly below strong rate for an active perturbation
    CHECK_THROWS_AS(
        (void)parse_train_config(R"({"perturb": {"weak_rate": 0.8, "strong_rate": 0.5}})"),
        ConfigError);
    // ...but the constraint is vacuous when perturbation is off
    const TrainConfig ok = parse_train_config(
        R"({"perturb": {"kind": "none", "weak_rate": 0.8, "strong_rate": 0.5}})");
    CHECK(ok.perturb.kind == PerturbKind::none);
    // odd batch is fine for the purely supervised method
    const TrainConfig sup =
        parse_train_config(R"({"method": "supervised_only", "batch_size": 3})");
    CHECK(sup.batch_size == 3);
    CHECK_THROWS_AS((void)parse_train_config(R"({"net": {"base_width": 6}})"), ConfigError);
    CHECK_THROWS_AS((void)parse_train_config(R"({"split": {"labeled_fraction": 0}})"), ConfigError);
    CHECK_THROWS_AS((void)parse_train_config(R"({"loss": {"tkd_students": ["p_w_w", "bogus"]}})"),
                    ConfigError);
}

TEST_CASE("method presets resolve the loss-term sets") {
    const TrainConfig fm = parse_train_config(R"({"method": "fixmatch"})");
    CHECK(fm.loss.tkd_students.empty());
    CHECK(fm.loss.dkd_terms.empty());
    CHECK(fm.loss.ip_streams == std::set<std::string>{"s1"});
    CHECK(fm.perturb.kind == PerturbKind::none);

    const TrainConfig ds = parse_train_config(R"({"method": "dualstream"})");
    CHECK(ds.loss.tkd_students == std::set<std::string>{"p_w_w", "p_s_s"});

    const TrainConfig sup = parse_train_config(R"({"method": "supervised_only"})");
    CHECK(sup.loss.tkd_students.empty());
    CHECK(sup.loss.dkd_terms.empty());
    CHECK(sup.loss.ip_streams.empty());
}

TEST_CASE("canonical json and hash are stable under key order and spacing") {
    const TrainConfig a = parse_train_config(R"({"seed": 9, "loss": {"eta": 0.4}})");
    const TrainConfig b = parse_train_config(R"({ "loss" : { "eta" : 0.4 } , "seed" : 9 })");
    CHECK(canonical_json(a) == canonical_json(b));
    CHECK(config_hash(a) == config_hash(b));
    const TrainConfig c = parse_train_config(R"({"seed": 10, "loss": {"eta": 0.4}})");
    CHECK(config_hash(a) != config_hash(c));
    // round trip: canonical form reparses to the same canonical form
    CHECK(canonical_json(parse_train_config(canonical_json(a))) == canonical_json(a));
}

TEST_CASE("sgd with momentum and weight decay matches the hand-computed update") {
    OptimizerConfig oc;
    oc.kind = OptKind::sgd_momentum;
    oc.lr = 0.1;
    oc.momentum = 0.9;
    oc.weight_decay = 0.01;
    nn::ParamStore store;
    ad::Tensor w = store.create("w", {2}, {1.0, -2.0});
    w.node()->ensure_grad();
    w.node()->grad = {0.5, 0.25};
    nn::Optimizer opt(oc);
    opt.step(store, oc.lr);
    // g' = g + wd*w; buf = g'; w -= lr*buf
    const double g0 = 0.5 + 0.01 * 1.0, g1 = 0.25 + 0.01 * -2.0;
    CHECK(w.values()[0] == doctest::Approx(1.0 - 0.1 * g0).epsilon(1e-12));
    CHECK(w.values()[1] == doctest::Approx(-2.0 - 0.1 * g1).epsilon(1e-12));
    // second step with same grads uses the momentum buffer
    const double w0 = w.values()[0], w1 = w.values()[1];
    w.node()->grad = {0.5, 0.25};
    opt.step(store, oc.lr);
    const double g0b = 0.5 + 0.01 * w0, g1b = 0.25 + 0.01 * w1;
    CHECK(w.values()[0] == doctest::Approx(w0 - 0.1 * (0.9 * g0 + g0b)).epsilon(1e-12));
    CHECK(w.values()[1] == doctest::Approx(w1 - 0.1 * (0.9 * g1 + g1b)).epsilon(1e-12));
}

TEST_CASE("adamw first step equals lr-scaled sign with decoupled decay") {
    OptimizerConfig oc;
    oc.kind = OptKind::adamw;
    oc.lr = 0.01;
    oc.weight_decay = 0.1;
    nn::ParamStore store;
    ad::Tensor w = store.create("w", {2}, {1.0, -1.0});
    w.node()->ensure_grad();
    w.node()->grad = {0.3, -0.7};
    nn::Optimizer opt(oc);
    opt.step(store, oc.lr);
    for (int i = 0; i < 2; ++i) {
        const double g = i == 0 ? 0.3 : -0.7;
        const double start = i == 0 ? 1.0 : -1.0;
        const double decayed = start - oc.lr * oc.weight_decay * start;
        const double mh = g;                       // m/(1-b1) after one step
        const double vh = g * g;                   // v/(1-b2)
        const double expect = decayed - oc.lr * mh / (std::sqrt(vh) + oc.eps);
        CHECK(w.values()[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("poly learning-rate schedule") {
    OptimizerConfig oc;
    oc.lr = 0.01;
    oc.schedule = LrSchedule::poly;
    oc.poly_power = 0.9;
    CHECK(nn::scheduled_lr(oc, 0, 100) == doctest::Approx(0.01));
    CHECK(nn::scheduled_lr(oc, 50, 100) == doctest::Approx(0.01 * std::pow(0.5, 0.9)));
    CHECK(nn::scheduled_lr(oc, 100, 100) == doctest::Approx(0.0));
    oc.schedule = LrSchedule::constant;
    CHECK(nn::scheduled_lr(oc, 99, 100) == doctest::Approx(0.01));
}

TEST_CASE("checkpoint round trip is bit exact") {
    const std::string dir = "ck_test_tmp";
    std::filesystem::create_directories(dir);
    nn::Checkpoint ck;
    ck.config_json = canonical_json(parse_train_config("{}"));
    ck.step = 1234;
    ck.seed = 42;
    Rng rng(7);
    std::vector<double> vals;
    for (int i = 0; i < 37; ++i) vals.push_back(rng.normal() * std::pow(10.0, rng.randint(-8, 8)));
    vals.push_back(0.0);
    vals.push_back(-0.0);
    ck.tensors.push_back({"enc.w", {{37 + 2}, vals}});
    ck.opt.t = 9;
    ck.opt.buffers["enc.w.m"] = vals;

    const std::string path = dir + "/ck.bin";
    nn::save_checkpoint(path, ck);
    const nn::Checkpoint rt = nn::load_checkpoint(path);
    CHECK(rt.config_json == ck.config_json);
    CHECK(rt.step == ck.step);
    CHECK(rt.seed == ck.seed);
    REQUIRE(rt.tensors.size() == 1);
    CHECK(rt.tensors[0].first == "enc.w");
    CHECK(rt.tensors[0].second.first == ck.tensors[0].second.first);
    // bit-exact doubles, including signed zero
    REQUIRE(rt.tensors[0].second.second.size() == vals.size());
    for (size_t i = 0; i < vals.size(); ++i) {
        CHECK(std::memcmp(&rt.tensors[0].second.second[i], &vals[i], 8) == 0);
    }
    CHECK(rt.opt.t == 9);
    CHECK(rt.opt.buffers.at("enc.w.m") == vals);

    CHECK_THROWS_AS((void)nn::load_checkpoint(dir + "/missing.bin"), DataError);
    // corrupt magic
    FILE* f = std::fopen(path.c_str(), "r+b");
    std::fputc('X', f);
    std::fclose(f);
    CHECK_THROWS_AS((void)nn::load_checkpoint(path), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("png image and mask round trips") {
    const std::string dir = "png_test_tmp";
    std::filesystem::create_directories(dir);
    Rng rng(3);
    Image img(1, 9, 13);
    for (auto& v : img.v) v = std::lround(rng.uniform() * 65535.0) / 65535.0;
    pngio::write_image16(dir + "/img.png", img);
    const Image rt = pngio::read_image(dir + "/img.png");
    CHECK(rt == img);  // values already on the 1/65535 grid -> bit equal

    Mask m(9, 13);
    for (auto& v : m.v) v = static_cast<int32_t>(rng.randint(0, 3));
    pngio::write_mask8(dir + "/m.png", m);
    CHECK(pngio::read_mask(dir + "/m.png") == m);

    CHECK_THROWS_AS((void)pngio::read_image(dir + "/nope.png"), DataError);
    std::filesystem::remove_all(dir);
}
