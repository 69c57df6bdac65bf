// SPDX-License-Identifier: Apache-2.0
//
// Prints per-method training-step cost (ms + encoder/decoder stream calls)
// on a synthetic batch, for sizing configs before a long run.
//
//   bench_step [config.json] [n_steps]

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "crossmatch/trainer.hpp"

using namespace crossmatch;

namespace {

std::vector<SampleRecord> bench_data(const TrainConfig& cfg) {
    SynthSpec spec;
    spec.count = 24;
    spec.height = 64;
    spec.width = 64;
    spec.num_classes = cfg.net.num_classes;
    spec.seed = 7;
    auto [lab, unlab] = make_split(synth_generate(spec), cfg.split);
    for (auto& r : unlab) lab.push_back(std::move(r));
    return lab;
}

void row(const char* name, const TrainConfig& cfg, const std::vector<SampleRecord>& data,
         long steps) {
    const StepCost c = measure_step_cost(cfg, data, steps);
    std::printf("%-18s %9.2f ms/step   enc %ld   dec %ld\n", name, c.mean_ms,
                c.counters.encoder_calls, c.counters.decoder_calls);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        std::string cfg_json = "{}";
        if (argc > 1 && std::string(argv[1]) != "-") {
            std::ifstream in(argv[1], std::ios::binary);
            if (!in) {
                std::fprintf(stderr, "error: cannot read %s\n", argv[1]);
                return 3;
            }
            std::ostringstream ss;
            ss << in.rdbuf();
            cfg_json = ss.str();
        }
        const long steps = argc > 2 ? std::atol(argv[2]) : 5;

        TrainConfig base = parse_train_config(cfg_json);
        const std::vector<SampleRecord> data = bench_data(base);
        std::printf("batch %d, %d classes, net w%d d%d, %ld timed steps\n\n", base.batch_size,
                    base.net.num_classes, base.net.base_width, base.net.depth, steps);

        for (Method m : {Method::supervised_only, Method::fixmatch, Method::dualstream,
                         Method::crossmatch}) {
            TrainConfig cfg = base;
            cfg.method = m;
            cfg.naive_mode = false;
            apply_method_preset(cfg);
            row(method_name(m).c_str(), cfg, data, steps);
        }
        TrainConfig naive = base;
        naive.method = Method::crossmatch;
        naive.naive_mode = true;
        apply_method_preset(naive);
        row("crossmatch/naive", naive, data, steps);
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
