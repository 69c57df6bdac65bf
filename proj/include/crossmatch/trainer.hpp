// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "crossmatch/config.hpp"
#include "crossmatch/datasets.hpp"
#include "crossmatch/losses.hpp"
#include "crossmatch/metrics.hpp"
#include "crossmatch/model.hpp"
#include "crossmatch/nn.hpp"

namespace crossmatch {

// Complete mutable training state. Every random draw of step k derives from
// substream(cfg.seed, step-tag, k), so (config, weights, optimizer state,
// step) is a full resume point; there is no hidden RNG cursor.
struct TrainState {
    TrainConfig cfg;
    UNet net;
    nn::Optimizer opt;
    long step = 0;

    explicit TrainState(const TrainConfig& c);
};

// One logged step; step_seed doubles as the RNG checkpoint fingerprint.
struct StepRow {
    long step = 0;
    uint64_t step_seed = 0;
    double lr = 0.0;
    losses::LossReport report;
    ForwardCounters counters;
};

struct EvalRow {
    long step = 0;
    metrics::MetricsReport report;
};

struct RunLog {
    std::vector<StepRow> steps;
    std::vector<EvalRow> evals;
    std::vector<double> step_ms;  // wall clock, kept out of the replayable rows
};

// One optimizer update. Batch entries index into `data`; the unlabeled list
// may be empty. Throws NumericError with a per-term dump on non-finite loss.
losses::LossReport train_step(TrainState& state, const std::vector<SampleRecord>& data,
                              const BatchSchedule::Batch& batch,
                              ForwardCounters* counters = nullptr);

struct FitOptions {
    std::string out_dir;                             // empty = no artifacts on disk
    const std::vector<SampleRecord>* val = nullptr;  // enables periodic + final eval
};

struct FitResult {
    RunLog log;
    metrics::MetricsReport final_val;  // empty when no val set was given
};

// Runs the remaining steps up to cfg.iterations (continuing from state.step),
// evaluating every cfg.eval_every steps and checkpointing every
// cfg.checkpoint_every into <out_dir>/ckpt_<step>. The final weights are what
// gets evaluated and checkpointed last. Artifacts: manifest.json, losses.csv
// (replay-deterministic), timing.csv (wall clock), metrics.jsonl.
FitResult fit(TrainState& state, const std::vector<SampleRecord>& train, const FitOptions& opts);

// Checkpoint round trip. load_state rebuilds everything from the embedded
// resolved config; pass `expect` to refuse a checkpoint whose config hash
// differs from the run being resumed.
void save_state(const TrainState& state, const std::string& path);
TrainState load_state(const std::string& path, const TrainConfig* expect = nullptr);

// Named ablation grids. Every row shares the base seed and differs from the
// base config along exactly one axis.
struct AblationRow {
    std::string label;
    TrainConfig cfg;
};
const std::vector<std::string>& ablation_grid_names();
std::vector<AblationRow> ablation_rows(const std::string& grid, const TrainConfig& base);

struct AblationResult {
    std::string label;
    TrainConfig cfg;
    metrics::MetricsReport val;
};
// Trains every row and writes <out_dir>/ablation.csv plus per-row run dirs
// (out_dir empty = keep everything in memory).
std::vector<AblationResult> run_ablation(const std::string& grid, const TrainConfig& base,
                                         const std::vector<SampleRecord>& train,
                                         const std::vector<SampleRecord>& val,
                                         const std::string& out_dir);

struct StepCost {
    double mean_ms = 0.0;
    ForwardCounters counters;  // stream-forward calls per step
    long steps = 0;
};
// Mean wall-clock per training step after a short warmup.
StepCost measure_step_cost(const TrainConfig& cfg, const std::vector<SampleRecord>& data,
                           long n_steps);

}  // namespace crossmatch
