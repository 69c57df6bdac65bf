// SPDX-License-Identifier: Apache-2.0
#include "crossmatch/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <tuple>

#include "crossmatch/augment.hpp"
#include "crossmatch/common.hpp"
#include "crossmatch/rng.hpp"

namespace fs = std::filesystem;

namespace crossmatch {

namespace {

// substream tags: one per independent random decision family of a step
constexpr uint64_t kStepTag = 0x57E9;
constexpr uint64_t kLabeledAugTag = 0x1A;
constexpr uint64_t kUnlabWeakTag = 0x2A;
constexpr uint64_t kUnlabS1Tag = 0x2B;
constexpr uint64_t kUnlabS2Tag = 0x2C;

std::vector<const Image*> ptrs(const std::vector<Image>& v) {
    std::vector<const Image*> p;
    p.reserve(v.size());
    for (const Image& im : v) p.push_back(&im);
    return p;
}

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_hex(uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

nlohmann::json opt_num(double v) {
    return std::isnan(v) ? nlohmann::json() : nlohmann::json(v);
}

nlohmann::json eval_line(long step, const metrics::MetricsReport& r) {
    return nlohmann::json{
        {"step", step},
        {"n", r.samples.size()},
        {"mean_dice_pct", r.mean_dice_pct},
        {"mean_jaccard_pct", r.mean_jaccard_pct},
        {"mean_hd95", opt_num(r.mean_hd95)},
        {"mean_asd", opt_num(r.mean_asd)},
        {"empty_pred", r.empty_pred},
        {"empty_target", r.empty_target},
        {"surface_undefined", r.surface_undefined},
    };
}

std::string losses_csv_row(const StepRow& row) {
    std::string line = std::to_string(row.step);
    line += "," + fmt_hex(row.step_seed);
    line += "," + fmt_g(row.lr);
    line += "," + fmt_g(row.report.sup);
    line += "," + fmt_g(row.report.ip);
    line += "," + fmt_g(row.report.tkd);
    line += "," + fmt_g(row.report.dkd);
    line += "," + fmt_g(row.report.total);
    if (row.report.mask_coverage.empty()) {
        line += ",";
    } else {
        double s = 0.0;
        for (const auto& kv : row.report.mask_coverage) s += kv.second;
        line += "," + fmt_g(s / double(row.report.mask_coverage.size()));
    }
    return line + "\n";
}

std::string fs_safe(const std::string& label) {
    std::string out;
    for (char c : label)
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
    return out;
}

}  // namespace

TrainState::TrainState(const TrainConfig& c) : cfg(c), net(c.net, c.seed), opt(c.optimizer) {}

losses::LossReport train_step(TrainState& state, const std::vector<SampleRecord>& data,
                              const BatchSchedule::Batch& batch, ForwardCounters* counters) {
    const TrainConfig& cfg = state.cfg;
    check_internal(!batch.labeled.empty(), "train_step: batch without labeled samples");
    const uint64_t step_seed = substream(cfg.seed, kStepTag, static_cast<uint64_t>(state.step));

    std::vector<Image> lab_imgs;
    std::vector<Mask> lab_masks;
    lab_imgs.reserve(batch.labeled.size());
    for (size_t k = 0; k < batch.labeled.size(); ++k) {
        const SampleRecord& rec = data.at(static_cast<size_t>(batch.labeled[k]));
        check_data(rec.mask.has_value(),
                   "sample " + rec.id + " scheduled as labeled without a visible mask");
        Rng rng(substream(step_seed, kLabeledAugTag, k));
        WeakResult wr = weak_augment(rec.image, &*rec.mask, cfg.augment, rng);
        lab_imgs.push_back(std::move(wr.image));
        lab_masks.push_back(std::move(*wr.mask));
    }
    const ad::Tensor sup_logits = state.net.forward_supervised(images_to_tensor(ptrs(lab_imgs)));
    const ad::Tensor sup = losses::supervised_loss(sup_logits, lab_masks, cfg.loss);

    losses::TermResult tkd{ad::Tensor::scalar(0.0), {}};
    losses::TermResult dkd{ad::Tensor::scalar(0.0), {}};
    losses::TermResult ip{ad::Tensor::scalar(0.0), {}};
    const StreamNeeds needs = StreamNeeds::from_loss(cfg.loss);
    if (!batch.unlabeled.empty() && needs.any()) {
        const size_t bu = batch.unlabeled.size();
        std::vector<Image> w(bu), s1(bu), s2(bu);
        losses::UnlabeledMixing mixing;
        mixing.s1.resize(bu);
        mixing.s2.resize(bu);
        mixing.partner.resize(bu);
        for (size_t k = 0; k < bu; ++k) {
            Rng rng(substream(step_seed, kUnlabWeakTag, k));
            w[k] = weak_augment(data.at(static_cast<size_t>(batch.unlabeled[k])).image, nullptr,
                                cfg.augment, rng)
                       .image;
        }
        for (size_t k = 0; k < bu; ++k) {
            const size_t partner = (k + 1) % bu;
            mixing.partner[k] = static_cast<long>(partner);
            Rng r1(substream(step_seed, kUnlabS1Tag, k));
            StrongResult a = strong_augment(w[k], cfg.augment, r1, &w[partner]);
            s1[k] = std::move(a.image);
            mixing.s1[k] = a.mix;
            Rng r2(substream(step_seed, kUnlabS2Tag, k));
            StrongResult b = strong_augment(w[k], cfg.augment, r2, &w[partner]);
            s2[k] = std::move(b.image);
            mixing.s2[k] = b.mix;
        }
        ForwardCounters local;
        ForwardCounters& fc = counters ? *counters : local;
        const StreamSet streams = state.net.forward_streams(
            images_to_tensor(ptrs(w)), images_to_tensor(ptrs(s1)), images_to_tensor(ptrs(s2)),
            cfg.perturb, step_seed, cfg.naive_mode, fc, needs);
        tkd = losses::tkd_loss(streams, cfg.loss, mixing);
        dkd = losses::dkd_loss(streams, cfg.loss, mixing);
        ip = losses::ip_loss(streams, cfg.loss, mixing);
    }

    auto [total, report] = losses::total_loss(sup, ip, tkd, dkd, cfg.loss.eta);
    if (!std::isfinite(report.total)) {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "non-finite loss at step %ld: sup=%.17g ip=%.17g tkd=%.17g dkd=%.17g",
                      state.step, report.sup, report.ip, report.tkd, report.dkd);
        throw NumericError(buf);
    }

    // clear every param grad up front: backward only reaches the live graph
    for (auto& p : state.net.params().params()) {
        p.t.node()->ensure_grad();
        std::fill(p.t.node()->grad.begin(), p.t.node()->grad.end(), 0.0);
    }
    total.backward();
    const double lr = nn::scheduled_lr(cfg.optimizer, state.step, cfg.iterations);
    state.opt.step(state.net.params(), lr);
    ++state.step;
    return report;
}

FitResult fit(TrainState& state, const std::vector<SampleRecord>& train, const FitOptions& opts) {
    const TrainConfig& cfg = state.cfg;
    std::vector<long> lab_pool, unlab_pool;
    for (size_t i = 0; i < train.size(); ++i)
        (train[i].labeled ? lab_pool : unlab_pool).push_back(static_cast<long>(i));
    check_data(!lab_pool.empty(), "training set has no labeled samples");
    const bool semi = cfg.method != Method::supervised_only;
    const long n_unlab = semi ? static_cast<long>(unlab_pool.size()) : 0;
    const BatchSchedule sched(static_cast<long>(lab_pool.size()), n_unlab, cfg.batch_size,
                              cfg.iterations, cfg.seed);

    FitResult result;
    std::ofstream losses_csv, timing_csv, metrics_jsonl;
    if (!opts.out_dir.empty()) {
        fs::create_directories(opts.out_dir);
        const nlohmann::json manifest = {
            {"config", nlohmann::json::parse(canonical_json(cfg))},
            {"config_hash", config_hash(cfg)},
            {"dataset_fingerprint", dataset_fingerprint(train)},
            {"val_fingerprint", opts.val ? dataset_fingerprint(*opts.val) : ""},
            {"n_labeled", lab_pool.size()},
            {"n_unlabeled", unlab_pool.size()},
            {"start_step", state.step},
            {"seed", cfg.seed},
        };
        std::ofstream mf(fs::path(opts.out_dir) / "manifest.json");
        check_data(mf.good(), "cannot write manifest in " + opts.out_dir);
        mf << manifest.dump(2) << "\n";

        // resuming into the original directory appends; a fresh run or a
        // resume into a new directory starts the logs (and their headers) over
        const fs::path lpath = fs::path(opts.out_dir) / "losses.csv";
        const bool fresh = state.step == 0 || !fs::exists(lpath) || fs::file_size(lpath) == 0;
        const auto mode = fresh ? std::ios::trunc : std::ios::app;
        losses_csv.open(fs::path(opts.out_dir) / "losses.csv", mode);
        timing_csv.open(fs::path(opts.out_dir) / "timing.csv", mode);
        metrics_jsonl.open(fs::path(opts.out_dir) / "metrics.jsonl", mode);
        check_data(losses_csv.good() && timing_csv.good() && metrics_jsonl.good(),
                   "cannot open run logs in " + opts.out_dir);
        if (fresh) {
            losses_csv << "step,rng,lr,sup,ip,tkd,dkd,total,cov\n";
            timing_csv << "step,ms\n";
        }
    }

    auto run_eval = [&](long at_step) {
        if (!opts.val) return;
        EvalRow row{at_step, metrics::evaluate_model(state.net, *opts.val)};
        if (metrics_jsonl.is_open()) metrics_jsonl << eval_line(at_step, row.report).dump() << "\n";
        result.log.evals.push_back(std::move(row));
    };
    auto save_ckpt = [&](long at_step) {
        if (opts.out_dir.empty()) return;
        save_state(state, (fs::path(opts.out_dir) / ("ckpt_" + std::to_string(at_step))).string());
    };

    while (state.step < cfg.iterations) {
        const long this_step = state.step;
        const BatchSchedule::Batch raw = sched.batch_at(this_step);
        BatchSchedule::Batch mapped;
        for (long j : raw.labeled) mapped.labeled.push_back(lab_pool[static_cast<size_t>(j)]);
        for (long j : raw.unlabeled) mapped.unlabeled.push_back(unlab_pool[static_cast<size_t>(j)]);

        StepRow row;
        row.step = this_step;
        row.step_seed = substream(cfg.seed, kStepTag, static_cast<uint64_t>(this_step));
        row.lr = nn::scheduled_lr(cfg.optimizer, this_step, cfg.iterations);
        const auto t0 = std::chrono::steady_clock::now();
        row.report = train_step(state, train, mapped, &row.counters);
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        if (losses_csv.is_open()) losses_csv << losses_csv_row(row);
        if (timing_csv.is_open())
            timing_csv << this_step << "," << fmt_g(ms) << "\n";
        result.log.steps.push_back(std::move(row));
        result.log.step_ms.push_back(ms);

        const long done = state.step;
        if (done < cfg.iterations) {
            if (cfg.eval_every > 0 && done % cfg.eval_every == 0) run_eval(done);
            if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) save_ckpt(done);
        }
    }

    // final-weights evaluation and checkpoint, exactly once
    run_eval(cfg.iterations);
    save_ckpt(cfg.iterations);
    if (!result.log.evals.empty()) result.final_val = result.log.evals.back().report;
    return result;
}

void save_state(const TrainState& state, const std::string& path) {
    nn::Checkpoint ck;
    ck.config_json = canonical_json(state.cfg);
    ck.step = static_cast<uint64_t>(state.step);
    ck.seed = state.cfg.seed;
    for (const auto& p : state.net.params().params())
        ck.tensors.emplace_back(p.name, std::make_pair(p.t.node()->shape, p.t.values()));
    ck.opt = state.opt.state();
    nn::save_checkpoint(path, ck);
}

TrainState load_state(const std::string& path, const TrainConfig* expect) {
    const nn::Checkpoint ck = nn::load_checkpoint(path);
    const TrainConfig cfg = parse_train_config(ck.config_json);
    if (expect)
        check_config(config_hash(*expect) == config_hash(cfg),
                     "checkpoint config hash does not match the requested configuration");
    TrainState st(cfg);
    auto& params = st.net.params().params();
    check_data(params.size() == ck.tensors.size(), "checkpoint parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        check_data(ck.tensors[i].first == params[i].name,
                   "checkpoint parameter order mismatch at " + ck.tensors[i].first);
        check_data(ck.tensors[i].second.first == params[i].t.node()->shape,
                   "checkpoint shape mismatch at " + params[i].name);
        params[i].t.values() = ck.tensors[i].second.second;
    }
    st.opt.state() = ck.opt;
    st.step = static_cast<long>(ck.step);
    return st;
}

namespace {

std::string join_streams(const std::set<std::string>& s) {
    // display order mirrors the reporting column order of the stream tables
    static const std::vector<std::string> order = {"p_w_w", "p_s_w", "p_w_s", "p_s_s",
                                                   "w",     "s",     "s1",    "s2"};
    std::string out = "{";
    bool first = true;
    for (const std::string& tok : order)
        if (s.count(tok)) {
            if (!first) out += "+";
            out += tok;
            first = false;
        }
    return out + "}";
}

}  // namespace

const std::vector<std::string>& ablation_grid_names() {
    static const std::vector<std::string> names = {
        "dkd_components", "tkd_components", "ip_components", "dkd_loss_type",
        "eta",            "tau",            "gap",           "dropout_kind"};
    return names;
}

std::vector<AblationRow> ablation_rows(const std::string& grid, const TrainConfig& base) {
    TrainConfig b = base;
    b.method = Method::crossmatch;  // grids perturb the full method
    apply_method_preset(b);

    std::vector<AblationRow> rows;
    auto push = [&](const std::string& label, const TrainConfig& cfg) {
        rows.push_back({label, cfg});
    };

    if (grid == "dkd_components") {
        for (const auto& terms : std::vector<std::set<std::string>>{
                 {}, {"w"}, {"s"}, {"w", "s"}}) {
            TrainConfig c = b;
            c.loss.dkd_terms = terms;
            push(join_streams(terms), c);
        }
    } else if (grid == "tkd_components") {
        for (const auto& students : std::vector<std::set<std::string>>{
                 {"p_w_w", "p_s_s"},
                 {"p_s_w", "p_w_s"},
                 {"p_s_w", "p_w_s", "p_s_s"},
                 {"p_w_w", "p_w_s", "p_s_s"},
                 {"p_w_w", "p_s_w", "p_s_s"},
                 {"p_w_w", "p_s_w", "p_w_s"},
                 {"p_w_w", "p_s_w", "p_w_s", "p_s_s"}}) {
            TrainConfig c = b;
            c.loss.tkd_students = students;
            push(join_streams(students), c);
        }
    } else if (grid == "ip_components") {
        for (const auto& streams : std::vector<std::set<std::string>>{
                 {}, {"s1"}, {"s2"}, {"s1", "s2"}}) {
            TrainConfig c = b;
            c.loss.ip_streams = streams;
            push(join_streams(streams), c);
        }
    } else if (grid == "dkd_loss_type") {
        const std::vector<std::tuple<HKind, double, std::string>> kinds = {
            {HKind::kl, 1.0, "kl_t1"},
            {HKind::kl, 2.0, "kl_t2"},
            {HKind::ce, 1.0, "ce"},
            {HKind::dice, 1.0, "dice"},
        };
        for (const auto& [kind, temp, label] : kinds) {
            TrainConfig c = b;
            c.loss.h_kind = kind;
            c.loss.temperature = temp;
            push(label, c);
        }
    } else if (grid == "eta") {
        // literal values: the 0.30 row must equal the default eta bit-for-bit
        for (double eta : {0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50}) {
            TrainConfig c = b;
            c.loss.eta = eta;
            char label[24];
            std::snprintf(label, sizeof(label), "eta=%.2f", c.loss.eta);
            push(label, c);
        }
    } else if (grid == "tau") {
        for (double tau : {0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95}) {
            TrainConfig c = b;
            c.loss.tau = tau;
            char label[24];
            std::snprintf(label, sizeof(label), "tau=%.2f", tau);
            push(label, c);
        }
    } else if (grid == "gap") {
        const std::vector<std::pair<double, double>> pairs = {
            {0.5, 0.5}, {0.375, 0.625}, {0.25, 0.75}, {0.125, 0.875}};
        for (const auto& [wk, st] : pairs) {
            TrainConfig c = b;
            c.perturb.weak_rate = wk;
            c.perturb.strong_rate = st;
            char label[32];
            std::snprintf(label, sizeof(label), "w=%.3f,s=%.3f", wk, st);
            push(label, c);
        }
    } else if (grid == "dropout_kind") {
        for (PerturbKind kind : {PerturbKind::channel_dropout, PerturbKind::alpha_dropout,
                                 PerturbKind::feature_alpha_dropout}) {
            TrainConfig c = b;
            c.perturb.kind = kind;
            push(perturb_kind_name(kind), c);
        }
    } else {
        throw ConfigError("unknown ablation grid: " + grid);
    }
    return rows;
}

std::vector<AblationResult> run_ablation(const std::string& grid, const TrainConfig& base,
                                         const std::vector<SampleRecord>& train,
                                         const std::vector<SampleRecord>& val,
                                         const std::string& out_dir) {
    const std::vector<AblationRow> rows = ablation_rows(grid, base);
    std::vector<AblationResult> results;
    std::ofstream table;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        table.open(fs::path(out_dir) / "ablation.csv");
        check_data(table.good(), "cannot write ablation table in " + out_dir);
        table << "grid,label,mean_dice_pct,mean_jaccard_pct,mean_hd95,mean_asd,config_hash\n";
    }
    for (size_t i = 0; i < rows.size(); ++i) {
        TrainState st(rows[i].cfg);
        FitOptions opts;
        opts.val = &val;
        if (!out_dir.empty())
            opts.out_dir = (fs::path(out_dir) / (std::to_string(i) + "_" + fs_safe(rows[i].label)))
                               .string();
        const FitResult fr = fit(st, train, opts);
        if (table.is_open()) {
            table << grid << "," << rows[i].label << "," << fmt_g(fr.final_val.mean_dice_pct)
                  << "," << fmt_g(fr.final_val.mean_jaccard_pct) << ","
                  << fmt_g(fr.final_val.mean_hd95) << "," << fmt_g(fr.final_val.mean_asd) << ","
                  << config_hash(rows[i].cfg) << "\n";
        }
        results.push_back({rows[i].label, rows[i].cfg, fr.final_val});
    }
    return results;
}

StepCost measure_step_cost(const TrainConfig& cfg, const std::vector<SampleRecord>& data,
                           long n_steps) {
    check_config(n_steps >= 1, "measure_step_cost: n_steps must be >= 1");
    TrainConfig c = cfg;
    c.iterations = std::max(c.iterations, n_steps + 2);
    TrainState state(c);
    std::vector<long> lab_pool, unlab_pool;
    for (size_t i = 0; i < data.size(); ++i)
        (data[i].labeled ? lab_pool : unlab_pool).push_back(static_cast<long>(i));
    const bool semi = c.method != Method::supervised_only;
    const BatchSchedule sched(static_cast<long>(lab_pool.size()),
                              semi ? static_cast<long>(unlab_pool.size()) : 0, c.batch_size,
                              c.iterations, c.seed);
    auto mapped_batch = [&](long step) {
        const BatchSchedule::Batch raw = sched.batch_at(step);
        BatchSchedule::Batch m;
        for (long j : raw.labeled) m.labeled.push_back(lab_pool[static_cast<size_t>(j)]);
        for (long j : raw.unlabeled) m.unlabeled.push_back(unlab_pool[static_cast<size_t>(j)]);
        return m;
    };

    for (int i = 0; i < 2; ++i) train_step(state, data, mapped_batch(state.step), nullptr);

    StepCost cost;
    cost.steps = n_steps;
    const auto t0 = std::chrono::steady_clock::now();
    for (long i = 0; i < n_steps; ++i) {
        ForwardCounters fc;
        train_step(state, data, mapped_batch(state.step), &fc);
        cost.counters = fc;  // identical every step by construction
    }
    cost.mean_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                       .count() /
                   double(n_steps);
    return cost;
}

}  // namespace crossmatch
