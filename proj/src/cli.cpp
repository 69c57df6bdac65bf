// SPDX-License-Identifier: Apache-2.0
#include "crossmatch/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "crossmatch/plot.hpp"
#include "crossmatch/png_io.hpp"
#include "crossmatch/trainer.hpp"

extern "C" void openblas_set_num_threads(int);

namespace crossmatch::cli {
namespace fs = std::filesystem;

namespace {

std::string slurp_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check_data(in.good(), "cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// <dir>/{images,masks} pairing; the masks directory may be absent.
std::vector<SampleRecord> load_half(const std::string& dir, int num_classes) {
    check_data(fs::is_directory(fs::path(dir) / "images"),
               "expected image directory " + (fs::path(dir) / "images").string());
    return load_folder((fs::path(dir) / "images").string(), (fs::path(dir) / "masks").string(),
                       num_classes);
}

struct LoadedData {
    std::vector<SampleRecord> train;  // labeled records first
    std::vector<SampleRecord> val;
    bool has_val = false;
};

LoadedData load_train_val(const std::string& data_dir, const TrainConfig& cfg) {
    LoadedData d;
    const auto records = load_half((fs::path(data_dir) / "train").string(), cfg.net.num_classes);
    auto [lab, unlab] = make_split(records, cfg.split);
    d.train = std::move(lab);
    for (auto& r : unlab) d.train.push_back(std::move(r));
    if (fs::is_directory(fs::path(data_dir) / "val" / "images")) {
        d.val = load_half((fs::path(data_dir) / "val").string(), cfg.net.num_classes);
        d.has_val = true;
    }
    return d;
}

}  // namespace

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
    const SynthSpec spec = parse_synth_spec(slurp_file(spec_path));
    const auto records = synth_generate(spec);
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "masks");
    for (const auto& rec : records) {
        pngio::write_image16((fs::path(out_dir) / "images" / (rec.id + ".png")).string(),
                             rec.image);
        pngio::write_mask8((fs::path(out_dir) / "masks" / (rec.id + ".png")).string(),
                           rec.eval_only_mask());
    }
    const nlohmann::json manifest = {
        {"spec", nlohmann::json::parse(canonical_json(spec))},
        {"fingerprint", dataset_fingerprint(records)},
        {"count", records.size()},
    };
    std::ofstream mf(fs::path(out_dir) / "synth_manifest.json");
    check_data(mf.good(), "cannot write manifest in " + out_dir);
    mf << manifest.dump(2) << "\n";
    std::fprintf(stderr, "synth: wrote %zu samples to %s\n", records.size(), out_dir.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume_ckpt, bool naive) {
    TrainConfig cfg = parse_train_config(slurp_file(config_path));
    if (naive) cfg.naive_mode = true;
    const LoadedData data = load_train_val(data_dir, cfg);

    TrainState state = resume_ckpt.empty() ? TrainState(cfg) : load_state(resume_ckpt, &cfg);
    if (!resume_ckpt.empty())
        std::fprintf(stderr, "train: resuming at step %ld from %s\n", state.step,
                     resume_ckpt.c_str());

    FitOptions opts;
    opts.out_dir = out_dir;
    if (data.has_val) opts.val = &data.val;
    const FitResult res = fit(state, data.train, opts);

    std::fprintf(stderr, "train: %zu steps logged, final step %ld, artifacts in %s\n",
                 res.log.steps.size(), state.step, out_dir.c_str());
    if (data.has_val) std::fputs(metrics::format_table(res.final_val).c_str(), stdout);
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& out_dir) {
    check_data(fs::exists(ckpt_path), "checkpoint not found: " + ckpt_path);
    TrainState state = load_state(ckpt_path);

    // evaluate the val half when the directory has one, else the whole layout
    const std::string half =
        fs::is_directory(fs::path(data_dir) / "val" / "images")
            ? (fs::path(data_dir) / "val").string()
            : data_dir;
    const auto records = load_half(half, state.cfg.net.num_classes);
    check_data(!records.empty(), "no samples under " + half);

    const auto report = metrics::evaluate_model(state.net, records);
    std::fputs(metrics::format_table(report).c_str(), stdout);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        metrics::write_jsonl(report, (fs::path(out_dir) / "metrics.jsonl").string());
        std::ofstream txt(fs::path(out_dir) / "metrics.txt");
        check_data(txt.good(), "cannot write metrics in " + out_dir);
        txt << metrics::format_table(report);
        std::fprintf(stderr, "eval: wrote report to %s\n", out_dir.c_str());
    }
    return 0;
}

int cmd_ablate(const std::string& grid_path, const std::string& out_dir) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(slurp_file(grid_path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("grid file " + grid_path + ": " + e.what());
    }
    check_config(j.is_object() && j.contains("grid") && j.contains("data"),
                 "grid file needs {\"grid\": <name>, \"data\": <dir>} (optional \"config\")");
    const std::string grid = j["grid"].get<std::string>();
    const TrainConfig base =
        parse_train_config(j.contains("config") ? j["config"].dump() : std::string("{}"));

    const LoadedData data = load_train_val(j["data"].get<std::string>(), base);
    check_data(data.has_val, "ablation needs a val split under " + j["data"].get<std::string>());

    const auto results = run_ablation(grid, base, data.train, data.val, out_dir);
    for (const auto& r : results)
        std::fprintf(stdout, "%-28s dice %6.2f  jaccard %6.2f\n", r.label.c_str(),
                     r.val.mean_dice_pct, r.val.mean_jaccard_pct);
    std::fprintf(stderr, "ablate: %zu rows of grid %s, table in %s/ablation.csv\n",
                 results.size(), grid.c_str(), out_dir.c_str());
    return 0;
}

int cmd_plot(const std::string& run_dir, const std::string& out_dir) {
    const long n = plot::write_run_plots(run_dir, out_dir);
    if (n == 0) {
        std::fprintf(stderr, "plot: warning: no plottable series in %s, nothing written\n",
                     run_dir.c_str());
        return 0;
    }
    std::fprintf(stderr, "plot: wrote %ld charts to %s\n", n, out_dir.c_str());
    return 0;
}

int dispatch(int argc, const char* const* argv) {
    if (const char* threads = std::getenv("CROSSMATCH_THREADS")) {
        const int n = std::atoi(threads);
        if (n > 0) openblas_set_num_threads(n);
    }

    CLI::App app{"semi-supervised segmentation workbench"};
    app.require_subcommand(1);

    std::string spec_path, config_path, data_dir, out_dir, resume_ckpt, ckpt_path, grid_path,
        run_dir;
    bool naive = false;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--spec", spec_path, "synthesis spec (json)")->required();
    synth->add_option("--out", out_dir, "output dataset directory")->required();

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", config_path, "training config (json)")->required();
    train->add_option("--data", data_dir, "dataset root with train/ and val/")->required();
    train->add_option("--out", out_dir, "run directory for logs and checkpoints")->required();
    train->add_option("--resume", resume_ckpt, "checkpoint to continue from");
    train->add_flag("--naive", naive, "run stream forwards separately instead of stacked");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    eval->add_option("--data", data_dir, "dataset root (val/ used when present)")->required();
    eval->add_option("--out", out_dir, "also write the report files here");

    auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
    ablate->add_option("--grid", grid_path, "grid file (json: grid, data, config)")->required();
    ablate->add_option("--out", out_dir, "output directory for rows and table")->required();

    auto* plot_cmd = app.add_subcommand("plot", "render run curves as svg");
    plot_cmd->add_option("--run", run_dir, "run directory with losses.csv/metrics.jsonl")
        ->required();
    plot_cmd->add_option("--out", out_dir, "directory for the chart files")->required();

    try {
        app.parse(argc, argv);
        if (synth->parsed()) return cmd_synth(spec_path, out_dir);
        if (train->parsed()) return cmd_train(config_path, data_dir, out_dir, resume_ckpt, naive);
        if (eval->parsed()) return cmd_eval(ckpt_path, data_dir, out_dir);
        if (ablate->parsed()) return cmd_ablate(grid_path, out_dir);
        if (plot_cmd->parsed()) return cmd_plot(run_dir, out_dir);
        return 1;  // unreachable with require_subcommand(1)
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage problems are config errors; --help is not
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
}

}  // namespace crossmatch::cli
