// gazeseg: simulate | masks | train | eval | plot
//
// Every command prints a JSON summary on stdout. Failures print
// {"error": {...}} on stderr and exit nonzero (2 for bad input, 1 otherwise,
// 130 when training was interrupted).

#include "gazeseg/experiment.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <iostream>

namespace {

using namespace gazeseg;
using nlohmann::json;
namespace fs = std::filesystem;

std::atomic<bool> g_interrupt{false};

extern "C" void on_sigint(int) { g_interrupt.store(true); }

struct GlobalFlags {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output;
    bool verbose = false, quiet = false;
};

// Config file (or the experiment's own config.ini once it exists), then --set
// assignments, then dedicated flags.
ExperimentConfig resolve_config(const GlobalFlags& g, bool use_snapshot) {
    ExperimentConfig c = default_config();
    const fs::path snapshot = fs::path(g.output.value_or(c.output.string())) / "config.ini";
    if (!g.config.empty())
        c = load_config(g.config);
    else if (use_snapshot && fs::exists(snapshot))
        c = load_config(snapshot);
    for (const auto& s : g.sets) apply_override(c, s);
    if (g.seed) c.seed = *g.seed;
    if (g.output) c.output = *g.output;
    return c;
}

template <class T>
void set_if(std::optional<T> v, ExperimentConfig& c, const std::string& key) {
    if (!v) return;
    std::ostringstream s;
    s.precision(17);
    s << *v;
    apply_override(c, key + "=" + s.str());
}

json paths(const std::vector<fs::path>& v) {
    json a = json::array();
    for (const auto& p : v) a.push_back(p.string());
    return a;
}

json ms(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

int fail(const std::string& command, const std::string& kind, const std::string& message, int code) {
    json e{{"error", {{"command", command}, {"type", kind}, {"message", message}}}};
    std::cerr << e.dump() << std::endl;
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaze-supervised segmentation: pseudo-masks from fixations, multi-level training, evaluation"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalFlags g;
    app.add_option("-c,--config", g.config, "INI config file")->check(CLI::ExistingFile);
    app.add_option("--set", g.sets, "override, section.key=value (repeatable)");
    app.add_option("--seed", g.seed, "root seed");
    app.add_option("-o,--output", g.output, "experiment directory");
    app.add_flag("-v,--verbose", g.verbose, "debug logging");
    app.add_flag("-q,--quiet", g.quiet, "warnings and errors only");

    auto* sim = app.add_subcommand("simulate", "synthetic images, ground truth and simulated fixations");
    SimulateOptions sim_opts;
    std::optional<int> n_images, image_size;
    sim->add_flag("--force", sim_opts.force, "overwrite a non-empty output directory");
    sim->add_option("--n-images", n_images);
    sim->add_option("--image-size", image_size);

    auto* masks = app.add_subcommand("masks", "heatmaps, CRF refinement and pseudo-mask stacks (cached)");
    MasksOptions mask_opts;
    std::optional<double> sigma;
    masks->add_option("-j,--jobs", mask_opts.jobs, "worker threads (0 = all cores)");
    masks->add_flag("--preview", mask_opts.preview, "write 8-bit PNG previews of the heatmaps");
    masks->add_option("--sigma", sigma, "heatmap Gaussian sigma in pixels");

    auto* train = app.add_subcommand("train", "train the level networks, one run per seed");
    TrainOptions train_opts;
    std::optional<double> lambda;
    std::optional<int> levels, iters, runs, batch;
    std::optional<std::string> mode;
    int stop_after = 0;
    train->add_option("--name", train_opts.name, "run group under runs/");
    train->add_flag("--resume", train_opts.resume, "continue from checkpoint.bin");
    train->add_flag("--dry-run", train_opts.dry_run, "validate config and shapes, then exit");
    train->add_option("--stop-after", stop_after, "stop (and checkpoint) after this many steps");
    train->add_option("--lambda", lambda);
    train->add_option("-m,--levels", levels);
    train->add_option("--iters", iters);
    train->add_option("--batch-size", batch);
    train->add_option("--runs", runs, "number of training seeds");
    train->add_option("--mode", mode, "multi or single")->check(CLI::IsMember({"multi", "single"}));

    auto* eval = app.add_subcommand("eval", "Dice per level and for the ensemble on the test split");
    std::string eval_dir;
    std::optional<int> seeds;
    eval->add_option("run_dir", eval_dir, "run directory or run group")->required();
    eval->add_option("--seeds", seeds, "require and aggregate seed0 .. seed<k-1>");

    auto* plot = app.add_subcommand("plot", "SVG curves and TSV tables for every run under a directory");
    std::string plot_dir;
    plot->add_option("dir", plot_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("", "usage", e.what(), 2);
    }
    spdlog::set_default_logger(spdlog::stderr_color_mt("gazeseg"));
    spdlog::set_level(g.verbose ? spdlog::level::debug : g.quiet ? spdlog::level::warn : spdlog::level::info);

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        json out;
        int code = 0;
        if (command == "simulate") {
            auto c = resolve_config(g, false);
            set_if(n_images, c, "dataset.n_images");
            set_if(image_size, c, "dataset.image_size");
            const auto s = cmd_simulate(c, sim_opts);
            out = {{"images", s.images}, {"manifest", s.manifest.string()}};
        } else if (command == "masks") {
            auto c = resolve_config(g, true);
            set_if(sigma, c, "heatmap.sigma");
            const auto s = cmd_masks(c, mask_opts);
            json failures = json::array();
            for (const auto& f : s.failures) failures.push_back({{"image_id", f.image_id}, {"reason", f.reason}});
            out = {{"images", s.images},
                   {"heatmaps_computed", s.heatmaps_computed},
                   {"heatmaps_cached", s.heatmaps_cached},
                   {"refinements_computed", s.refinements_computed},
                   {"refinements_cached", s.refinements_cached},
                   {"masks_written", s.masks_written},
                   {"top_level_empty", s.top_level_empty},
                   {"clamped_fixations", s.clamped_fixations},
                   {"failures", failures}};
        } else if (command == "train") {
            auto c = resolve_config(g, true);
            set_if(lambda, c, "train.lambda");
            set_if(levels, c, "ladder.m");
            set_if(iters, c, "train.iters");
            set_if(batch, c, "train.batch_size");
            set_if(runs, c, "experiment.runs");
            set_if(mode, c, "train.mode");
            if (stop_after > 0) train_opts.stop_after = stop_after;
            std::signal(SIGINT, on_sigint);
            std::signal(SIGTERM, on_sigint);
            train_opts.interrupt = &g_interrupt;
            const auto s = cmd_train(c, train_opts);
            if (s.dry_run) {
                json recipe = json::array();
                for (const auto& r : s.dry_run->recipe)
                    recipe.push_back({{"item", r.item}, {"expected", r.expected}, {"actual", r.actual}, {"ok", r.ok}});
                out = {{"dry_run", true},
                       {"ok", s.dry_run->ok()},
                       {"recipe", recipe},
                       {"problems", s.dry_run->problems},
                       {"notes", s.dry_run->notes}};
                if (!s.dry_run->ok()) code = 2;
            } else {
                out = {{"runs", paths(s.run_dirs)}, {"warnings", s.warnings}, {"interrupted", s.interrupted}};
                if (s.interrupted) code = 130;
            }
        } else if (command == "eval") {
            const auto s = cmd_eval(eval_dir, seeds);
            json level = json::array();
            for (const auto& l : s.level_dice) level.push_back(ms(l));
            out = {{"runs", s.runs.size()}, {"level_dice", level}, {"ensemble_dice", ms(s.ensemble_dice)},
                   {"report", s.report.string()}};
        } else if (command == "plot") {
            const auto s = cmd_plot(plot_dir);
            out = {{"files", paths(s.files)}, {"warnings", s.warnings}};
        }
        std::cout << out.dump(2) << std::endl;
        if (code == 130) return fail(command, "interrupted", "training interrupted; checkpoint saved", code);
        return code;
    } catch (const ParseError& e) {
        return fail(command, "parse", e.what(), 2);
    } catch (const std::invalid_argument& e) {  // ValidationError, ShapeError
        return fail(command, "invalid", e.what(), 2);
    } catch (const std::exception& e) {
        return fail(command, "runtime", e.what(), 1);
    }
}
