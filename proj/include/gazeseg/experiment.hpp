#ifndef GAZESEG_EXPERIMENT_HPP
#define GAZESEG_EXPERIMENT_HPP

#include "gazeseg/config.hpp"
#include "gazeseg/eval.hpp"
#include "gazeseg/trainer.hpp"

#include <atomic>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gazeseg {

/// Experiment directory layout, rooted at ExperimentConfig::output:
///
///   config.ini                      config snapshot of the last simulate/masks
///   manifest.json                   images, hashes, train/test split
///   data/images/<id>.png            8-bit grayscale inputs
///   data/gt/<id>.png                ground truth (0/255), when known
///   data/fixations.csv              image-frame fixation records
///   cache/heatmap/<id>.<key>.hm     rendered heatmaps
///   cache/crf/<id>.<key>.hm.crf     refined heatmaps
///   masks/<id>.level<k>.png         pseudo-masks, k = 0 .. m-1
///   masks/index.json                cache keys and flags per image
///   masks/report.json               failures and clamped fixations
///   runs/<name>/seed<r>/            config.ini, train.json, checkpoint.bin,
///                                   runlog.jsonl, evallog.jsonl, report.*
///   runs/<name>/summary.{json,txt}  mean and std over seeds
///   plots/                          SVG charts and the TSV tables behind them
struct ExperimentLayout {
    std::filesystem::path root;

    std::filesystem::path manifest() const { return root / "manifest.json"; }
    std::filesystem::path config() const { return root / "config.ini"; }
    std::filesystem::path images() const { return root / "data" / "images"; }
    std::filesystem::path gt() const { return root / "data" / "gt"; }
    std::filesystem::path fixations() const { return root / "data" / "fixations.csv"; }
    std::filesystem::path heatmap_cache() const { return root / "cache" / "heatmap"; }
    std::filesystem::path crf_cache() const { return root / "cache" / "crf"; }
    std::filesystem::path masks() const { return root / "masks"; }
    std::filesystem::path mask(const std::string& id, int level) const {
        return masks() / (id + ".level" + std::to_string(level) + ".png");
    }
    std::filesystem::path runs() const { return root / "runs"; }
    std::filesystem::path plots() const { return root / "plots"; }
};

struct SimulateOptions {
    bool force = false;
};
struct SimulateSummary {
    int images = 0;
    std::filesystem::path manifest;
};
/// Synthetic images, ground truth and simulated fixations.
SimulateSummary cmd_simulate(const ExperimentConfig& config, const SimulateOptions& options = {});

struct MasksOptions {
    int jobs = 0;  // worker threads; 0 = hardware concurrency
    bool preview = false;  // also export 8-bit heatmap PNGs
};
struct MaskFailure {
    std::string image_id;
    std::string reason;
};
struct MasksSummary {
    int images = 0;
    int heatmaps_computed = 0;
    int heatmaps_cached = 0;
    int refinements_computed = 0;
    int refinements_cached = 0;
    int masks_written = 0;
    int top_level_empty = 0;
    std::size_t clamped_fixations = 0;
    std::vector<MaskFailure> failures;
};
/// Heatmap -> CRF -> pseudo-mask stacks, cached by content hash and stage
/// parameters.
MasksSummary cmd_masks(const ExperimentConfig& config, const MasksOptions& options = {});

struct TrainOptions {
    std::string name = "main";
    bool resume = false;
    bool dry_run = false;
    std::optional<int> stop_after;
    const std::atomic<bool>* interrupt = nullptr;
};
struct DryRunReport {
    std::vector<RecipeCheck> recipe;
    std::vector<std::string> problems;  // blocking
    std::vector<std::string> notes;
    bool ok() const { return problems.empty(); }
};
struct TrainSummary {
    std::vector<std::filesystem::path> run_dirs;
    std::vector<std::string> warnings;
    std::optional<DryRunReport> dry_run;
    bool interrupted = false;
};
TrainSummary cmd_train(const ExperimentConfig& config, const TrainOptions& options = {});

/// Validates config and shapes without training: the recipe table, the data
/// on disk when present, and one forward pass at full resolution.
DryRunReport dry_run(const ExperimentConfig& config);

struct RunEvaluation {
    std::filesystem::path run_dir;
    EnsembleEvaluation evaluation;
};
struct EvalSummary {
    std::vector<RunEvaluation> runs;
    std::vector<MeanStd> level_dice;
    MeanStd ensemble_dice;
    std::filesystem::path report;
};
/// Evaluates one run directory (holding checkpoint.bin) or a directory of
/// seed<r> runs; `seeds` restricts to the first k seeds and requires them.
EvalSummary cmd_eval(const std::filesystem::path& run_dir, std::optional<int> seeds = {});

struct PlotSummary {
    std::vector<std::filesystem::path> files;
    std::vector<std::string> warnings;
};
/// Loss and memorization curves for every run under `dir`, plus lambda / m
/// sweep charts when `dir` holds several evaluated runs.
PlotSummary cmd_plot(const std::filesystem::path& dir);

/// Loaded train / test samples of an experiment; masks are the level stack
/// (multi) or the single mid-ladder mask (single).
struct ExperimentData {
    std::vector<TrainingSample> train;
    std::vector<TrainingSample> test;
    std::vector<std::string> skipped;  // train images without pseudo-masks
};
ExperimentData load_experiment_data(const ExperimentConfig& config);

/// Threshold of the single-level baseline: the middle of the ladder.
double single_level_threshold(const ExperimentConfig& config);

}  // namespace gazeseg

#endif
