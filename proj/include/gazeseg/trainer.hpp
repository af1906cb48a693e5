#ifndef GAZESEG_TRAINER_HPP
#define GAZESEG_TRAINER_HPP

#include "gazeseg/core.hpp"
#include "gazeseg/lpp.hpp"
#include "gazeseg/model.hpp"
#include "gazeseg/pseudomask.hpp"

#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gazeseg {

enum class OptimizerKind { adam, sgd_momentum };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 4e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double momentum = 0.99;
    bool cosine = false;  // anneal lr to min_lr over the run
    double min_lr = 1e-4;

    /// Adam, constant learning rate 4e-4.
    static OptimizerConfig adam_preset();
    /// SGD with momentum 0.99, cosine annealing from 1e-2 to 1e-4.
    static OptimizerConfig sgd_cosine_preset();

    /// Learning rate for the 1-based iteration `iter` of `total`.
    double learning_rate(int iter, int total) const;
    void validate() const;
    bool operator==(const OptimizerConfig&) const = default;
};

inline constexpr double kLambdaDegenerationWarning = 7.0;

struct TrainConfig {
    int m = 2;
    double lambda = 3;
    int iters = 15000;
    int batch_size = 8;
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;
    NeighborhoodSpec lpp;
    bool loss_norm = true;  // average losses per pixel (else sum)
    bool random_flip = true;
    int eval_interval = 500;
    int checkpoint_interval = 1000;

    void validate() const;
    /// Non-fatal configuration concerns, e.g. lambda beyond the range where
    /// training degenerates to consistency only.
    std::vector<std::string> warnings() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// One training or evaluation image. `image` is the normalized network
/// input; `masks` holds one pseudo-mask per level (empty for evaluation-only
/// samples); `gt` is optional.
struct TrainingSample {
    std::string id;
    Grid<float> image;
    std::vector<Mask> masks;
    std::optional<Mask> gt;
};

struct LevelEnsemble {
    ModelConfig model;
    TrainConfig config;
    std::vector<double> thresholds;
    std::vector<LevelNetwork<float>> networks;

    int levels() const { return int(networks.size()); }
};

/// Adam keeps (first, second) moments; SGD keeps its velocity in `first`.
struct OptimizerState {
    NetworkParameters<float> first;
    NetworkParameters<float> second;
};

struct TrainingState {
    LevelEnsemble ensemble;
    std::vector<OptimizerState> optimizer;
    int iter = 0;  // completed steps
};

/// Fresh networks seeded from config.seed ("init" stream, one index per level).
TrainingState init_training(const ModelConfig& model, const TrainConfig& config, std::vector<double> thresholds);

/// Init seed of level `level` for root training seed `seed`.
std::uint64_t level_init_seed(std::uint64_t seed, int level);

struct StepRecord {
    int iter = 0;
    int level = 0;
    double ce_loss = 0;
    double cons_loss = 0;  // mean over peers
    double total_loss = 0;

    bool operator==(const StepRecord&) const = default;
};

struct EvalRecord {
    int iter = 0;
    std::vector<double> level_dice;
    double ensemble_dice = 0;
    int eval_images = 0;
    // Averaged over training images with a non-empty wrong-pixel set, then
    // over levels. Absent when no training ground truth is available.
    std::optional<double> early_learning;
    std::optional<double> overfitting;
    std::vector<double> level_early_learning;
    std::vector<double> level_overfitting;
};

struct RunLog {
    std::vector<StepRecord> steps;
    std::vector<EvalRecord> evals;
};

nlohmann::json to_json(const StepRecord& r);
nlohmann::json to_json(const EvalRecord& r);
StepRecord step_record_from_json(const nlohmann::json& j);
EvalRecord eval_record_from_json(const nlohmann::json& j);
std::vector<StepRecord> read_step_log(const std::filesystem::path& path);
std::vector<EvalRecord> read_eval_log(const std::filesystem::path& path);

/// Thrown when a loss turns non-finite; carries the offending record.
class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(const std::string& what, StepRecord record) : std::runtime_error(what), record_(record) {}
    const StepRecord& record() const noexcept { return record_; }

private:
    StepRecord record_;
};

struct StepOptions {
    /// Levels whose parameters are updated; empty means all.
    std::vector<bool> update_level;
};

/// One synchronous step: every level's prediction is computed from the
/// parameters at the start of the step, then each level i descends
///   CE_i + lambda / (m - 1) * sum_{j != i} L_cons(i, j)
/// with peers treated as constants.
std::vector<StepRecord> train_step(TrainingState& state, std::span<const TrainingSample> batch, int iter,
                                   const StepOptions& options = {});

/// Samples of the (0-based) step `iter`: seeded epoch permutations plus
/// seeded random flips, independent of the number of levels.
std::vector<TrainingSample> make_batch(std::span<const TrainingSample> samples, const TrainConfig& config, int iter);

struct FitOptions {
    std::optional<std::filesystem::path> run_dir;  // logs + checkpoint.bin
    bool resume = false;
    std::optional<int> stop_after;  // simulate an interruption after this many steps
    std::span<const TrainingSample> eval_set;
    std::size_t memorization_limit = 0;  // training images scored per eval; 0 = all
    std::function<void(const EvalRecord&)> on_eval;
    /// Polled once per step; when it turns true the current state is
    /// checkpointed and fit returns early.
    const std::atomic<bool>* interrupt = nullptr;
};

struct FitResult {
    TrainingState state;
    RunLog log;
    bool interrupted = false;
};

/// Multi-level training. Every sample carries ladder.m masks.
FitResult fit(std::span<const TrainingSample> train, const ThresholdLadder& ladder, const ModelConfig& model,
              const TrainConfig& config, const FitOptions& options = {});

/// Single network on one fixed threshold (masks[0] of each sample), no
/// consistency term. Uses the init seed of level `init_level`.
FitResult fit_single_level(std::span<const TrainingSample> train, double threshold, const ModelConfig& model,
                           const TrainConfig& config, const FitOptions& options = {}, int init_level = 0);

struct EnsemblePrediction {
    ProbabilityMap<float> p;
    Mask mask;
};

/// Mean of the levels' non-propagated probability maps; foreground where it
/// strictly beats background.
EnsemblePrediction ensemble_predict(const LevelEnsemble& ensemble, const Grid<float>& image);

Mask argmax_mask(const ProbabilityMap<float>& p);

void save_training_state(const std::filesystem::path& path, const TrainingState& state);
TrainingState load_training_state(const std::filesystem::path& path);

}  // namespace gazeseg

#endif
