#ifndef GAZESEG_EVAL_HPP
#define GAZESEG_EVAL_HPP

#include "gazeseg/core.hpp"
#include "gazeseg/trainer.hpp"

#include <optional>
#include <span>
#include <vector>

namespace gazeseg {

/// 2|A and B| / (|A| + |B|); 1 when both masks are empty.
double dice(const Mask& pred, const Mask& gt);

/// Flat indices (y * width + x) where the pseudo-mask disagrees with ground truth.
std::vector<Eigen::Index> wrong_pixel_set(const Mask& pseudo, const Mask& gt);

struct MemorizationPoint {
    int iter = 0;
    double early_learning = 0;  // dice(pred, gt) on the wrong set
    double overfitting = 0;     // dice(pred, pseudo) on the wrong set
};

/// Not applicable (nullopt) when the pseudo-mask has no wrong pixels.
std::optional<MemorizationPoint> memorization_metrics(const Mask& pred, const Mask& pseudo, const Mask& gt,
                                                      int iter = 0);

struct EnsembleEvaluation {
    std::vector<double> level_dice;  // single-network Dice per level
    double ensemble_dice = 0;
    std::vector<double> image_dice;  // ensemble Dice per evaluated image
    int images = 0;
    int skipped = 0;  // samples without ground truth
};

EnsembleEvaluation evaluate_ensemble(const LevelEnsemble& ensemble, std::span<const TrainingSample> eval_set);

struct MemorizationSummary {
    std::vector<double> level_early_learning;
    std::vector<double> level_overfitting;
    double early_learning = 0;
    double overfitting = 0;
};

/// Memorization metrics of each level against its own pseudo-mask, averaged
/// over images with a non-empty wrong set and then across levels. A level
/// with no such image reports NaN. Uses at most `limit` samples (0 = all);
/// nullopt when no level has usable samples.
std::optional<MemorizationSummary> memorization_on_training(const LevelEnsemble& ensemble,
                                                            std::span<const TrainingSample> train,
                                                            std::size_t limit = 0);

struct MeanStd {
    double mean = 0;
    double std = 0;  // sample standard deviation; 0 for a single value
};
MeanStd mean_std(std::span<const double> values);

}  // namespace gazeseg

#endif
