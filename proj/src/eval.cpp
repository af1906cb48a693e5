#include "gazeseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gazeseg {

double dice(const Mask& pred, const Mask& gt) {
    require_same_extent(pred, gt, "dice");
    const auto a = (pred != 0), b = (gt != 0);
    const double inter = double((a && b).count());
    const double total = double(a.count() + b.count());
    return total == 0 ? 1.0 : 2 * inter / total;
}

std::vector<Eigen::Index> wrong_pixel_set(const Mask& pseudo, const Mask& gt) {
    require_same_extent(pseudo, gt, "wrong_pixel_set");
    std::vector<Eigen::Index> out;
    for (Eigen::Index p = 0; p < gt.size(); ++p)
        if ((pseudo.data()[p] != 0) != (gt.data()[p] != 0)) out.push_back(p);
    return out;
}

namespace {

double restricted_dice(const Mask& a, const Mask& b, const std::vector<Eigen::Index>& set) {
    std::size_t inter = 0, na = 0, nb = 0;
    for (auto p : set) {
        const bool x = a.data()[p] != 0, y = b.data()[p] != 0;
        inter += x && y;
        na += x;
        nb += y;
    }
    return na + nb == 0 ? 1.0 : 2.0 * double(inter) / double(na + nb);
}

}  // namespace

std::optional<MemorizationPoint> memorization_metrics(const Mask& pred, const Mask& pseudo, const Mask& gt, int iter) {
    require_same_extent(pred, gt, "memorization_metrics");
    const auto wrong = wrong_pixel_set(pseudo, gt);
    if (wrong.empty()) return std::nullopt;
    return MemorizationPoint{iter, restricted_dice(pred, gt, wrong), restricted_dice(pred, pseudo, wrong)};
}

EnsembleEvaluation evaluate_ensemble(const LevelEnsemble& ensemble, std::span<const TrainingSample> eval_set) {
    require(!eval_set.empty(), "evaluation set is empty");
    EnsembleEvaluation out;
    out.level_dice.assign(std::size_t(ensemble.levels()), 0.0);
    for (const auto& sample : eval_set) {
        if (!sample.gt) {
            ++out.skipped;
            continue;
        }
        auto pred = ensemble_predict(ensemble, sample.image);
        out.image_dice.push_back(dice(pred.mask, *sample.gt));
        for (int i = 0; i < ensemble.levels(); ++i) {
            auto [phi, p] = predict(ensemble.networks[std::size_t(i)], sample.image);
            out.level_dice[std::size_t(i)] += dice(argmax_mask(p), *sample.gt);
        }
        ++out.images;
    }
    if (out.images > 0) {
        for (auto& d : out.level_dice) d /= out.images;
        out.ensemble_dice = std::accumulate(out.image_dice.begin(), out.image_dice.end(), 0.0) / out.images;
    }
    return out;
}

std::optional<MemorizationSummary> memorization_on_training(const LevelEnsemble& ensemble,
                                                            std::span<const TrainingSample> train, std::size_t limit) {
    const std::size_t n = limit == 0 ? train.size() : std::min(limit, train.size());
    const auto levels = std::size_t(ensemble.levels());
    MemorizationSummary s;
    s.level_early_learning.assign(levels, 0.0);
    s.level_overfitting.assign(levels, 0.0);
    std::vector<int> counts(levels, 0);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& sample = train[k];
        if (!sample.gt || sample.masks.size() != levels) continue;
        for (std::size_t i = 0; i < levels; ++i) {
            auto [phi, p] = predict(ensemble.networks[i], sample.image);
            auto m = memorization_metrics(argmax_mask(p), sample.masks[i], *sample.gt);
            if (!m) continue;
            s.level_early_learning[i] += m->early_learning;
            s.level_overfitting[i] += m->overfitting;
            ++counts[i];
        }
    }
    // levels whose mask equals gt everywhere have nothing to memorize: NaN, left out of the mean
    const auto used = std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; });
    if (used == 0) return std::nullopt;
    for (std::size_t i = 0; i < levels; ++i) {
        if (counts[i] == 0) {
            s.level_early_learning[i] = s.level_overfitting[i] = std::nan("");
            continue;
        }
        s.level_early_learning[i] /= counts[i];
        s.level_overfitting[i] /= counts[i];
        s.early_learning += s.level_early_learning[i] / double(used);
        s.overfitting += s.level_overfitting[i] / double(used);
    }
    return s;
}

MeanStd mean_std(std::span<const double> values) {
    require(!values.empty(), "mean_std of an empty list");
    const double n = double(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() == 1) return {mean, 0.0};
    double ss = 0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / (n - 1))};
}

}  // namespace gazeseg
