#include "gazeseg/pseudomask.hpp"

#include <cmath>

namespace gazeseg {

ThresholdLadder make_ladder(double t_low, double t_high, int m) {
    require(m >= 2, "threshold ladder needs at least two levels");
    require(0 < t_low && t_high < 1, "thresholds must lie in (0, 1)");
    require(t_low < t_high, "t_low must be strictly below t_high");
    ThresholdLadder ladder{t_low, t_high, m, std::vector<double>(m)};
    const double step = (t_high - t_low) / (m - 1);
    for (int k = 0; k < m; ++k) ladder.thresholds[k] = t_low + k * step;
    ladder.thresholds.back() = t_high;
    return ladder;
}

Mask binarize(const Grid<double>& values, double threshold) {
    return (values >= threshold).cast<std::uint8_t>();
}

PseudoMaskStack binarize_stack(const AttentionHeatmap& heatmap, const ThresholdLadder& ladder, std::string image_id) {
    const auto checked = make_ladder(ladder.t_low, ladder.t_high, ladder.m);
    require(checked.thresholds == ladder.thresholds, "ladder thresholds are inconsistent with (t_low, t_high, m)");
    PseudoMaskStack stack{std::move(image_id), {}};
    stack.masks.reserve(ladder.m);
    for (double t : ladder.thresholds) stack.masks.push_back(binarize(heatmap.values, t));
    return stack;
}

bool PseudoMaskStack::top_level_empty() const { return masks.empty() || (masks.back() == 0).all(); }

bool is_subset(const Mask& a, const Mask& b) {
    require_same_extent(a, b, "is_subset");
    return !((a != 0) && (b == 0)).any();
}

bool is_nested(const PseudoMaskStack& stack) {
    for (int k = 0; k + 1 < stack.levels(); ++k)
        if (!is_subset(stack.masks[k + 1], stack.masks[k])) return false;
    return true;
}

}  // namespace gazeseg
