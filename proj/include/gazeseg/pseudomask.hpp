#ifndef GAZESEG_PSEUDOMASK_HPP
#define GAZESEG_PSEUDOMASK_HPP

#include "gazeseg/core.hpp"
#include "gazeseg/heatmap.hpp"

#include <string>
#include <vector>

namespace gazeseg {

/// m thresholds linearly spaced from t_low (dilating) to t_high (eroding).
struct ThresholdLadder {
    double t_low = 0.3;
    double t_high = 0.6;
    int m = 2;
    std::vector<double> thresholds;
};

ThresholdLadder make_ladder(double t_low, double t_high, int m);

/// masks[k] = heatmap >= thresholds[k]; masks[j] is a subset of masks[k] for j > k.
struct PseudoMaskStack {
    std::string image_id;
    std::vector<Mask> masks;

    int levels() const { return int(masks.size()); }
    /// True when the highest level has no foreground.
    bool top_level_empty() const;
};

PseudoMaskStack binarize_stack(const AttentionHeatmap& heatmap, const ThresholdLadder& ladder,
                               std::string image_id = {});

Mask binarize(const Grid<double>& values, double threshold);

/// a is a subset of b.
bool is_subset(const Mask& a, const Mask& b);
bool is_nested(const PseudoMaskStack& stack);

}  // namespace gazeseg

#endif
