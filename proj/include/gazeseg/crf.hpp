#ifndef GAZESEG_CRF_HPP
#define GAZESEG_CRF_HPP

#include "gazeseg/core.hpp"
#include "gazeseg/heatmap.hpp"

#include <functional>
#include <string>

namespace gazeseg {

/// Fully connected two-label CRF with a Potts model over the kernel
///   w_app * exp(-|p-q|^2 / 2 theta_alpha^2 - |I_p-I_q|^2 / 2 theta_beta^2)
/// + w_smooth * exp(-|p-q|^2 / 2 theta_gamma^2).
/// Intensities are on a 0-255 scale.
///
/// With symmetric normalization each of the two kernels is rescaled to
/// k(p, q) / sqrt(d_p d_q), d_p = 1 + sum_{q != p} k(p, q), which keeps the
/// messages on the scale of the unaries regardless of image size.
enum class KernelNormalization { none, symmetric };

KernelNormalization parse_normalization(const std::string& name);
std::string to_string(KernelNormalization n);

struct CrfParams {
    int n_iters = 5;
    double w_app = 4;
    double theta_alpha = 30;
    double theta_beta = 13;
    double w_smooth = 3;
    double theta_gamma = 3;
    double unary_clamp = 0.01;
    KernelNormalization normalization = KernelNormalization::symmetric;

    void validate() const;
};

/// Negative log-probabilities; column p = y * width + x, row 0 background,
/// row 1 foreground.
struct UnaryField {
    int height = 0;
    int width = 0;
    Eigen::Matrix<double, 2, Dynamic> energy;
};

UnaryField heatmap_to_unary(const AttentionHeatmap& h, double eps);

/// Per-pixel normalized exp(-unary), foreground channel.
Grid<double> unary_foreground_probability(const UnaryField& unary);

/// Message passing for the dense kernel: m_p(l) = sum_{q != p} k(p, q) Q_q(l).
/// This is the exact O(N^2) evaluation. A lattice-based approximation would
/// slot in here behind the same apply() contract.
class ExactPairwiseFilter {
public:
    ExactPairwiseFilter(const Image& image, const CrfParams& params);
    Eigen::Matrix<double, Dynamic, 2> apply(const Eigen::Matrix<double, Dynamic, 2>& q) const;

private:
    Eigen::ArrayXd xs_, ys_, intensity_;
    Eigen::ArrayXd app_norm_, smooth_norm_;
    double app_weight_, app_spatial_, app_range_;
    double smooth_weight_, smooth_spatial_;
};

/// Receives the foreground marginals after initialization (iteration 0) and
/// after every update.
using MeanFieldObserver = std::function<void(int iteration, const Grid<double>& foreground)>;

/// Synchronous mean-field updates; returns the foreground marginal.
Grid<double> mean_field_refine(const Image& image, const UnaryField& unary, const CrfParams& params,
                               const MeanFieldObserver& observer = {});

/// unary -> mean field -> divide by the maximum.
AttentionHeatmap refine_heatmap(const Image& image, const AttentionHeatmap& heatmap, const CrfParams& params);

/// render -> refine.
AttentionHeatmap refine_pipeline(const Image& image, const GazeSequence& seq, double sigma,
                                 const CrfParams& params, Weighting weighting = Weighting::duration);

}  // namespace gazeseg

#endif
