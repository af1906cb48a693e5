#include "gazeseg/crf.hpp"

#include <cmath>

namespace gazeseg {

void CrfParams::validate() const {
    require(n_iters >= 0, "n_iters must be non-negative");
    require(theta_alpha > 0 && theta_beta > 0 && theta_gamma > 0, "CRF bandwidths must be positive");
    require(w_app >= 0 && w_smooth >= 0, "CRF kernel weights must be non-negative");
    require(unary_clamp > 0 && unary_clamp < 0.5, "unary_clamp must lie in (0, 0.5)");
}

KernelNormalization parse_normalization(const std::string& name) {
    if (name == "none") return KernelNormalization::none;
    if (name == "symmetric") return KernelNormalization::symmetric;
    throw ValidationError("unknown kernel normalization '" + name + "'");
}

std::string to_string(KernelNormalization n) { return n == KernelNormalization::none ? "none" : "symmetric"; }

UnaryField heatmap_to_unary(const AttentionHeatmap& h, double eps) {
    require(eps > 0 && eps < 0.5, "unary clamp must lie in (0, 0.5)");
    UnaryField u{h.height(), h.width(), Eigen::Matrix<double, 2, Dynamic>(2, h.values.size())};
    const double* v = h.values.data();
    for (Eigen::Index p = 0; p < h.values.size(); ++p) {
        u.energy(0, p) = -std::log(std::clamp(1.0 - v[p], eps, 1.0 - eps));
        u.energy(1, p) = -std::log(std::clamp(v[p], eps, 1.0 - eps));
    }
    return u;
}

namespace {

// Foreground probability of the two-label Gibbs distribution with energies
// (e_bg, e_fg).
inline double foreground_of(double e_bg, double e_fg) { return 1.0 / (1.0 + std::exp(e_fg - e_bg)); }

Grid<double> as_grid(const Eigen::Matrix<double, Dynamic, 2>& q, int h, int w) {
    Grid<double> g(h, w);
    Eigen::Map<Eigen::VectorXd>(g.data(), g.size()) = q.col(1);
    return g;
}

}  // namespace

Grid<double> unary_foreground_probability(const UnaryField& unary) {
    Grid<double> g(unary.height, unary.width);
    for (Eigen::Index p = 0; p < g.size(); ++p) g.data()[p] = foreground_of(unary.energy(0, p), unary.energy(1, p));
    return g;
}

ExactPairwiseFilter::ExactPairwiseFilter(const Image& image, const CrfParams& params)
    : xs_(image.size()), ys_(image.size()), intensity_(image.size()),
      app_norm_(Eigen::ArrayXd::Ones(image.size())), smooth_norm_(Eigen::ArrayXd::Ones(image.size())),
      app_weight_(params.w_app), app_spatial_(1 / (2 * params.theta_alpha * params.theta_alpha)),
      app_range_(1 / (2 * params.theta_beta * params.theta_beta)), smooth_weight_(params.w_smooth),
      smooth_spatial_(1 / (2 * params.theta_gamma * params.theta_gamma)) {
    const int w = int(image.cols());
    for (Eigen::Index p = 0; p < image.size(); ++p) {
        xs_(p) = double(p % w);
        ys_(p) = double(p / w);
        intensity_(p) = image.data()[p];
    }
    if (params.normalization == KernelNormalization::symmetric) {
        // Row sums include the unit self weight, hence no correction for q == p.
        const Eigen::Index n = xs_.size();
        Eigen::ArrayXd d2(n);
        for (Eigen::Index p = 0; p < n; ++p) {
            d2 = (xs_ - xs_(p)).square() + (ys_ - ys_(p)).square();
            app_norm_(p) = (-(d2 * app_spatial_) - (intensity_ - intensity_(p)).square() * app_range_).exp().sum();
            smooth_norm_(p) = (-(d2 * smooth_spatial_)).exp().sum();
        }
        app_norm_ = app_norm_.rsqrt();
        smooth_norm_ = smooth_norm_.rsqrt();
    }
}

Eigen::Matrix<double, Dynamic, 2> ExactPairwiseFilter::apply(const Eigen::Matrix<double, Dynamic, 2>& q) const {
    const Eigen::Index n = xs_.size();
    Eigen::Matrix<double, Dynamic, 2> m(n, 2);
    Eigen::ArrayXd d2(n), kernel(n);
    for (Eigen::Index p = 0; p < n; ++p) {
        d2 = (xs_ - xs_(p)).square() + (ys_ - ys_(p)).square();
        kernel = (app_weight_ * app_norm_(p)) * app_norm_ *
                     (-(d2 * app_spatial_) - (intensity_ - intensity_(p)).square() * app_range_).exp() +
                 (smooth_weight_ * smooth_norm_(p)) * smooth_norm_ * (-(d2 * smooth_spatial_)).exp();
        kernel(p) = 0;
        m.row(p) = kernel.matrix().transpose() * q;
    }
    return m;
}

Grid<double> mean_field_refine(const Image& image, const UnaryField& unary, const CrfParams& params,
                               const MeanFieldObserver& observer) {
    params.validate();
    if (image.rows() != unary.height || image.cols() != unary.width)
        throw ValidationError("image and unary field dimensions differ");
    const Eigen::Index n = image.size();

    Eigen::Matrix<double, Dynamic, 2> q(n, 2);
    for (Eigen::Index p = 0; p < n; ++p) {
        q(p, 1) = foreground_of(unary.energy(0, p), unary.energy(1, p));
        q(p, 0) = 1 - q(p, 1);
    }
    if (observer) observer(0, as_grid(q, unary.height, unary.width));
    if (params.n_iters == 0 || (params.w_app == 0 && params.w_smooth == 0)) {
        if (observer)
            for (int it = 1; it <= params.n_iters; ++it) observer(it, as_grid(q, unary.height, unary.width));
        return as_grid(q, unary.height, unary.width);
    }

    const ExactPairwiseFilter filter(image, params);
    for (int it = 1; it <= params.n_iters; ++it) {
        const auto m = filter.apply(q);
        // Potts: label l pays the message mass gathered by the other label.
        for (Eigen::Index p = 0; p < n; ++p) {
            q(p, 1) = foreground_of(unary.energy(0, p) + m(p, 1), unary.energy(1, p) + m(p, 0));
            q(p, 0) = 1 - q(p, 1);
        }
        if (observer) observer(it, as_grid(q, unary.height, unary.width));
    }
    return as_grid(q, unary.height, unary.width);
}

AttentionHeatmap refine_heatmap(const Image& image, const AttentionHeatmap& heatmap, const CrfParams& params) {
    params.validate();
    const auto unary = heatmap_to_unary(heatmap, params.unary_clamp);
    Grid<double> fg = mean_field_refine(image, unary, params);
    return {fg / fg.maxCoeff()};
}

AttentionHeatmap refine_pipeline(const Image& image, const GazeSequence& seq, double sigma, const CrfParams& params,
                                 Weighting weighting) {
    return refine_heatmap(image, render_heatmap(seq, sigma, weighting), params);
}

}  // namespace gazeseg
