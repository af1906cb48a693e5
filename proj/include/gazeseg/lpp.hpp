#ifndef GAZESEG_LPP_HPP
#define GAZESEG_LPP_HPP

#include "gazeseg/core.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace gazeseg {

/// Local window of taps around a pixel: `window` x `window` taps spaced
/// `dilation` pixels apart. Taps outside the image are dropped.
struct NeighborhoodSpec {
    int window = 3;
    int dilation = 1;
    bool include_center = true;

    void validate() const {
        require(window >= 1 && window % 2 == 1, "LPP window must be odd and positive");
        require(dilation >= 1, "LPP dilation must be positive");
    }
    int reach() const { return (window / 2) * dilation; }
};

namespace detail {

/// Neighborhood of one pixel with its clamped-cosine softmax weights.
template <typename Scalar>
struct LppTaps {
    std::vector<Eigen::Index> index;
    std::vector<Scalar> cosine;  // unclamped similarity, 0 for zero vectors
    std::vector<Scalar> weight;

    void gather(const FeatureMap<Scalar>& phi, const Vector<Scalar>& norms, const NeighborhoodSpec& spec, int y,
                int x) {
        index.clear();
        cosine.clear();
        const Eigen::Index p = Eigen::Index(y) * phi.width + x;
        const int r = spec.window / 2;
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
                const int yy = y + dy * spec.dilation, xx = x + dx * spec.dilation;
                if (yy < 0 || yy >= phi.height || xx < 0 || xx >= phi.width) continue;
                if (dy == 0 && dx == 0 && !spec.include_center) continue;
                const Eigen::Index q = Eigen::Index(yy) * phi.width + xx;
                Scalar c = 0;
                if (norms(p) > 0 && norms(q) > 0)
                    c = q == p ? Scalar(1) : phi.values.col(p).dot(phi.values.col(q)) / (norms(p) * norms(q));
                index.push_back(q);
                cosine.push_back(c);
            }
        weight.resize(index.size());
        Scalar top = 0;
        for (Scalar c : cosine) top = std::max(top, std::max(c, Scalar(0)));
        Scalar total = 0;
        for (std::size_t k = 0; k < index.size(); ++k) {
            weight[k] = std::exp(std::max(cosine[k], Scalar(0)) - top);
            total += weight[k];
        }
        for (auto& w : weight) w /= total;
    }
};

inline void check_extent(int height, int width, const NeighborhoodSpec& spec) {
    spec.validate();
    if (height < 1 || width < 1) throw ValidationError("feature map must be non-empty");
    // The window is too large when no off-centre tap can land inside the
    // image along either axis.
    if (spec.window > 1 && spec.reach() >= std::max(height, width))
        throw ValidationError("LPP window exceeds the feature map extent");
}

}  // namespace detail

/// Local pixel propagation: each pixel feature becomes the softmax(max(cos, 0))
/// weighted mean of its neighbours' features.
template <typename Scalar>
FeatureMap<Scalar> propagate(const FeatureMap<Scalar>& phi, const NeighborhoodSpec& spec) {
    detail::check_extent(phi.height, phi.width, spec);
    if (!phi.values.allFinite()) throw ValidationError("feature map contains non-finite values");
    const Vector<Scalar> norms = phi.values.colwise().norm().transpose();
    FeatureMap<Scalar> out(phi.height, phi.width, phi.channels());
    detail::LppTaps<Scalar> taps;
    for (int y = 0; y < phi.height; ++y)
        for (int x = 0; x < phi.width; ++x) {
            taps.gather(phi, norms, spec, y, x);
            auto dst = out.values.col(Eigen::Index(y) * phi.width + x);
            for (std::size_t k = 0; k < taps.index.size(); ++k) dst += taps.weight[k] * phi.values.col(taps.index[k]);
        }
    return out;
}

/// Weights (neighbour index, weight) used at one pixel.
template <typename Scalar>
std::vector<std::pair<Eigen::Index, Scalar>> propagation_weights(const FeatureMap<Scalar>& phi,
                                                                 const NeighborhoodSpec& spec, int y, int x) {
    detail::check_extent(phi.height, phi.width, spec);
    const Vector<Scalar> norms = phi.values.colwise().norm().transpose();
    detail::LppTaps<Scalar> taps;
    taps.gather(phi, norms, spec, y, x);
    std::vector<std::pair<Eigen::Index, Scalar>> out;
    for (std::size_t k = 0; k < taps.index.size(); ++k) out.emplace_back(taps.index[k], taps.weight[k]);
    return out;
}

/// Vector-Jacobian product of propagate(): gradient w.r.t. phi given the
/// gradient w.r.t. the propagated map.
template <typename Scalar>
FeatureMap<Scalar> propagate_backward(const FeatureMap<Scalar>& phi, const NeighborhoodSpec& spec,
                                      const FeatureMap<Scalar>& grad_out) {
    detail::check_extent(phi.height, phi.width, spec);
    if (!phi.same_shape(grad_out)) throw ShapeError("LPP gradient shape differs from the feature map");
    const Vector<Scalar> norms = phi.values.colwise().norm().transpose();
    FeatureMap<Scalar> grad(phi.height, phi.width, phi.channels());
    detail::LppTaps<Scalar> taps;
    std::vector<Scalar> dweight;
    for (int y = 0; y < phi.height; ++y)
        for (int x = 0; x < phi.width; ++x) {
            const Eigen::Index p = Eigen::Index(y) * phi.width + x;
            taps.gather(phi, norms, spec, y, x);
            const auto g = grad_out.values.col(p);
            const std::size_t n = taps.index.size();
            dweight.resize(n);
            Scalar mean_dw = 0;
            for (std::size_t k = 0; k < n; ++k) {
                const auto q = taps.index[k];
                grad.values.col(q) += taps.weight[k] * g;
                dweight[k] = g.dot(phi.values.col(q));
                mean_dw += taps.weight[k] * dweight[k];
            }
            for (std::size_t k = 0; k < n; ++k) {
                const auto q = taps.index[k];
                const Scalar c = taps.cosine[k];
                if (q == p || !(c > 0)) continue;
                const Scalar dc = taps.weight[k] * (dweight[k] - mean_dw);
                const Scalar inv = 1 / (norms(p) * norms(q));
                grad.values.col(p) += dc * (phi.values.col(q) * inv - c / (norms(p) * norms(p)) * phi.values.col(p));
                grad.values.col(q) += dc * (phi.values.col(p) * inv - c / (norms(q) * norms(q)) * phi.values.col(q));
            }
        }
    return grad;
}

}  // namespace gazeseg

#endif
