#ifndef GAZESEG_LOSSES_HPP
#define GAZESEG_LOSSES_HPP

#include "gazeseg/core.hpp"
#include "gazeseg/lpp.hpp"
#include "gazeseg/model.hpp"

#include <algorithm>
#include <cmath>
#include <span>

namespace gazeseg {

inline constexpr double kProbabilityFloor = 1e-7;

/// Cross-entropy of a two-class probability map against a binary mask,
/// averaged over pixels (summed when `per_pixel_mean` is false). When
/// `dlogits` is given, adds scale * dLoss/dlogits to it.
template <typename Scalar>
double loss_supervision(const ProbabilityMap<Scalar>& p, const Mask& mask, Matrix<Scalar>* dlogits = nullptr,
                        Scalar scale = 1, bool per_pixel_mean = true) {
    if (p.channels() != 2) throw ShapeError("supervision loss expects a two-class map");
    if (p.height != mask.rows() || p.width != mask.cols()) throw ValidationError("prediction and mask shapes differ");
    const Eigen::Index n = p.values.cols();
    const double norm = per_pixel_mean ? 1.0 / double(n) : 1.0;
    const std::uint8_t* m = mask.data();
    double loss = 0;
    for (Eigen::Index q = 0; q < n; ++q) {
        const int label = m[q] ? 1 : 0;
        loss -= std::log(std::max(double(p.values(label, q)), kProbabilityFloor));
    }
    if (dlogits) {
        const Scalar g = scale * Scalar(norm);
        for (Eigen::Index q = 0; q < n; ++q) {
            const int label = m[q] ? 1 : 0;
            (*dlogits)(0, q) += g * (p.values(0, q) - Scalar(label == 0));
            (*dlogits)(1, q) += g * (p.values(1, q) - Scalar(label == 1));
        }
    }
    return loss * norm;
}

/// Gradients of the consistency term for the propagating level.
template <typename Scalar>
struct ConsistencyGradient {
    FeatureMap<Scalar> dphi;
    Classifier<Scalar> dhead;
};

/// Consistency of one level against several frozen peers:
///   L_j = -(1/N) sum_pixels sum_classes g(LPP(phi)) . p_j
/// Returns each L_j. With `grad`, accumulates scale * d(sum_j L_j) into it.
/// Peers are constants: nothing flows back to them.
template <typename Scalar>
std::vector<double> consistency_terms(const FeatureMap<Scalar>& phi, const Classifier<Scalar>& head,
                                      std::span<const ProbabilityMap<Scalar>* const> peers,
                                      const NeighborhoodSpec& spec, ConsistencyGradient<Scalar>* grad = nullptr,
                                      Scalar scale = 1, bool per_pixel_mean = true) {
    const FeatureMap<Scalar> propagated = propagate(phi, spec);
    const ProbabilityMap<Scalar> phat = head(propagated);
    const Eigen::Index n = phat.values.cols();
    const double norm = per_pixel_mean ? 1.0 / double(n) : 1.0;

    std::vector<double> losses;
    Matrix<Scalar> target = Matrix<Scalar>::Zero(2, n);
    for (const auto* peer : peers) {
        if (!peer->same_shape(phat)) throw ValidationError("peer prediction shape differs");
        losses.push_back(-double(phat.values.cwiseProduct(peer->values).sum()) * norm);
        target += peer->values;
    }
    if (grad) {
        // d/dphat = -scale * norm * sum_j p_j; softmax Jacobian to logits.
        const Matrix<Scalar> dphat = target * Scalar(-double(scale) * norm);
        Matrix<Scalar> dlogits(2, n);
        for (Eigen::Index q = 0; q < n; ++q) {
            const Scalar inner = dphat(0, q) * phat.values(0, q) + dphat(1, q) * phat.values(1, q);
            dlogits(0, q) = phat.values(0, q) * (dphat(0, q) - inner);
            dlogits(1, q) = phat.values(1, q) * (dphat(1, q) - inner);
        }
        const FeatureMap<Scalar> dprop = head.backward(propagated, dlogits, grad->dhead);
        grad->dphi.values += propagate_backward(phi, spec, dprop).values;
    }
    return losses;
}

/// Single-peer consistency L_cons^(i,j), in [-1, 0] with per-pixel averaging.
template <typename Scalar>
double loss_consistency(const FeatureMap<Scalar>& phi, const Classifier<Scalar>& head,
                        const ProbabilityMap<Scalar>& peer, const NeighborhoodSpec& spec,
                        ConsistencyGradient<Scalar>* grad = nullptr, Scalar scale = 1) {
    const ProbabilityMap<Scalar>* peers[] = {&peer};
    return consistency_terms<Scalar>(phi, head, peers, spec, grad, scale).front();
}

template <typename Scalar>
ConsistencyGradient<Scalar> zero_consistency_gradient(const FeatureMap<Scalar>& phi, const Classifier<Scalar>& head) {
    return {FeatureMap<Scalar>(phi.height, phi.width, phi.channels()),
            {Matrix<Scalar>::Zero(head.weight.rows(), head.weight.cols()),
             Matrix<Scalar>::Zero(head.bias.rows(), head.bias.cols())}};
}

}  // namespace gazeseg

#endif
