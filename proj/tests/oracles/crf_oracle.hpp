#pragma once
// Brute-force dense CRF mean field on an explicit N x N kernel matrix. Built
// from the textbook update, sharing no code with the library.

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace oracle {

struct CrfSetup {
    int height = 0, width = 0;
    std::vector<double> intensity;  // row-major
    std::vector<double> prob_fg;    // clamped heatmap, row-major
    int iters = 5;
    double w_app = 4, theta_alpha = 30, theta_beta = 13, w_smooth = 3, theta_gamma = 3;
    bool symmetric = true;
};

// Foreground marginals after every iteration; entry 0 is the initialization.
inline std::vector<Eigen::VectorXd> mean_field(const CrfSetup& s) {
    const int n = s.height * s.width;
    Eigen::MatrixXd app(n, n), smooth(n, n);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            const double dy = a / s.width - b / s.width, dx = a % s.width - b % s.width;
            const double d2 = dx * dx + dy * dy;
            const double di = s.intensity[a] - s.intensity[b];
            app(a, b) = std::exp(-d2 / (2 * s.theta_alpha * s.theta_alpha) - di * di / (2 * s.theta_beta * s.theta_beta));
            smooth(a, b) = std::exp(-d2 / (2 * s.theta_gamma * s.theta_gamma));
        }
    auto normalize = [&](Eigen::MatrixXd& k) {
        if (s.symmetric) {
            const Eigen::VectorXd d = k.rowwise().sum();  // includes k(p,p) = 1
            for (int a = 0; a < n; ++a)
                for (int b = 0; b < n; ++b) k(a, b) /= std::sqrt(d(a) * d(b));
        }
        k.diagonal().setZero();
    };
    normalize(app);
    normalize(smooth);
    const Eigen::MatrixXd kernel = s.w_app * app + s.w_smooth * smooth;

    Eigen::VectorXd u_fg(n), u_bg(n), q(n);
    for (int p = 0; p < n; ++p) {
        u_fg(p) = -std::log(s.prob_fg[p]);
        u_bg(p) = -std::log(1 - s.prob_fg[p]);
    }
    auto gibbs = [](double e_bg, double e_fg) { return 1 / (1 + std::exp(e_fg - e_bg)); };
    for (int p = 0; p < n; ++p) q(p) = gibbs(u_bg(p), u_fg(p));
    std::vector<Eigen::VectorXd> out{q};
    for (int it = 0; it < s.iters; ++it) {
        const Eigen::VectorXd msg_fg = kernel * q;
        const Eigen::VectorXd msg_bg = kernel * (Eigen::VectorXd::Ones(n) - q);
        Eigen::VectorXd next(n);
        // Potts: being background costs the foreground mass nearby, and vice versa.
        for (int p = 0; p < n; ++p) next(p) = gibbs(u_bg(p) + msg_fg(p), u_fg(p) + msg_bg(p));
        q = next;
        out.push_back(q);
    }
    return out;
}

}  // namespace oracle
