#pragma once
// Closed-form Gaussian splat, no truncation.

#include <cmath>
#include <vector>

namespace oracle {

struct Splat {
    double x, y, weight;
};

inline std::vector<double> raw_field(int height, int width, const std::vector<Splat>& splats, double sigma) {
    std::vector<double> r(std::size_t(height) * width, 0.0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (const auto& s : splats) {
                const double d2 = (x - s.x) * (x - s.x) + (y - s.y) * (y - s.y);
                r[std::size_t(y) * width + x] += s.weight * std::exp(-d2 / (2 * sigma * sigma));
            }
    return r;
}

}  // namespace oracle
