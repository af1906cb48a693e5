#include "gazeseg/gaze_data.hpp"
#include "gazeseg/seeds.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace gazeseg {

void ShapeConfig::validate() const {
    require(0 < min_fg_fraction && min_fg_fraction < max_fg_fraction && max_fg_fraction < 1,
            "foreground fraction bounds must satisfy 0 < min < max < 1");
    require(noise_sigma >= 0 && texture_amplitude >= 0, "noise parameters must be non-negative");
    require(max_attempts >= 1, "max_attempts must be positive");
}

namespace {

struct Blob {
    double cx, cy, a, b, angle;
    double amp[3], phase[3];

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double r = std::hypot(dx, dy);
        if (r == 0) return true;
        const double theta = std::atan2(dy, dx);
        const double local = theta - angle;
        const double c = std::cos(local), s = std::sin(local);
        double radius = a * b / std::sqrt(b * b * c * c + a * a * s * s);
        double wobble = 1;
        for (int k = 0; k < 3; ++k) wobble += amp[k] * std::cos((k + 2) * theta + phase[k]);
        return r <= radius * wobble;
    }
};

}  // namespace

std::vector<SyntheticSample> generate_synthetic_dataset(int n_images, int image_size,
                                                        const ShapeConfig& shape, std::uint64_t seed) {
    require(n_images >= 1, "n_images must be at least 1");
    require(image_size >= kMinSyntheticSize,
            "image_size too small to fit the minimum shape (need >= " + std::to_string(kMinSyntheticSize) + ")");
    shape.validate();

    const double n = image_size;
    std::vector<SyntheticSample> out;
    out.reserve(n_images);
    for (int i = 0; i < n_images; ++i) {
        Rng rng(derive_seed(seed, "synthetic", std::uint64_t(i)));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

        Mask mask;
        bool accepted = false;
        for (int attempt = 0; attempt < shape.max_attempts && !accepted; ++attempt) {
            Blob blob{uni(0.3, 0.7) * n, uni(0.3, 0.7) * n, uni(0.1, 0.3) * n, uni(0.1, 0.3) * n,
                      uni(0, M_PI), {}, {}};
            for (int k = 0; k < 3; ++k) {
                blob.amp[k] = uni(0, 0.1);
                blob.phase[k] = uni(0, 2 * M_PI);
            }
            mask = Mask::Zero(image_size, image_size);
            for (int y = 0; y < image_size; ++y)
                for (int x = 0; x < image_size; ++x) mask(y, x) = blob.contains(x, y);
            const double frac = mask.cast<double>().mean();
            accepted = frac >= shape.min_fg_fraction && frac <= shape.max_fg_fraction;
        }
        if (!accepted) throw ValidationError("could not place a shape within the foreground fraction bounds");

        // Oriented gratings for texture, an interior shading gradient, and
        // white noise; quantized so the image survives 8-bit storage exactly.
        double fx[3], fy[3], ph[3];
        for (int k = 0; k < 3; ++k) {
            const double freq = uni(1.5, 6.0) * 2 * M_PI / n;
            const double dir = uni(0, M_PI);
            fx[k] = freq * std::cos(dir);
            fy[k] = freq * std::sin(dir);
            ph[k] = uni(0, 2 * M_PI);
        }
        const double shade_dir = uni(0, 2 * M_PI);
        std::normal_distribution<double> noise(0.0, 1.0);
        Image image(image_size, image_size);
        for (int y = 0; y < image_size; ++y)
            for (int x = 0; x < image_size; ++x) {
                double v = shape.background_level;
                for (int k = 0; k < 3; ++k)
                    v += shape.texture_amplitude / 3 * std::sin(fx[k] * x + fy[k] * y + ph[k]);
                if (mask(y, x))
                    v += shape.contrast *
                         (1 + 0.2 * ((x / n - 0.5) * std::cos(shade_dir) + (y / n - 0.5) * std::sin(shade_dir)));
                v += shape.noise_sigma * noise(rng);
                image(y, x) = std::round(std::clamp(v, 0.0, 255.0));
            }

        char id[32];
        std::snprintf(id, sizeof(id), "img%05d", i);
        out.push_back({id, std::move(image), std::move(mask)});
    }
    return out;
}

}  // namespace gazeseg
