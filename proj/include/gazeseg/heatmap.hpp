#ifndef GAZESEG_HEATMAP_HPP
#define GAZESEG_HEATMAP_HPP

#include "gazeseg/core.hpp"
#include "gazeseg/gaze_data.hpp"

#include <filesystem>
#include <iosfwd>

namespace gazeseg {

/// Per-pixel attention in [0, 1], max-normalized.
struct AttentionHeatmap {
    Grid<double> values;  // height x width

    int width() const { return int(values.cols()); }
    int height() const { return int(values.rows()); }
};

enum class Weighting { uniform, duration };

Weighting parse_weighting(const std::string& name);
std::string to_string(Weighting w);

/// Kernel support radius in units of sigma; the dropped tail is below exp(-8).
inline constexpr double kSplatRadiusSigmas = 4.0;

/// Default kernel width: 1/24 of the image width.
inline double default_sigma(int image_width) { return image_width / 24.0; }

/// Sum of isotropic Gaussians at each fixation, divided by its maximum.
AttentionHeatmap render_heatmap(const GazeSequence& seq, double sigma, Weighting weighting = Weighting::duration);

/// Raw (unnormalized) field; exposed for monotonicity checks.
Grid<double> splat_field(const GazeSequence& seq, double sigma, Weighting weighting);

/// Binary layout: 8-byte magic "GZHEAT01", uint32 width, uint32 height
/// (little endian), then width*height float32 values in row-major order.
void write_heatmap(std::ostream& out, const AttentionHeatmap& h);
AttentionHeatmap read_heatmap(std::istream& in);
void save_heatmap(const std::filesystem::path& path, const AttentionHeatmap& h);
AttentionHeatmap load_heatmap(const std::filesystem::path& path);

/// Rounds values through float32, matching what save/load would produce.
AttentionHeatmap quantize_to_float(const AttentionHeatmap& h);

}  // namespace gazeseg

#endif
