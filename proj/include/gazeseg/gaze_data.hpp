#ifndef GAZESEG_GAZE_DATA_HPP
#define GAZESEG_GAZE_DATA_HPP

#include "gazeseg/core.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gazeseg {

/// One fixation. Positions are image-frame pixels (x = column, y = row,
/// pixel centres at integer coordinates); times are milliseconds.
struct GazeSample {
    double x = 0;
    double y = 0;
    double onset = 0;
    double duration = 0;

    bool operator==(const GazeSample&) const = default;
};

struct GazeSequence {
    std::string image_id;
    int width = 0;
    int height = 0;
    std::vector<GazeSample> samples;  // onset non-decreasing

    void validate() const;
    bool operator==(const GazeSequence&) const = default;
};

struct ImageExtent {
    int width = 0;
    int height = 0;
};

/// Where an image sat on the eye-tracker screen.
struct DisplayGeometry {
    int screen_w = 1024;
    int screen_h = 768;
    int image_display_w = 768;
    int image_display_h = 768;
    double image_offset_x = 128;
    double image_offset_y = 0;

    void validate() const;

    /// Image of the given display size centred on the screen.
    static DisplayGeometry centered(int screen_w, int screen_h, int display_w, int display_h);
};

struct Point2 {
    double x = 0;
    double y = 0;
};

/// Affine map between screen pixels and image pixels of an image with native
/// size `extent` displayed according to `geometry`.
Point2 screen_to_image(const DisplayGeometry& geometry, const ImageExtent& extent, Point2 screen);
Point2 image_to_screen(const DisplayGeometry& geometry, const ImageExtent& extent, Point2 image);

/// Reads the `key = value` block holding screen_w, screen_h,
/// image_display_w, image_display_h, offset_x, offset_y. Blank lines and
/// lines starting with '#' are ignored.
DisplayGeometry parse_geometry(std::istream& in);

struct ClampedFixation {
    std::string image_id;
    std::size_t line = 0;
    double raw_x = 0;
    double raw_y = 0;
};

struct FixationParseResult {
    std::vector<GazeSequence> sequences;  // first-appearance order of image_id
    std::vector<ClampedFixation> clamped;
};

/// Native image size by id; returning nullopt falls back to the displayed
/// extent (with geometry) or to the data's bounding extent (without).
using ExtentLookup = std::function<std::optional<ImageExtent>(const std::string& image_id)>;

/// Parses `image_id,x,y,onset_ms,duration_ms` records. With `geometry` the
/// coordinates are read as screen pixels and mapped into the image frame.
/// Fixations outside the image after mapping are clamped to the border and
/// listed in `clamped`.
FixationParseResult parse_fixation_file(std::istream& in,
                                        const std::optional<DisplayGeometry>& geometry = std::nullopt,
                                        const ExtentLookup& extent_of = {});

/// Writes image-frame records with shortest round-trip decimal formatting.
void write_fixation_file(std::ostream& out, std::span<const GazeSequence> sequences);

struct SimulatorConfig {
    int n_scan_fixations = 4;
    int n_cover_fixations = 16;
    double jitter_sigma = 1.5;
    double distractor_rate = 0.15;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Two-stage synthetic annotator: a coarse scan near the target centroid,
/// then coverage of the target (central band first, boundary band after).
/// round(distractor_rate * total) slots, chosen at random, land uniformly on
/// background instead.
GazeSequence simulate_gaze(const Mask& gt_mask, const SimulatorConfig& config,
                           std::string image_id = {});

struct ShapeConfig {
    double min_fg_fraction = 0.06;
    double max_fg_fraction = 0.30;
    double background_level = 90;
    double contrast = 45;
    double texture_amplitude = 18;
    double noise_sigma = 14;
    int max_attempts = 10000;

    void validate() const;
};

struct SyntheticSample {
    std::string id;
    Image image;  // integer-valued intensities in [0, 255]
    Mask mask;
};

inline constexpr int kMinSyntheticSize = 16;

/// One smooth star-shaped blob per image over a textured background.
std::vector<SyntheticSample> generate_synthetic_dataset(int n_images, int image_size,
                                                        const ShapeConfig& shape,
                                                        std::uint64_t seed);

/// Disk erosion; pixels outside the grid count as background.
Mask erode(const Mask& mask, int radius);

}  // namespace gazeseg

#endif
