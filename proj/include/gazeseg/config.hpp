#ifndef GAZESEG_CONFIG_HPP
#define GAZESEG_CONFIG_HPP

#include "gazeseg/crf.hpp"
#include "gazeseg/gaze_data.hpp"
#include "gazeseg/heatmap.hpp"
#include "gazeseg/model.hpp"
#include "gazeseg/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace gazeseg {

enum class DatasetSource { synthetic, files };

struct DatasetBlock {
    DatasetSource source = DatasetSource::synthetic;
    int n_images = 200;
    int image_size = 64;
    ShapeConfig shape;
    // Only for source = files: grayscale or color PNGs named <image_id>.png.
    std::filesystem::path images_dir;
    std::filesystem::path gt_dir;  // optional <image_id>.png masks
    std::filesystem::path fixations;
    std::filesystem::path geometry;  // optional; screen-frame fixations when set
    int resize = 0;  // resample images to resize x resize (0 = keep)
};

struct HeatmapBlock {
    double sigma = 0;  // pixels; 0 selects the width / 24 default
    Weighting weighting = Weighting::duration;

    double sigma_for(int image_width) const { return sigma > 0 ? sigma : default_sigma(image_width); }
};

struct LadderBlock {
    double t_low = 0.3;
    double t_high = 0.6;
};

enum class TrainMode { multi, single };

struct EvalBlock {
    int interval = 500;
    double test_fraction = 0.2;
    std::size_t memorization_limit = 0;
};

/// Everything a run needs. The INI form has sections dataset, gaze,
/// heatmap, crf, ladder, model, train, eval and experiment; see README for
/// the key list.
struct ExperimentConfig {
    std::uint64_t seed = 0;  // root seed; every stage derives a named sub-seed
    std::filesystem::path output = "run";
    DatasetBlock dataset;
    SimulatorConfig gaze;
    HeatmapBlock heatmap;
    CrfParams crf;
    LadderBlock ladder;
    ModelConfig model;
    TrainConfig train;
    TrainMode mode = TrainMode::multi;
    int runs = 1;       // training seeds per experiment
    int first_run = 0;  // runs use training seeds first_run .. first_run + runs - 1
    EvalBlock eval;

    void validate() const;
    /// Problems that block a run but are not malformed values, e.g. image
    /// sizes the network cannot take.
    std::vector<std::string> check_shapes() const;
};

/// Desk-scale defaults (64x64 synthetic images, small UNet).
ExperimentConfig default_config();
/// 224x224 full-size recipe: m = 2, lambda = 3, 15k iterations, batch 8,
/// SGD momentum 0.99 with cosine annealing from 1e-2 to 1e-4, random flips.
ExperimentConfig full_scale_config();

struct RecipeCheck {
    std::string item;
    std::string expected;
    std::string actual;
    bool ok = false;
};
/// Compares a configuration against the full-size recipe table.
std::vector<RecipeCheck> check_against_recipe(const ExperimentConfig& config);

ExperimentConfig read_config(std::istream& in, const ExperimentConfig& base = default_config());
ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base = default_config());
void write_config(std::ostream& out, const ExperimentConfig& config);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

/// Applies "section.key=value".
void apply_override(ExperimentConfig& config, const std::string& assignment);

/// Sub-seeds of the root seed.
std::uint64_t dataset_seed(const ExperimentConfig& c);
std::uint64_t gaze_seed(const ExperimentConfig& c, std::size_t image_index);
std::uint64_t split_seed(const ExperimentConfig& c);
std::uint64_t training_seed(const ExperimentConfig& c, int run);

}  // namespace gazeseg

#endif
