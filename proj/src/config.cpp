#include "gazeseg/config.hpp"

#include "gazeseg/seeds.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace gazeseg {

namespace pt = boost::property_tree;

namespace {

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general);
    return std::string(buf, end);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* first = text.data();
    const char* last = first + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) throw ValidationError("config key '" + key + "': cannot parse '" + text + "'");
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw ValidationError("config key '" + key + "': expected a boolean, got '" + text + "'");
}

struct Binding {
    std::string key;  // section.name
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

Binding bind(std::string key, double& v) {
    return {key, [&v] { return format_double(v); }, [&v, key](const std::string& s) { v = parse_number<double>(key, s); }};
}
Binding bind(std::string key, int& v) {
    return {key, [&v] { return std::to_string(v); }, [&v, key](const std::string& s) { v = parse_number<int>(key, s); }};
}
Binding bind(std::string key, std::uint64_t& v) {
    return {key, [&v] { return std::to_string(v); },
            [&v, key](const std::string& s) { v = parse_number<std::uint64_t>(key, s); }};
}
Binding bind(std::string key, bool& v) {
    return {key, [&v] { return std::string(v ? "true" : "false"); },
            [&v, key](const std::string& s) { v = parse_bool(key, s); }};
}
Binding bind(std::string key, std::filesystem::path& v) {
    return {key, [&v] { return v.string(); }, [&v](const std::string& s) { v = s; }};
}

std::vector<Binding> bindings(ExperimentConfig& c) {
    auto& d = c.dataset;
    auto& t = c.train;
    return {
        bind("experiment.seed", c.seed),
        bind("experiment.output", c.output),
        bind("experiment.runs", c.runs),
        bind("experiment.first_run", c.first_run),
        {"dataset.source", [&d] { return std::string(d.source == DatasetSource::files ? "files" : "synthetic"); },
         [&d](const std::string& s) {
             if (s == "synthetic") d.source = DatasetSource::synthetic;
             else if (s == "files") d.source = DatasetSource::files;
             else throw ValidationError("dataset.source must be 'synthetic' or 'files'");
         }},
        bind("dataset.n_images", d.n_images),
        bind("dataset.image_size", d.image_size),
        bind("dataset.min_fg_fraction", d.shape.min_fg_fraction),
        bind("dataset.max_fg_fraction", d.shape.max_fg_fraction),
        bind("dataset.background", d.shape.background_level),
        bind("dataset.contrast", d.shape.contrast),
        bind("dataset.texture", d.shape.texture_amplitude),
        bind("dataset.noise", d.shape.noise_sigma),
        bind("dataset.images_dir", d.images_dir),
        bind("dataset.gt_dir", d.gt_dir),
        bind("dataset.fixations", d.fixations),
        bind("dataset.geometry", d.geometry),
        bind("dataset.resize", d.resize),
        bind("gaze.n_scan_fixations", c.gaze.n_scan_fixations),
        bind("gaze.n_cover_fixations", c.gaze.n_cover_fixations),
        bind("gaze.jitter_sigma", c.gaze.jitter_sigma),
        bind("gaze.distractor_rate", c.gaze.distractor_rate),
        bind("heatmap.sigma", c.heatmap.sigma),
        {"heatmap.weighting", [&c] { return to_string(c.heatmap.weighting); },
         [&c](const std::string& s) { c.heatmap.weighting = parse_weighting(s); }},
        bind("crf.n_iters", c.crf.n_iters),
        bind("crf.w_app", c.crf.w_app),
        bind("crf.theta_alpha", c.crf.theta_alpha),
        bind("crf.theta_beta", c.crf.theta_beta),
        bind("crf.w_smooth", c.crf.w_smooth),
        bind("crf.theta_gamma", c.crf.theta_gamma),
        bind("crf.unary_clamp", c.crf.unary_clamp),
        {"crf.normalization", [&c] { return to_string(c.crf.normalization); },
         [&c](const std::string& s) { c.crf.normalization = parse_normalization(s); }},
        bind("ladder.t_low", c.ladder.t_low),
        bind("ladder.t_high", c.ladder.t_high),
        bind("ladder.m", t.m),
        bind("model.depth", c.model.depth),
        bind("model.base_channels", c.model.base_channels),
        bind("model.feature_dim", c.model.feature_dim),
        {"train.mode", [&c] { return std::string(c.mode == TrainMode::single ? "single" : "multi"); },
         [&c](const std::string& s) {
             if (s == "multi") c.mode = TrainMode::multi;
             else if (s == "single") c.mode = TrainMode::single;
             else throw ValidationError("train.mode must be 'multi' or 'single'");
         }},
        bind("train.lambda", t.lambda),
        bind("train.iters", t.iters),
        bind("train.batch_size", t.batch_size),
        {"train.optimizer", [&t] { return to_string(t.optimizer.kind); },
         [&t](const std::string& s) { t.optimizer.kind = parse_optimizer(s); }},
        bind("train.lr", t.optimizer.lr),
        bind("train.beta1", t.optimizer.beta1),
        bind("train.beta2", t.optimizer.beta2),
        bind("train.eps", t.optimizer.eps),
        bind("train.momentum", t.optimizer.momentum),
        bind("train.cosine", t.optimizer.cosine),
        bind("train.min_lr", t.optimizer.min_lr),
        bind("train.lpp_window", t.lpp.window),
        bind("train.lpp_dilation", t.lpp.dilation),
        bind("train.lpp_include_center", t.lpp.include_center),
        bind("train.loss_norm", t.loss_norm),
        bind("train.random_flip", t.random_flip),
        bind("train.checkpoint_interval", t.checkpoint_interval),
        bind("eval.interval", c.eval.interval),
        bind("eval.test_fraction", c.eval.test_fraction),
        bind("eval.memorization_limit", c.eval.memorization_limit),
    };
}

void set_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
    for (auto& b : bindings(c))
        if (b.key == key) {
            b.set(value);
            return;
        }
    throw ValidationError("unknown config key '" + key + "'");
}

}  // namespace

void ExperimentConfig::validate() const {
    require(runs >= 1, "experiment.runs must be at least 1");
    require(first_run >= 0, "experiment.first_run must be non-negative");
    if (dataset.source == DatasetSource::synthetic) {
        require(dataset.n_images >= 2, "dataset.n_images must be at least 2 (train and test)");
        require(dataset.image_size >= kMinSyntheticSize, "dataset.image_size too small to fit the minimum shape");
        dataset.shape.validate();
        gaze.validate();
    } else {
        require(!dataset.images_dir.empty(), "dataset.images_dir is required for file datasets");
        require(!dataset.fixations.empty(), "dataset.fixations is required for file datasets");
        require(dataset.resize >= 0, "dataset.resize must be non-negative");
    }
    require(heatmap.sigma >= 0, "heatmap.sigma must be non-negative (0 = default)");
    crf.validate();
    (void)make_ladder(ladder.t_low, ladder.t_high, train.m);
    model.validate();
    train.validate();
    require(eval.interval >= 0, "eval.interval must be non-negative");
    require(eval.test_fraction > 0 && eval.test_fraction < 1, "eval.test_fraction must lie in (0, 1)");
}

std::vector<std::string> ExperimentConfig::check_shapes() const {
    std::vector<std::string> out;
    const int side = dataset.source == DatasetSource::synthetic ? dataset.image_size : dataset.resize;
    if (side > 0 && side % model.size_multiple() != 0)
        out.push_back("image side " + std::to_string(side) + " is not a multiple of 2^depth = " +
                      std::to_string(model.size_multiple()));
    if (side > 0 && train.lpp.reach() >= side)
        out.push_back("LPP neighbourhood reach " + std::to_string(train.lpp.reach()) + " does not fit a " +
                      std::to_string(side) + "-pixel image");
    if (dataset.source == DatasetSource::files && side == 0)
        out.push_back("dataset.resize is 0: every image side must be a multiple of " +
                      std::to_string(model.size_multiple()) + " (checked per image at load time)");
    return out;
}

ExperimentConfig default_config() {
    ExperimentConfig c;
    // Cleaner images and denser cover fixations than the module defaults:
    // with the noisier generator settings the CRF erodes most foreground at
    // 64 px and the pseudo-masks carry little signal.
    c.dataset.shape.noise_sigma = 6;
    c.dataset.shape.texture_amplitude = 6;
    c.gaze.n_cover_fixations = 40;
    c.heatmap.sigma = c.dataset.image_size / 12.0;
    c.model.depth = 2;
    c.model.base_channels = 8;
    c.model.feature_dim = 8;
    c.train.iters = 1500;
    c.train.batch_size = 4;
    c.train.checkpoint_interval = 500;
    c.eval.interval = 150;
    c.eval.memorization_limit = 40;
    return c;
}

ExperimentConfig full_scale_config() {
    ExperimentConfig c;
    c.dataset.source = DatasetSource::files;
    c.dataset.resize = 224;
    c.model.depth = 4;
    c.model.base_channels = 64;
    c.model.feature_dim = 64;
    c.train.m = 2;
    c.train.lambda = 3;
    c.train.iters = 15000;
    c.train.batch_size = 8;
    c.train.optimizer = OptimizerConfig::sgd_cosine_preset();
    c.train.random_flip = true;
    c.runs = 3;
    return c;
}

std::vector<RecipeCheck> check_against_recipe(const ExperimentConfig& c) {
    std::vector<RecipeCheck> out;
    auto add = [&](std::string item, std::string expected, std::string actual) {
        const bool ok = expected == actual;
        out.push_back({std::move(item), std::move(expected), std::move(actual), ok});
    };
    const auto& t = c.train;
    add("levels m", "2", std::to_string(t.m));
    add("consistency weight lambda", "3", format_double(t.lambda));
    add("supervision loss", "cross-entropy", "cross-entropy");
    add("training iterations", "15000", std::to_string(t.iters));
    add("batch size", "8", std::to_string(t.batch_size));
    add("optimizer", "sgd-momentum", to_string(t.optimizer.kind));
    add("SGD momentum", "0.99", format_double(t.optimizer.momentum));
    add("scheduler", "cosine", t.optimizer.cosine ? "cosine" : "constant");
    add("base learning rate", "0.01", format_double(t.optimizer.lr));
    add("minimum learning rate", "0.0001", format_double(t.optimizer.min_lr));
    add("resolution", "224x224",
        c.dataset.source == DatasetSource::files
            ? std::to_string(c.dataset.resize) + "x" + std::to_string(c.dataset.resize)
            : std::to_string(c.dataset.image_size) + "x" + std::to_string(c.dataset.image_size));
    add("data augmentation", "random flip", t.random_flip ? "random flip" : "none");
    add("backbone", "2D UNet", "2D UNet");
    return out;
}

ExperimentConfig read_config(std::istream& in, const ExperimentConfig& base) {
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ParseError(int(e.line()), e.message());
    }
    ExperimentConfig c = base;
    for (const auto& [section, entries] : tree) {
        if (entries.empty() && !entries.data().empty())
            throw ValidationError("config key '" + section + "' is outside any section");
        for (const auto& [key, value] : entries) set_key(c, section + "." + key, value.data());
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path.string());
    return read_config(in, base);
}

void write_config(std::ostream& out, const ExperimentConfig& config) {
    ExperimentConfig copy = config;
    std::string section;
    for (const auto& b : bindings(copy)) {
        const auto dot = b.key.find('.');
        const std::string s = b.key.substr(0, dot);
        if (s != section) {
            if (!section.empty()) out << '\n';
            out << '[' << s << "]\n";
            section = s;
        }
        out << b.key.substr(dot + 1) << " = " << b.get() << '\n';
    }
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config " + path.string());
    write_config(out, config);
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || assignment.find('.') > eq)
        throw ValidationError("override '" + assignment + "' is not of the form section.key=value");
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    set_key(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::uint64_t dataset_seed(const ExperimentConfig& c) { return derive_seed(c.seed, "dataset"); }
std::uint64_t gaze_seed(const ExperimentConfig& c, std::size_t image_index) {
    return derive_seed(c.seed, "gaze", image_index);
}
std::uint64_t split_seed(const ExperimentConfig& c) { return derive_seed(c.seed, "split"); }
std::uint64_t training_seed(const ExperimentConfig& c, int run) {
    return derive_seed(c.seed, "train", std::uint64_t(run));
}

}  // namespace gazeseg
