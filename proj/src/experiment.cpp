#include "gazeseg/experiment.hpp"

#include "gazeseg/content_hash.hpp"
#include "gazeseg/crf.hpp"
#include "gazeseg/heatmap.hpp"
#include "gazeseg/image_io.hpp"
#include "gazeseg/pseudomask.hpp"
#include "gazeseg/seeds.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace gazeseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Small file helpers

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return json::parse(in);
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << text;
    }
    fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

std::string fixed(double v, int digits = 4) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(digits);
    s << v;
    return s.str();
}

bool has_entries(const fs::path& dir) { return fs::exists(dir) && fs::directory_iterator(dir) != fs::directory_iterator(); }

// ---------------------------------------------------------------------------
// Resampling for file datasets

Image resize_bilinear(const Image& in, int size) {
    Image out(size, size);
    const double sy = double(in.rows()) / size, sx = double(in.cols()) / size;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(in.rows() - 1));
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(in.cols() - 1));
            const int y0 = int(fy), x0 = int(fx);
            const int y1 = std::min(y0 + 1, int(in.rows()) - 1), x1 = std::min(x0 + 1, int(in.cols()) - 1);
            const double ay = fy - y0, ax = fx - x0;
            out(y, x) = (1 - ay) * ((1 - ax) * in(y0, x0) + ax * in(y0, x1)) + ay * ((1 - ax) * in(y1, x0) + ax * in(y1, x1));
        }
    return out;
}

Mask resize_nearest(const Mask& in, int size) {
    Mask out(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            out(y, x) = in(std::min(int((y + 0.5) * in.rows() / size), int(in.rows()) - 1),
                           std::min(int((x + 0.5) * in.cols() / size), int(in.cols()) - 1));
    return out;
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
    std::string id;
    std::string image_sha256;
    std::optional<std::string> gt_sha256;
};

struct Manifest {
    std::vector<ManifestEntry> images;
    std::vector<std::string> train, test;
    std::string fixations_sha256;
};

json to_json(const Manifest& m, const ExperimentLayout& layout) {
    json images = json::array();
    for (const auto& e : m.images) {
        json j{{"id", e.id},
               {"image", fs::relative(layout.images() / (e.id + ".png"), layout.root).generic_string()},
               {"image_sha256", e.image_sha256}};
        if (e.gt_sha256) {
            j["gt"] = fs::relative(layout.gt() / (e.id + ".png"), layout.root).generic_string();
            j["gt_sha256"] = *e.gt_sha256;
        }
        images.push_back(std::move(j));
    }
    return {{"format", 1},
            {"images", std::move(images)},
            {"fixations", {{"path", "data/fixations.csv"}, {"sha256", m.fixations_sha256}}},
            {"split", {{"train", m.train}, {"test", m.test}}}};
}

Manifest read_manifest(const ExperimentLayout& layout) {
    if (!fs::exists(layout.manifest()))
        throw std::runtime_error("no manifest in " + layout.root.string() + " (run 'simulate' or 'masks' first)");
    const json j = read_json(layout.manifest());
    Manifest m;
    for (const auto& e : j.at("images")) {
        ManifestEntry entry{e.at("id"), e.at("image_sha256"), {}};
        if (e.contains("gt_sha256")) entry.gt_sha256 = e.at("gt_sha256").get<std::string>();
        m.images.push_back(std::move(entry));
    }
    m.train = j.at("split").at("train").get<std::vector<std::string>>();
    m.test = j.at("split").at("test").get<std::vector<std::string>>();
    m.fixations_sha256 = j.at("fixations").at("sha256");
    return m;
}

void assign_split(const ExperimentConfig& config, Manifest& m) {
    std::vector<std::string> ids;
    for (const auto& e : m.images) ids.push_back(e.id);
    Rng rng(split_seed(config));
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n_test = std::clamp<std::size_t>(std::size_t(std::lround(config.eval.test_fraction * double(ids.size()))),
                                                1, ids.size() - 1);
    m.test.assign(ids.begin(), ids.begin() + std::ptrdiff_t(n_test));
    m.train.assign(ids.begin() + std::ptrdiff_t(n_test), ids.end());
    std::sort(m.test.begin(), m.test.end());
    std::sort(m.train.begin(), m.train.end());
}

/// Imports a file dataset into the experiment layout (grayscale, resized),
/// mapping fixations into the stored image frame.
void import_file_dataset(const ExperimentConfig& config, const ExperimentLayout& layout) {
    const auto& d = config.dataset;
    fs::create_directories(layout.images());
    std::map<std::string, Image> originals;
    for (const auto& entry : fs::directory_iterator(d.images_dir))
        if (entry.path().extension() == ".png") originals[entry.path().stem().string()] = read_gray_png(entry.path());
    if (originals.empty()) throw ValidationError("no PNG images in " + d.images_dir.string());

    std::optional<DisplayGeometry> geometry;
    if (!d.geometry.empty()) {
        std::ifstream g(d.geometry);
        if (!g) throw std::runtime_error("cannot read geometry " + d.geometry.string());
        geometry = parse_geometry(g);
    }
    std::ifstream fin(d.fixations);
    if (!fin) throw std::runtime_error("cannot read fixations " + d.fixations.string());
    auto parsed = parse_fixation_file(fin, geometry, [&](const std::string& id) -> std::optional<ImageExtent> {
        auto it = originals.find(id);
        if (it == originals.end()) return std::nullopt;
        return ImageExtent{int(it->second.cols()), int(it->second.rows())};
    });
    if (!parsed.clamped.empty())
        spdlog::warn("{} fixations fell outside their image and were clamped to the border", parsed.clamped.size());

    Manifest m;
    std::vector<GazeSequence> sequences;
    for (auto& [id, img] : originals) {
        Image stored = d.resize > 0 ? resize_bilinear(img, d.resize) : img;
        const auto image_path = layout.images() / (id + ".png");
        write_gray_png(image_path, to_bytes(stored));
        ManifestEntry e{id, sha256_file(image_path), {}};
        const auto gt_src = d.gt_dir / (id + ".png");
        if (!d.gt_dir.empty() && fs::exists(gt_src)) {
            fs::create_directories(layout.gt());
            Mask gt = read_mask_png(gt_src);
            if (d.resize > 0) gt = resize_nearest(gt, d.resize);
            write_mask_png(layout.gt() / (id + ".png"), gt);
            e.gt_sha256 = sha256_file(layout.gt() / (id + ".png"));
        }
        m.images.push_back(std::move(e));
    }
    for (auto& seq : parsed.sequences) {
        auto it = originals.find(seq.image_id);
        if (it == originals.end()) {
            spdlog::warn("fixations for unknown image '{}' ignored", seq.image_id);
            continue;
        }
        if (d.resize > 0) {
            const double sx = double(d.resize) / double(it->second.cols());
            const double sy = double(d.resize) / double(it->second.rows());
            for (auto& s : seq.samples) {
                s.x = std::clamp(s.x * sx, 0.0, d.resize - 1.0);
                s.y = std::clamp(s.y * sy, 0.0, d.resize - 1.0);
            }
            seq.width = seq.height = d.resize;
        }
        sequences.push_back(std::move(seq));
    }
    {
        std::ofstream out(layout.fixations());
        write_fixation_file(out, sequences);
    }
    m.fixations_sha256 = sha256_file(layout.fixations());
    assign_split(config, m);
    write_json(layout.manifest(), to_json(m, layout));
}

ExperimentLayout layout_of(const ExperimentConfig& c) { return {fs::absolute(c.output)}; }

std::map<std::string, GazeSequence> load_sequences(const ExperimentLayout& layout, const Manifest& m,
                                                   std::size_t* clamped = nullptr) {
    std::map<std::string, ImageExtent> extents;
    for (const auto& e : m.images) {
        const Image img = read_gray_png(layout.images() / (e.id + ".png"));
        extents[e.id] = {int(img.cols()), int(img.rows())};
    }
    std::ifstream in(layout.fixations());
    if (!in) throw std::runtime_error("cannot read " + layout.fixations().string());
    auto parsed = parse_fixation_file(in, std::nullopt, [&](const std::string& id) -> std::optional<ImageExtent> {
        auto it = extents.find(id);
        return it == extents.end() ? std::nullopt : std::optional<ImageExtent>(it->second);
    });
    if (clamped) *clamped = parsed.clamped.size();
    std::map<std::string, GazeSequence> out;
    for (auto& s : parsed.sequences) out.emplace(s.image_id, std::move(s));
    return out;
}

std::string crf_params_key(const CrfParams& p) {
    std::ostringstream s;
    s.precision(17);
    s << "crf:" << p.n_iters << ',' << p.w_app << ',' << p.theta_alpha << ',' << p.theta_beta << ',' << p.w_smooth << ','
      << p.theta_gamma << ',' << p.unary_clamp << ',' << to_string(p.normalization);
    return s.str();
}

std::string short_key(const std::string& hex) { return hex.substr(0, 16); }

}  // namespace

// ---------------------------------------------------------------------------
// simulate

SimulateSummary cmd_simulate(const ExperimentConfig& config, const SimulateOptions& options) {
    config.validate();
    if (config.dataset.source != DatasetSource::synthetic)
        throw ValidationError("simulate needs dataset.source = synthetic; file datasets are imported by 'masks'");
    const auto layout = layout_of(config);
    if (has_entries(layout.root)) {
        if (!options.force)
            throw ValidationError("output directory " + layout.root.string() + " is not empty (use --force to overwrite)");
        fs::remove_all(layout.root);
    }
    fs::create_directories(layout.images());
    fs::create_directories(layout.gt());

    const auto samples = generate_synthetic_dataset(config.dataset.n_images, config.dataset.image_size,
                                                    config.dataset.shape, dataset_seed(config));
    Manifest m;
    std::vector<GazeSequence> sequences;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        write_gray_png(layout.images() / (s.id + ".png"), to_bytes(s.image));
        write_mask_png(layout.gt() / (s.id + ".png"), s.mask);
        m.images.push_back({s.id, sha256_file(layout.images() / (s.id + ".png")),
                            sha256_file(layout.gt() / (s.id + ".png"))});
        SimulatorConfig gaze = config.gaze;
        gaze.seed = gaze_seed(config, i);
        sequences.push_back(simulate_gaze(s.mask, gaze, s.id));
    }
    {
        std::ofstream out(layout.fixations());
        write_fixation_file(out, sequences);
    }
    m.fixations_sha256 = sha256_file(layout.fixations());
    assign_split(config, m);
    write_json(layout.manifest(), to_json(m, layout));
    ExperimentConfig snapshot = config;
    snapshot.output = layout.root;
    save_config(layout.config(), snapshot);
    spdlog::info("simulated {} images ({} train / {} test) into {}", samples.size(), m.train.size(), m.test.size(),
                 layout.root.string());
    return {int(samples.size()), layout.manifest()};
}

// ---------------------------------------------------------------------------
// masks

MasksSummary cmd_masks(const ExperimentConfig& config, const MasksOptions& options) {
    config.validate();
    const auto layout = layout_of(config);
    if (config.dataset.source == DatasetSource::files && !fs::exists(layout.manifest()))
        import_file_dataset(config, layout);
    const Manifest manifest = read_manifest(layout);
    MasksSummary summary;
    const auto sequences = load_sequences(layout, manifest, &summary.clamped_fixations);
    const ThresholdLadder ladder = make_ladder(config.ladder.t_low, config.ladder.t_high, config.train.m);

    fs::create_directories(layout.heatmap_cache());
    fs::create_directories(layout.crf_cache());
    fs::create_directories(layout.masks());
    if (options.preview) fs::create_directories(layout.masks() / "preview");

    json old_index = fs::exists(layout.masks() / "index.json") ? read_json(layout.masks() / "index.json") : json::object();
    std::ostringstream ladder_key;
    ladder_key.precision(17);
    ladder_key << "ladder";
    for (double t : ladder.thresholds) ladder_key << ',' << t;

    struct Outcome {
        json entry;
        std::optional<MaskFailure> failure;
        bool heatmap_cached = false, crf_cached = false, masks_written = false, top_empty = false;
    };
    std::vector<Outcome> outcomes(manifest.images.size());

    auto process = [&](std::size_t i) {
        const auto& e = manifest.images[i];
        Outcome& out = outcomes[i];
        auto seq_it = sequences.find(e.id);
        if (seq_it == sequences.end() || seq_it->second.samples.empty()) {
            out.failure = MaskFailure{e.id, "no fixations for this image"};
            return;
        }
        try {
            const Image image = read_gray_png(layout.images() / (e.id + ".png"));
            const double sigma = config.heatmap.sigma_for(int(image.cols()));
            std::ostringstream seq_text;
            write_fixation_file(seq_text, std::span(&seq_it->second, 1));
            std::ostringstream hm_params;
            hm_params.precision(17);
            hm_params << "heatmap:" << sigma << ',' << to_string(config.heatmap.weighting);
            const std::string hm_key = sha256_hex(e.image_sha256 + '|' + seq_text.str() + '|' + hm_params.str());
            const std::string crf_key = sha256_hex(hm_key + '|' + crf_params_key(config.crf));
            const std::string mask_key = sha256_hex(crf_key + '|' + ladder_key.str());

            const auto hm_path = layout.heatmap_cache() / (e.id + "." + short_key(hm_key) + ".hm");
            AttentionHeatmap heatmap;
            if (fs::exists(hm_path)) {
                heatmap = load_heatmap(hm_path);
                out.heatmap_cached = true;
            } else {
                heatmap = quantize_to_float(render_heatmap(seq_it->second, sigma, config.heatmap.weighting));
                save_heatmap(hm_path, heatmap);
            }
            const auto crf_path = layout.crf_cache() / (e.id + "." + short_key(crf_key) + ".hm.crf");
            AttentionHeatmap refined;
            if (fs::exists(crf_path)) {
                refined = load_heatmap(crf_path);
                out.crf_cached = true;
            } else {
                refined = quantize_to_float(refine_heatmap(image, heatmap, config.crf));
                save_heatmap(crf_path, refined);
            }
            if (options.preview) {
                auto bytes = [](const AttentionHeatmap& h) { return to_bytes(Image(h.values * 255.0)); };
                write_gray_png(layout.masks() / "preview" / (e.id + ".heatmap.png"), bytes(heatmap));
                write_gray_png(layout.masks() / "preview" / (e.id + ".crf.png"), bytes(refined));
            }

            const auto stack = binarize_stack(refined, ladder, e.id);
            out.top_empty = stack.top_level_empty();
            bool up_to_date = old_index.contains("images") && old_index["images"].contains(e.id) &&
                              old_index["images"][e.id].value("mask_key", "") == mask_key;
            for (int k = 0; k < ladder.m && up_to_date; ++k) up_to_date = fs::exists(layout.mask(e.id, k));
            if (!up_to_date) {
                for (int k = 0; k < ladder.m; ++k) write_mask_png(layout.mask(e.id, k), stack.masks[std::size_t(k)]);
                out.masks_written = true;
            }
            PseudoMaskStack reread{e.id, {}};
            for (int k = 0; k < ladder.m; ++k) reread.masks.push_back(read_mask_png(layout.mask(e.id, k)));
            if (!is_nested(reread)) throw std::runtime_error("pseudo-masks on disk are not nested");

            out.entry = {{"heatmap_key", hm_key},
                         {"crf_key", crf_key},
                         {"mask_key", mask_key},
                         {"heatmap", fs::relative(hm_path, layout.root).generic_string()},
                         {"refined", fs::relative(crf_path, layout.root).generic_string()},
                         {"levels", ladder.m},
                         {"top_level_empty", out.top_empty}};
        } catch (const std::exception& ex) {
            out.failure = MaskFailure{e.id, ex.what()};
        }
    };

    const int jobs = options.jobs > 0 ? options.jobs : int(std::max(1u, std::thread::hardware_concurrency()));
    {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i = next++; i < outcomes.size(); i = next++) process(i);
        };
        std::vector<std::jthread> pool;
        for (int t = 1; t < jobs; ++t) pool.emplace_back(worker);
        worker();
    }

    json index{{"ladder", ladder.thresholds}, {"images", json::object()}};
    json failures = json::array();
    summary.images = int(manifest.images.size());
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        const auto& o = outcomes[i];
        if (o.failure) {
            summary.failures.push_back(*o.failure);
            failures.push_back({{"image_id", o.failure->image_id}, {"reason", o.failure->reason}});
            spdlog::warn("{}: {}", o.failure->image_id, o.failure->reason);
            continue;
        }
        index["images"][manifest.images[i].id] = o.entry;
        (o.heatmap_cached ? summary.heatmaps_cached : summary.heatmaps_computed)++;
        (o.crf_cached ? summary.refinements_cached : summary.refinements_computed)++;
        summary.masks_written += o.masks_written ? 1 : 0;
        if (o.top_empty) {
            ++summary.top_level_empty;
            spdlog::info("{}: highest-level pseudo-mask is empty", manifest.images[i].id);
        }
    }
    write_json(layout.masks() / "index.json", index);
    write_json(layout.masks() / "report.json", {{"images", summary.images},
                                                {"failures", failures},
                                                {"clamped_fixations", summary.clamped_fixations},
                                                {"top_level_empty", summary.top_level_empty}});
    ExperimentConfig snapshot = config;
    snapshot.output = layout.root;
    save_config(layout.config(), snapshot);
    spdlog::info("masks: {} images; heatmaps {} computed / {} cached; refinements {} computed / {} cached; {} failures",
                 summary.images, summary.heatmaps_computed, summary.heatmaps_cached, summary.refinements_computed,
                 summary.refinements_cached, summary.failures.size());
    return summary;
}

// ---------------------------------------------------------------------------
// train

double single_level_threshold(const ExperimentConfig& config) { return 0.5 * (config.ladder.t_low + config.ladder.t_high); }

ExperimentData load_experiment_data(const ExperimentConfig& config) {
    const auto layout = layout_of(config);
    const Manifest manifest = read_manifest(layout);
    const fs::path index_path = layout.masks() / "index.json";
    if (!fs::exists(index_path)) throw std::runtime_error("no pseudo-masks in " + layout.root.string() + " (run 'masks' first)");
    const json index = read_json(index_path);
    if (index.at("ladder").size() != std::size_t(config.train.m))
        throw ValidationError("pseudo-masks were built for m = " + std::to_string(index.at("ladder").size()) +
                              ", the config asks for m = " + std::to_string(config.train.m));
    const ThresholdLadder ladder = make_ladder(config.ladder.t_low, config.ladder.t_high, config.train.m);
    if (index.at("ladder").get<std::vector<double>>() != ladder.thresholds)
        throw ValidationError("pseudo-masks were built for a different threshold ladder (rerun 'masks')");
    std::set<std::string> with_gt;
    for (const auto& e : manifest.images)
        if (e.gt_sha256) with_gt.insert(e.id);

    auto base_sample = [&](const std::string& id) {
        TrainingSample s;
        s.id = id;
        s.image = normalize_input(read_gray_png(layout.images() / (id + ".png")));
        if (with_gt.count(id)) s.gt = read_mask_png(layout.gt() / (id + ".png"));
        return s;
    };
    ExperimentData data;
    for (const auto& id : manifest.train) {
        if (!index.at("images").contains(id)) {
            data.skipped.push_back(id);
            continue;
        }
        TrainingSample s = base_sample(id);
        if (config.mode == TrainMode::single) {
            const auto refined = load_heatmap(layout.root / index["images"][id].at("refined").get<std::string>());
            s.masks.push_back(binarize(refined.values, single_level_threshold(config)));
        } else {
            for (int k = 0; k < config.train.m; ++k) s.masks.push_back(read_mask_png(layout.mask(id, k)));
        }
        data.train.push_back(std::move(s));
    }
    for (const auto& id : manifest.test) data.test.push_back(base_sample(id));
    if (!data.skipped.empty())
        spdlog::warn("{} training images have no pseudo-masks and are left out", data.skipped.size());
    if (data.train.empty()) throw ValidationError("no training images with pseudo-masks");
    return data;
}

DryRunReport dry_run(const ExperimentConfig& config) {
    DryRunReport report;
    report.recipe = check_against_recipe(config);
    try {
        config.validate();
    } catch (const std::exception& e) {
        report.problems.push_back(std::string("config: ") + e.what());
        return report;
    }
    for (auto& s : config.check_shapes()) report.problems.push_back(s);
    for (auto& w : config.train.warnings()) report.notes.push_back(w);

    const int side = config.dataset.source == DatasetSource::synthetic ? config.dataset.image_size : config.dataset.resize;
    if (side > 0 && side % config.model.size_multiple() == 0) {
        const auto net = build_network(config.model, training_seed(config, 0));
        const Grid<float> probe = Grid<float>::Zero(side, side);
        const auto [phi, p] = predict(net, probe);
        if (phi.height != side || phi.width != side || phi.channels() != config.model.feature_dim || p.channels() != 2)
            report.problems.push_back("forward pass produced unexpected shapes");
        else
            report.notes.push_back("forward pass " + std::to_string(side) + "x" + std::to_string(side) + " -> phi " +
                                   std::to_string(phi.channels()) + " channels, 2-class map; " +
                                   std::to_string(net.parameters().scalar_count()) + " parameters per level");
    }
    if (config.dataset.source == DatasetSource::files) {
        const auto& d = config.dataset;
        if (!fs::is_directory(d.images_dir)) report.problems.push_back("images_dir " + d.images_dir.string() + " not found");
        if (!fs::exists(d.fixations)) {
            report.problems.push_back("fixation file " + d.fixations.string() + " not found");
        } else {
            try {
                std::optional<DisplayGeometry> geometry;
                if (!d.geometry.empty()) {
                    std::ifstream g(d.geometry);
                    geometry = parse_geometry(g);
                }
                std::ifstream in(d.fixations);
                const auto parsed = parse_fixation_file(in, geometry);
                report.notes.push_back("fixation file parses: " + std::to_string(parsed.sequences.size()) + " images");
            } catch (const std::exception& e) {
                report.problems.push_back(std::string("fixation file: ") + e.what());
            }
        }
    }
    return report;
}

TrainSummary cmd_train(const ExperimentConfig& config, const TrainOptions& options) {
    TrainSummary summary;
    if (options.dry_run) {
        summary.dry_run = dry_run(config);
        return summary;
    }
    config.validate();
    for (const auto& p : config.check_shapes()) throw ShapeError(p);
    summary.warnings = config.train.warnings();
    for (const auto& w : summary.warnings) spdlog::warn("{}", w);

    const auto layout = layout_of(config);
    const ExperimentData data = load_experiment_data(config);
    const ThresholdLadder ladder = make_ladder(config.ladder.t_low, config.ladder.t_high, config.train.m);

    for (int r = config.first_run; r < config.first_run + config.runs; ++r) {
        const fs::path run_dir = layout.runs() / options.name / ("seed" + std::to_string(r));
        if (!options.resume && fs::exists(run_dir / "checkpoint.bin"))
            throw ValidationError("run directory " + run_dir.string() + " already holds a checkpoint (use --resume)");
        fs::create_directories(run_dir);

        ExperimentConfig snapshot = config;
        snapshot.output = layout.root;
        snapshot.first_run = r;
        snapshot.runs = 1;
        save_config(run_dir / "config.ini", snapshot);

        TrainConfig tc = config.train;
        tc.seed = training_seed(config, r);
        tc.eval_interval = config.eval.interval;
        write_json(run_dir / "train.json", train_config_to_json(tc));

        FitOptions fo;
        fo.run_dir = run_dir;
        fo.resume = options.resume && fs::exists(run_dir / "checkpoint.bin");
        fo.stop_after = options.stop_after;
        fo.eval_set = data.test;
        fo.memorization_limit = config.eval.memorization_limit;
        fo.interrupt = options.interrupt;
        fo.on_eval = [&](const EvalRecord& rec) {
            spdlog::info("[{} seed{}] iter {}: ensemble Dice {} {}", options.name, r, rec.iter, fixed(rec.ensemble_dice),
                         rec.overfitting ? "overfitting " + fixed(*rec.overfitting) : std::string());
        };
        spdlog::info("training {} seed{} ({} levels, lambda {}, {} iterations)", options.name, r,
                     config.mode == TrainMode::single ? 1 : config.train.m, tc.lambda, tc.iters);
        const FitResult result = config.mode == TrainMode::single
                                     ? fit_single_level(data.train, single_level_threshold(config), config.model, tc, fo)
                                     : fit(data.train, ladder, config.model, tc, fo);
        summary.run_dirs.push_back(run_dir);
        if (result.interrupted) {
            summary.interrupted = true;
            spdlog::warn("interrupted at iteration {}; resume with --resume", result.state.iter);
            break;
        }
    }
    return summary;
}

// ---------------------------------------------------------------------------
// eval

namespace {

std::vector<fs::path> run_dirs_under(const fs::path& dir, std::optional<int> seeds) {
    if (!fs::is_directory(dir)) throw std::runtime_error("run directory " + dir.string() + " does not exist");
    if (fs::exists(dir / "checkpoint.bin")) {
        if (seeds && *seeds > 1) throw ValidationError("--seeds needs a directory of seed<r> runs");
        return {dir};
    }
    std::vector<fs::path> runs;
    if (seeds) {
        for (int r = 0; r < *seeds; ++r) {
            const auto p = dir / ("seed" + std::to_string(r));
            if (!fs::exists(p / "checkpoint.bin")) throw std::runtime_error("missing checkpoint " + (p / "checkpoint.bin").string());
            runs.push_back(p);
        }
    } else {
        for (const auto& e : fs::directory_iterator(dir))
            if (fs::exists(e.path() / "checkpoint.bin")) runs.push_back(e.path());
        std::sort(runs.begin(), runs.end());
    }
    if (runs.empty()) throw std::runtime_error("no checkpoint under " + dir.string());
    return runs;
}

std::string eval_table(const std::vector<std::string>& names, const std::vector<std::vector<double>>& rows) {
    std::ostringstream s;
    for (std::size_t i = 0; i < names.size(); ++i) {
        s << names[i];
        for (double v : rows[i]) s << '\t' << fixed(v);
        s << '\n';
    }
    return s.str();
}

}  // namespace

EvalSummary cmd_eval(const fs::path& run_dir, std::optional<int> seeds) {
    if (seeds && *seeds < 1) throw ValidationError("--seeds must be at least 1");
    EvalSummary summary;
    std::map<std::string, ExperimentData> data_by_root;
    for (const auto& dir : run_dirs_under(run_dir, seeds)) {
        const ExperimentConfig config = load_config(dir / "config.ini");
        const std::string key = fs::absolute(config.output).string() + (config.mode == TrainMode::single ? "#s" : "#m");
        if (!data_by_root.count(key)) data_by_root.emplace(key, load_experiment_data(config));
        const auto state = load_training_state(dir / "checkpoint.bin");
        auto evaluation = evaluate_ensemble(state.ensemble, data_by_root.at(key).test);
        if (evaluation.skipped > 0) spdlog::warn("{}: {} test images without ground truth skipped", dir.string(), evaluation.skipped);

        json report{{"iter", state.iter},
                    {"levels", state.ensemble.levels()},
                    {"lambda", state.ensemble.config.lambda},
                    {"m", config.train.m},
                    {"mode", config.mode == TrainMode::single ? "single" : "multi"},
                    {"level_dice", evaluation.level_dice},
                    {"ensemble_dice", evaluation.ensemble_dice},
                    {"images", evaluation.images},
                    {"skipped", evaluation.skipped}};
        write_json(dir / "report.json", report);
        std::vector<std::string> names;
        std::vector<std::vector<double>> rows;
        for (std::size_t k = 0; k < evaluation.level_dice.size(); ++k) {
            names.push_back("level" + std::to_string(k));
            rows.push_back({evaluation.level_dice[k]});
        }
        names.push_back("ensemble");
        rows.push_back({evaluation.ensemble_dice});
        write_text_atomic(dir / "report.txt", "entry\tdice\n" + eval_table(names, rows));
        summary.runs.push_back({dir, std::move(evaluation)});
    }

    const std::size_t levels = summary.runs.front().evaluation.level_dice.size();
    for (const auto& r : summary.runs)
        if (r.evaluation.level_dice.size() != levels) throw ValidationError("runs disagree on the number of levels");
    std::vector<double> ens;
    for (const auto& r : summary.runs) ens.push_back(r.evaluation.ensemble_dice);
    summary.ensemble_dice = mean_std(ens);
    for (std::size_t k = 0; k < levels; ++k) {
        std::vector<double> v;
        for (const auto& r : summary.runs) v.push_back(r.evaluation.level_dice[k]);
        summary.level_dice.push_back(mean_std(v));
    }

    if (summary.runs.size() > 1 || !fs::exists(run_dir / "checkpoint.bin")) {
        json j{{"runs", json::array()}, {"level_dice", json::array()}};
        for (const auto& r : summary.runs)
            j["runs"].push_back({{"run", r.run_dir.filename().string()}, {"ensemble_dice", r.evaluation.ensemble_dice},
                                 {"level_dice", r.evaluation.level_dice}});
        for (const auto& ms : summary.level_dice) j["level_dice"].push_back({{"mean", ms.mean}, {"std", ms.std}});
        j["ensemble_dice"] = {{"mean", summary.ensemble_dice.mean}, {"std", summary.ensemble_dice.std}};
        const ExperimentConfig first = load_config(summary.runs.front().run_dir / "config.ini");
        j["lambda"] = first.train.lambda;
        j["m"] = first.train.m;
        j["mode"] = first.mode == TrainMode::single ? "single" : "multi";
        write_json(run_dir / "summary.json", j);
        std::ostringstream txt;
        txt << "entry\tmean\tstd\truns\n";
        for (std::size_t k = 0; k < levels; ++k)
            txt << "level" << k << '\t' << fixed(summary.level_dice[k].mean) << '\t' << fixed(summary.level_dice[k].std)
                << '\t' << summary.runs.size() << '\n';
        txt << "ensemble\t" << fixed(summary.ensemble_dice.mean) << '\t' << fixed(summary.ensemble_dice.std) << '\t'
            << summary.runs.size() << '\n';
        write_text_atomic(run_dir / "summary.txt", txt.str());
        summary.report = run_dir / "summary.json";
    } else {
        summary.report = run_dir / "report.json";
    }
    return summary;
}

}  // namespace gazeseg
