#include "gazeseg/experiment.hpp"
#include "gazeseg/heatmap.hpp"
#include "gazeseg/image_io.hpp"
#include "gazeseg/pseudomask.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace gazeseg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("gazeseg_cli_" + name);
    fs::remove_all(p);
    return p;
}

ExperimentConfig tiny_experiment(const fs::path& out) {
    auto c = default_config();
    c.output = out;
    c.dataset.n_images = 10;
    c.dataset.image_size = 16;
    c.heatmap.sigma = 16 / 12.0;
    c.model = {1, 4, 4};
    c.train.iters = 6;
    c.train.batch_size = 2;
    c.train.checkpoint_interval = 4;
    c.eval.interval = 3;
    c.eval.memorization_limit = 0;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
    return files;
}

int run_cli(const std::string& args, std::string* err = nullptr) {
    const auto err_file = fs::temp_directory_path() / "gazeseg_cli_stderr.txt";
    const std::string cmd = std::string(GAZESEG_CLI) + " " + args + " > /dev/null 2> " + err_file.string();
    const int status = std::system(cmd.c_str());
    if (err) *err = slurp(err_file);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("simulate writes a hashed manifest, reproducibly, and guards the output dir") {
    const auto dir = fresh_dir("simulate");
    const auto c = tiny_experiment(dir);
    cmd_simulate(c);
    const auto manifest = read_json(dir / "manifest.json");
    CHECK(manifest["images"].size() == 10);
    CHECK(manifest["split"]["train"].size() + manifest["split"]["test"].size() == 10);
    CHECK(fs::exists(dir / "data" / "fixations.csv"));
    const std::string first = slurp(dir / "manifest.json");

    CHECK_THROWS_AS(cmd_simulate(c), ValidationError);
    cmd_simulate(c, {.force = true});
    CHECK(slurp(dir / "manifest.json") == first);

    auto other = c;
    other.seed = 5;
    cmd_simulate(other, {.force = true});
    CHECK(slurp(dir / "manifest.json") != first);
}

TEST_CASE("masks: cache hits, invalidation, nesting, byte-identical recompute, failure report") {
    const auto dir = fresh_dir("masks");
    auto c = tiny_experiment(dir);
    cmd_simulate(c);
    const auto first = cmd_masks(c, {.jobs = 2});
    CHECK(first.heatmaps_computed == 10);
    CHECK(first.refinements_computed == 10);
    CHECK(first.failures.empty());

    const auto second = cmd_masks(c);
    CHECK(second.heatmaps_cached == 10);
    CHECK(second.heatmaps_computed == 0);
    CHECK(second.refinements_computed == 0);
    CHECK(second.masks_written == 0);

    const auto index = read_json(dir / "masks" / "index.json");
    for (const auto& [id, entry] : index["images"].items()) {
        PseudoMaskStack s{id, {}};
        for (int k = 0; k < 2; ++k) s.masks.push_back(read_mask_png(dir / "masks" / (id + ".level" + std::to_string(k) + ".png")));
        CHECK(is_nested(s));
    }

    const auto before = snapshot_tree(dir / "masks");
    const auto cache_before = snapshot_tree(dir / "cache");
    fs::remove_all(dir / "cache");
    fs::remove_all(dir / "masks");
    cmd_masks(c);
    CHECK(snapshot_tree(dir / "masks") == before);
    CHECK(snapshot_tree(dir / "cache") == cache_before);

    c.heatmap.sigma = 2.0;
    const auto changed = cmd_masks(c);
    CHECK(changed.heatmaps_computed == 10);
    CHECK(changed.refinements_computed == 10);
    c.crf.theta_beta = 20;
    const auto crf_only = cmd_masks(c);
    CHECK(crf_only.heatmaps_cached == 10);
    CHECK(crf_only.refinements_computed == 10);

    // drop one image's fixations
    const auto manifest = read_json(dir / "manifest.json");
    const std::string victim = manifest["images"][0]["id"];
    std::ifstream in(dir / "data" / "fixations.csv");
    std::ostringstream kept;
    for (std::string line; std::getline(in, line);)
        if (line.rfind(victim + ",", 0) != 0) kept << line << '\n';
    in.close();
    std::ofstream(dir / "data" / "fixations.csv") << kept.str();
    const auto partial = cmd_masks(c);
    REQUIRE(partial.failures.size() == 1);
    CHECK(partial.failures[0].image_id == victim);
    CHECK(partial.images - int(partial.failures.size()) == 9);
    CHECK(read_json(dir / "masks" / "report.json")["failures"].size() == 1);
}

TEST_CASE("train, eval, plot on a tiny experiment") {
    const auto dir = fresh_dir("train");
    auto c = tiny_experiment(dir);
    c.runs = 2;
    cmd_simulate(c);
    cmd_masks(c);
    const auto summary = cmd_train(c);
    REQUIRE(summary.run_dirs.size() == 2);
    const auto run0 = dir / "runs" / "main" / "seed0";
    CHECK(fs::exists(run0 / "config.ini"));
    CHECK(fs::exists(run0 / "checkpoint.bin"));
    CHECK(read_step_log(run0 / "runlog.jsonl").size() == std::size_t(c.train.iters * c.train.m));
    CHECK(read_eval_log(run0 / "evallog.jsonl").size() == 2);

    SUBCASE("stored snapshot reproduces the run log") {
        auto snap = load_config(run0 / "config.ini");
        CHECK(snap.first_run == 0);
        CHECK(snap.runs == 1);
        cmd_train(snap, {.name = "again"});
        CHECK(slurp(dir / "runs" / "again" / "seed0" / "runlog.jsonl") == slurp(run0 / "runlog.jsonl"));
        CHECK(slurp(dir / "runs" / "again" / "seed0" / "evallog.jsonl") == slurp(run0 / "evallog.jsonl"));
    }
    SUBCASE("interrupted then resumed equals uninterrupted") {
        auto one = c;
        one.runs = 1;
        const auto stopped = cmd_train(one, {.name = "cut", .stop_after = 4});
        CHECK(stopped.interrupted);
        CHECK_THROWS_AS(cmd_train(one, {.name = "cut"}), ValidationError);
        cmd_train(one, {.name = "cut", .resume = true});
        const auto cut = dir / "runs" / "cut" / "seed0";
        CHECK(slurp(cut / "runlog.jsonl") == slurp(run0 / "runlog.jsonl"));
        CHECK(slurp(cut / "checkpoint.bin") == slurp(run0 / "checkpoint.bin"));
    }
    SUBCASE("interrupt flag checkpoints and stops") {
        auto one = c;
        one.runs = 1;
        std::atomic<bool> stop{true};
        const auto s = cmd_train(one, {.name = "sig", .interrupt = &stop});
        CHECK(s.interrupted);
        CHECK(fs::exists(dir / "runs" / "sig" / "seed0" / "checkpoint.bin"));
    }
    SUBCASE("eval reports levels + ensemble, aggregates seeds, reproduces") {
        const auto single = cmd_eval(run0);
        CHECK(single.runs.size() == 1);
        const auto report = read_json(run0 / "report.json");
        CHECK(report["level_dice"].size() == 2);
        CHECK(report.contains("ensemble_dice"));
        const auto text = slurp(run0 / "report.txt");
        CHECK(text.find("level0") != std::string::npos);
        CHECK(text.find("level1") != std::string::npos);
        CHECK(text.find("ensemble") != std::string::npos);

        const auto both = cmd_eval(dir / "runs" / "main", 2);
        CHECK(both.runs.size() == 2);
        const auto s = read_json(dir / "runs" / "main" / "summary.json");
        CHECK(s["ensemble_dice"].contains("mean"));
        CHECK(s["ensemble_dice"].contains("std"));
        CHECK(s["level_dice"].size() == 2);
        const auto again = cmd_eval(dir / "runs" / "main", 2);
        CHECK(again.ensemble_dice.mean == both.ensemble_dice.mean);
        CHECK(again.ensemble_dice.std == both.ensemble_dice.std);
        CHECK_THROWS(cmd_eval(dir / "runs" / "main", 3));
        CHECK_THROWS(cmd_eval(dir / "data"));
    }
    SUBCASE("plots: one point per eval, tables match the logs") {
        cmd_eval(dir / "runs" / "main", 2);
        const auto p = cmd_plot(dir / "runs");
        CHECK_FALSE(p.files.empty());
        const auto evals = read_eval_log(run0 / "evallog.jsonl");
        std::ifstream tsv(dir / "runs" / "plots" / "main_seed0.memorization.tsv");
        std::string line;
        std::getline(tsv, line);
        std::vector<std::pair<int, double>> overfitting;
        while (std::getline(tsv, line)) {
            std::istringstream row(line);
            std::string series, x, v;
            std::getline(row, series, '\t');
            std::getline(row, x, '\t');
            std::getline(row, v, '\t');
            if (series == "overfitting") overfitting.emplace_back(std::stoi(x), std::stod(v));
        }
        REQUIRE(overfitting.size() == evals.size());
        for (std::size_t k = 0; k < evals.size(); ++k) {
            CHECK(overfitting[k].first == evals[k].iter);
            CHECK(overfitting[k].second == doctest::Approx(*evals[k].overfitting).epsilon(1e-5));
        }
        const auto svg = slurp(dir / "runs" / "plots" / "main_seed0.loss.svg");
        CHECK(svg.rfind("<svg", 0) == 0);
    }
}

TEST_CASE("plot errors and warnings") {
    const auto empty = fresh_dir("plot_empty");
    fs::create_directories(empty);
    CHECK_THROWS_WITH(cmd_plot(empty), doctest::Contains("no training logs"));
    const auto sparse = fresh_dir("plot_sparse");
    fs::create_directories(sparse / "r");
    std::ofstream(sparse / "r" / "runlog.jsonl")
        << R"({"iter":1,"level":0,"ce_loss":0.5,"cons_loss":-0.2,"total_loss":-0.1})" << '\n';
    const auto p = cmd_plot(sparse);
    CHECK(p.warnings.size() == 2);  // no memorization, no test Dice
    CHECK(fs::exists(sparse / "plots" / "r.loss.svg"));
}

TEST_CASE("dry run checks the full-size recipe without data") {
    auto c = full_scale_config();
    c.dataset.images_dir = "/nonexistent/images";
    c.dataset.fixations = "/nonexistent/fixations.csv";
    const auto report = dry_run(c);
    for (const auto& r : report.recipe) CHECK(r.ok);
    CHECK_FALSE(report.ok());  // the data paths do not exist
    bool forward_ran = false;
    for (const auto& n : report.notes) forward_ran |= n.find("forward pass 224x224") != std::string::npos;
    CHECK(forward_ran);
}

TEST_CASE("file datasets: import, resize, screen-frame fixations") {
    const auto src = fresh_dir("files_src");
    fs::create_directories(src / "images");
    fs::create_directories(src / "gt");
    std::ofstream fix(src / "fix.csv");
    fix << "image_id,x,y,onset_ms,duration_ms\n";
    for (int i = 0; i < 5; ++i) {
        Grid<std::uint8_t> img = Grid<std::uint8_t>::Constant(32, 48, 40);
        Mask gt = Mask::Zero(32, 48);
        img.block(8, 12, 16, 20).setConstant(200);
        gt.block(8, 12, 16, 20).setOnes();
        const std::string id = "case" + std::to_string(i);
        write_gray_png(src / "images" / (id + ".png"), img);
        write_mask_png(src / "gt" / (id + ".png"), gt);
        // screen frame: 48x32 image shown at 480x320 with offset (100, 50)
        for (int k = 0; k < 6; ++k) fix << id << ',' << 100 + (14 + 3 * k) * 10 << ',' << 50 + (10 + 2 * (k % 3)) * 10 << ',' << 100 * k << ",200\n";
    }
    fix.close();
    std::ofstream(src / "geometry.ini") << "screen_w=800\nscreen_h=600\nimage_display_w=480\nimage_display_h=320\noffset_x=100\noffset_y=50\n";

    const auto dir = fresh_dir("files_exp");
    auto c = tiny_experiment(dir);
    c.dataset.source = DatasetSource::files;
    c.dataset.images_dir = src / "images";
    c.dataset.gt_dir = src / "gt";
    c.dataset.fixations = src / "fix.csv";
    c.dataset.geometry = src / "geometry.ini";
    c.dataset.resize = 16;
    CHECK_THROWS_AS(cmd_simulate(c), ValidationError);
    const auto m = cmd_masks(c);
    CHECK(m.images == 5);
    CHECK(m.failures.empty());
    const auto img = read_gray_png(dir / "data" / "images" / "case0.png");
    CHECK(img.rows() == 16);
    CHECK(img.cols() == 16);
    const auto data = load_experiment_data(c);
    CHECK(data.train.size() + data.test.size() == 5);
    REQUIRE(data.test[0].gt);
    CHECK(data.test[0].gt->rows() == 16);
}

TEST_CASE("binary: JSON errors and exit codes") {
    std::string err;
    CHECK(run_cli("eval /nonexistent/run", &err) == 1);
    const auto e = json::parse(err.substr(err.find('{')));
    CHECK(e["error"]["command"] == "eval");
    CHECK(e["error"].contains("message"));
    CHECK(run_cli("bogus", &err) == 2);
    CHECK(json::parse(err)["error"]["type"] == "usage");
    const auto dir = fresh_dir("binary");
    CHECK(run_cli("-q -o " + dir.string() + " --set dataset.n_images=4 --set dataset.image_size=16 simulate") == 0);
    CHECK(run_cli("-q -o " + dir.string() + " simulate", &err) == 2);
    CHECK(json::parse(err)["error"]["type"] == "invalid");
    CHECK(run_cli("-q -o " + dir.string() + " --set train.lambda=x train", &err) == 2);
}
