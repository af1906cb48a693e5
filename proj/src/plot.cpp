#include "gazeseg/experiment.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace gazeseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string num(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

/// Minimal line chart; markers only when a series has few points.
std::string svg_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series) {
    constexpr double W = 640, H = 400, L = 70, R = 150, T = 40, B = 50;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            if (!std::isfinite(y)) continue;
            x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
        }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x0 -= 1, x1 += 1;
    if (y1 == y0) y0 -= 0.5, y1 += 0.5;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad, y1 += pad;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
        s << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n"
          << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << num(yv) << "</text>\n"
          << "<line x1=\"" << L << "\" y1=\"" << py(yv) << "\" x2=\"" << W - R << "\" y2=\"" << py(yv)
          << "\" stroke=\"#ddd\"/>\n";
    }
    s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << x_label << "</text>\n"
      << "<text transform=\"translate(16," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << y_label
      << "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = kPalette[i % std::size(kPalette)];
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (auto [x, y] : series[i].points)
            if (std::isfinite(y)) s << px(x) << ',' << py(y) << ' ';
        s << "\"/>\n";
        if (series[i].points.size() <= 12)
            for (auto [x, y] : series[i].points)
                if (std::isfinite(y)) s << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        const double ly = T + 16 * double(i);
        s << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
          << "<text x=\"" << W - R + 34 << "\" y=\"" << ly + 4 << "\">" << series[i].label << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

std::string tsv(const std::vector<Series>& series, const std::string& x_name) {
    std::ostringstream s;
    s << "series\t" << x_name << "\tvalue\n";
    for (const auto& ser : series)
        for (auto [x, y] : ser.points) s << ser.label << '\t' << num(x) << '\t' << num(y) << '\n';
    return s.str();
}

// Runs are directories holding runlog.jsonl; named after their path below dir.
std::vector<fs::path> find_runs(const fs::path& dir) {
    std::vector<fs::path> runs;
    if (fs::exists(dir / "runlog.jsonl")) runs.push_back(dir);
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() == "runlog.jsonl" && e.path().parent_path() != dir)
            runs.push_back(e.path().parent_path());
    std::sort(runs.begin(), runs.end());
    return runs;
}

std::string run_label(const fs::path& run, const fs::path& dir) {
    auto rel = fs::relative(run, dir).generic_string();
    if (rel == ".") rel = run.filename().string();
    std::replace(rel.begin(), rel.end(), '/', '_');
    return rel;
}

}  // namespace

PlotSummary cmd_plot(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("plot: " + dir.string() + " is not a directory");
    const auto runs = find_runs(dir);
    if (runs.empty()) throw std::runtime_error("plot: no training logs (runlog.jsonl) under " + dir.string());
    PlotSummary summary;
    const fs::path out_dir = dir / "plots";
    fs::create_directories(out_dir);
    auto emit = [&](const std::string& stem, const std::string& svg, const std::string& table) {
        std::ofstream(out_dir / (stem + ".svg")) << svg;
        std::ofstream(out_dir / (stem + ".tsv")) << table;
        summary.files.push_back(out_dir / (stem + ".svg"));
        summary.files.push_back(out_dir / (stem + ".tsv"));
    };
    auto warn = [&](std::string w) {
        spdlog::warn("{}", w);
        summary.warnings.push_back(std::move(w));
    };

    for (const auto& run : runs) {
        const std::string label = run_label(run, dir);
        const auto steps = read_step_log(run / "runlog.jsonl");
        if (steps.empty()) {
            warn(label + ": empty training log, no loss curve");
        } else {
            std::map<int, Series> total, cons;
            for (const auto& r : steps) {
                total[r.level].label = "level " + std::to_string(r.level) + " total";
                total[r.level].points.emplace_back(r.iter, r.total_loss);
                cons[r.level].label = "level " + std::to_string(r.level) + " consistency";
                cons[r.level].points.emplace_back(r.iter, r.cons_loss);
            }
            std::vector<Series> series;
            for (auto& [_, s] : total) series.push_back(std::move(s));
            for (auto& [_, s] : cons) series.push_back(std::move(s));
            emit(label + ".loss", svg_chart(label + ": training loss", "iteration", "loss", series), tsv(series, "iter"));
        }

        const auto evals = fs::exists(run / "evallog.jsonl") ? read_eval_log(run / "evallog.jsonl") : std::vector<EvalRecord>{};
        Series el{"early learning", {}}, of{"overfitting", {}}, ens{"ensemble Dice", {}};
        for (const auto& e : evals) {
            ens.points.emplace_back(e.iter, e.ensemble_dice);
            if (e.early_learning) el.points.emplace_back(e.iter, *e.early_learning);
            if (e.overfitting) of.points.emplace_back(e.iter, *e.overfitting);
        }
        if (el.points.empty() && of.points.empty()) {
            warn(label + ": no memorization series (training images lack ground truth or no evals logged)");
        } else {
            std::vector<Series> series{el, of};
            emit(label + ".memorization", svg_chart(label + ": memorization", "iteration", "Dice on wrong pixels", series),
                 tsv(series, "iter"));
        }
        if (ens.points.empty()) {
            warn(label + ": no test Dice series");
        } else {
            std::vector<Series> series{ens};
            emit(label + ".dice", svg_chart(label + ": test Dice", "iteration", "Dice", series), tsv(series, "iter"));
        }
    }

    // Sweeps over summary.json files (one per evaluated run group).
    std::map<int, Series> by_m;       // lambda sweep, one series per m
    std::map<double, Series> by_lam;  // m sweep, one series per lambda
    int summaries = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().filename() != "summary.json") continue;
        const json j = json::parse(std::ifstream(e.path()));
        if (!j.contains("lambda") || !j.contains("m")) continue;
        ++summaries;
        const double lam = j["lambda"], dice = j["ensemble_dice"]["mean"];
        const int m = j["m"];
        by_m[m].label = "m = " + std::to_string(m);
        by_m[m].points.emplace_back(lam, dice);
        by_lam[lam].label = "lambda = " + num(lam);
        by_lam[lam].points.emplace_back(m, dice);
    }
    auto sorted = [](std::map<auto, Series>& groups) {
        std::vector<Series> out;
        for (auto& [_, s] : groups) {
            std::sort(s.points.begin(), s.points.end());
            out.push_back(std::move(s));
        }
        return out;
    };
    if (summaries > 1) {
        auto lam_series = sorted(by_m);
        auto m_series = sorted(by_lam);
        emit("sweep_lambda", svg_chart("test Dice vs lambda", "lambda", "ensemble Dice", lam_series), tsv(lam_series, "lambda"));
        emit("sweep_m", svg_chart("test Dice vs m", "m", "ensemble Dice", m_series), tsv(m_series, "m"));
    } else if (runs.size() > 1) {
        warn("no sweep charts: fewer than two evaluated run groups (run 'eval' on each group first)");
    }
    return summary;
}

}  // namespace gazeseg
