#include "gazeseg/gaze_data.hpp"

#include "gazeseg/seeds.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <unordered_map>

namespace gazeseg {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

double parse_number(std::string_view field, std::size_t line, const char* name) {
    double v = 0;
    if (!field.empty() && field.front() == '+') field.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || ec != std::errc() || ptr != field.data() + field.size())
        throw ParseError(line, std::string("field '") + name + "' is not a number: '" +
                                   std::string(field) + "'");
    if (!std::isfinite(v)) throw ParseError(line, std::string("field '") + name + "' is not finite");
    return v;
}

constexpr std::string_view kHeader = "image_id,x,y,onset_ms,duration_ms";

std::string shortest(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace

void GazeSequence::validate() const {
    require(width > 0 && height > 0, "gaze sequence '" + image_id + "': extent must be positive");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        require(std::isfinite(s.x) && std::isfinite(s.y), "gaze sample position must be finite");
        require(s.onset >= 0, "gaze sample onset must be non-negative");
        require(s.duration >= 0, "gaze sample duration must be non-negative");
        require(i == 0 || samples[i - 1].onset <= s.onset, "gaze samples must be ordered by onset");
    }
}

void DisplayGeometry::validate() const {
    require(screen_w > 0 && screen_h > 0, "screen extent must be positive");
    require(image_display_w > 0 && image_display_h > 0, "displayed image extent must be positive");
    require(image_offset_x >= 0 && image_offset_y >= 0 &&
                image_offset_x + image_display_w <= screen_w &&
                image_offset_y + image_display_h <= screen_h,
            "displayed image must fit inside the screen");
}

DisplayGeometry DisplayGeometry::centered(int screen_w, int screen_h, int display_w, int display_h) {
    DisplayGeometry g{screen_w, screen_h, display_w, display_h,
                      (screen_w - display_w) / 2.0, (screen_h - display_h) / 2.0};
    g.validate();
    return g;
}

Point2 screen_to_image(const DisplayGeometry& g, const ImageExtent& e, Point2 p) {
    const double sx = double(e.width) / g.image_display_w;
    const double sy = double(e.height) / g.image_display_h;
    return {(p.x - g.image_offset_x) * sx, (p.y - g.image_offset_y) * sy};
}

Point2 image_to_screen(const DisplayGeometry& g, const ImageExtent& e, Point2 p) {
    const double sx = double(g.image_display_w) / e.width;
    const double sy = double(g.image_display_h) / e.height;
    return {p.x * sx + g.image_offset_x, p.y * sy + g.image_offset_y};
}

DisplayGeometry parse_geometry(std::istream& in) {
    std::map<std::string, double> kv;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        auto line = trim(raw);
        if (line.empty() || line.front() == '#' || line.front() == '[') continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError(line_no, "expected key = value");
        auto key = std::string(trim(line.substr(0, eq)));
        kv[key] = parse_number(trim(line.substr(eq + 1)), line_no, key.c_str());
    }
    auto get = [&](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw ValidationError(std::string("geometry key missing: ") + key);
        return it->second;
    };
    DisplayGeometry g{int(get("screen_w")),        int(get("screen_h")),
                      int(get("image_display_w")), int(get("image_display_h")),
                      get("offset_x"),             get("offset_y")};
    g.validate();
    return g;
}

FixationParseResult parse_fixation_file(std::istream& in, const std::optional<DisplayGeometry>& geometry,
                                        const ExtentLookup& extent_of) {
    if (geometry) geometry->validate();

    struct Row {
        GazeSample sample;
        std::size_t line;
    };
    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<Row>> rows;

    std::string raw;
    std::size_t line_no = 0;
    bool seen_header = false;
    while (std::getline(in, raw)) {
        ++line_no;
        auto line = trim(raw);
        if (line.empty()) continue;
        if (!seen_header) {
            std::string compact;
            for (auto f : split_commas(line)) (compact += f) += ',';
            compact.pop_back();
            if (compact != kHeader)
                throw ParseError(line_no, "expected header '" + std::string(kHeader) + "'");
            seen_header = true;
            continue;
        }
        auto fields = split_commas(line);
        if (fields.size() != 5)
            throw ParseError(line_no, "expected 5 columns, found " + std::to_string(fields.size()));
        if (fields[0].empty()) throw ParseError(line_no, "empty image_id");
        GazeSample s{parse_number(fields[1], line_no, "x"), parse_number(fields[2], line_no, "y"),
                     parse_number(fields[3], line_no, "onset_ms"),
                     parse_number(fields[4], line_no, "duration_ms")};
        if (s.duration < 0)
            throw ValidationError("line " + std::to_string(line_no) + ": negative duration");
        if (s.onset < 0) throw ValidationError("line " + std::to_string(line_no) + ": negative onset");
        std::string id(fields[0]);
        auto [it, inserted] = rows.try_emplace(id);
        if (inserted) order.push_back(id);
        it->second.push_back({s, line_no});
    }

    FixationParseResult result;
    for (const auto& id : order) {
        auto& recs = rows[id];
        std::stable_sort(recs.begin(), recs.end(),
                         [](const Row& a, const Row& b) { return a.sample.onset < b.sample.onset; });

        std::optional<ImageExtent> extent = extent_of ? extent_of(id) : std::nullopt;
        if (!extent && geometry) extent = ImageExtent{geometry->image_display_w, geometry->image_display_h};

        GazeSequence seq;
        seq.image_id = id;
        for (auto& r : recs) {
            if (geometry) {
                auto p = screen_to_image(*geometry, *extent, {r.sample.x, r.sample.y});
                r.sample.x = p.x;
                r.sample.y = p.y;
            }
        }
        if (!extent) {
            double mx = 0, my = 0;
            for (const auto& r : recs) {
                mx = std::max(mx, r.sample.x);
                my = std::max(my, r.sample.y);
            }
            extent = ImageExtent{int(std::floor(mx)) + 1, int(std::floor(my)) + 1};
        }
        seq.width = extent->width;
        seq.height = extent->height;
        for (auto& r : recs) {
            const double cx = std::clamp(r.sample.x, 0.0, double(seq.width - 1));
            const double cy = std::clamp(r.sample.y, 0.0, double(seq.height - 1));
            if (cx != r.sample.x || cy != r.sample.y) {
                result.clamped.push_back({id, r.line, r.sample.x, r.sample.y});
                r.sample.x = cx;
                r.sample.y = cy;
            }
            seq.samples.push_back(r.sample);
        }
        seq.validate();
        result.sequences.push_back(std::move(seq));
    }
    return result;
}

void write_fixation_file(std::ostream& out, std::span<const GazeSequence> sequences) {
    out << kHeader << '\n';
    for (const auto& seq : sequences)
        for (const auto& s : seq.samples)
            out << seq.image_id << ',' << shortest(s.x) << ',' << shortest(s.y) << ','
                << shortest(s.onset) << ',' << shortest(s.duration) << '\n';
}

void SimulatorConfig::validate() const {
    require(n_scan_fixations >= 0 && n_cover_fixations >= 0, "fixation counts must be non-negative");
    require(jitter_sigma >= 0, "jitter_sigma must be non-negative");
    require(distractor_rate >= 0 && distractor_rate <= 1, "distractor_rate must lie in [0, 1]");
}

Mask erode(const Mask& mask, int radius) {
    if (radius <= 0) return mask;
    const int h = int(mask.rows()), w = int(mask.cols());
    Mask out = Mask::Zero(h, w);
    const int r2 = radius * radius;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask(y, x)) continue;
            bool keep = true;
            for (int dy = -radius; dy <= radius && keep; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    if (dx * dx + dy * dy > r2) continue;
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w || !mask(yy, xx)) {
                        keep = false;
                        break;
                    }
                }
            out(y, x) = keep;
        }
    return out;
}

GazeSequence simulate_gaze(const Mask& gt, const SimulatorConfig& config, std::string image_id) {
    config.validate();
    const int h = int(gt.rows()), w = int(gt.cols());

    using Pixel = std::pair<int, int>;  // (x, y)
    std::vector<Pixel> fg, bg;
    double cx = 0, cy = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (gt(y, x)) {
                fg.emplace_back(x, y);
                cx += x;
                cy += y;
            } else {
                bg.emplace_back(x, y);
            }
        }
    if (fg.empty()) throw ValidationError("no target to annotate");
    cx /= double(fg.size());
    cy /= double(fg.size());

    // Central band from erosion at a third of the equivalent-disk radius.
    const double equiv_radius = std::sqrt(double(fg.size()) / M_PI);
    const Mask core = erode(gt, std::max(1, int(std::lround(equiv_radius / 3))));
    std::vector<Pixel> central, boundary;
    for (auto [x, y] : fg) (core(y, x) ? central : boundary).emplace_back(x, y);
    if (central.empty()) central = fg;
    if (boundary.empty()) boundary = central;

    // Scan targets: the quarter of the foreground nearest the centroid.
    std::vector<Pixel> near = fg;
    std::stable_sort(near.begin(), near.end(), [&](const Pixel& a, const Pixel& b) {
        auto d = [&](const Pixel& p) { return (p.first - cx) * (p.first - cx) + (p.second - cy) * (p.second - cy); };
        return d(a) < d(b);
    });
    near.resize(std::max<std::size_t>(1, near.size() / 4));

    const int total = config.n_scan_fixations + config.n_cover_fixations;
    const int n_distract = int(std::lround(config.distractor_rate * total));
    if (n_distract > 0 && bg.empty()) throw ValidationError("no background available for distractor fixations");
    const int n_central = int(std::lround(0.6 * config.n_cover_fixations));

    Rng rng(config.seed);
    std::vector<int> slots(total);
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    std::vector<bool> distract(total, false);
    for (int k = 0; k < n_distract; ++k) distract[slots[k]] = true;

    auto pick = [&](const std::vector<Pixel>& pool) {
        std::uniform_int_distribution<std::size_t> u(0, pool.size() - 1);
        return pool[u(rng)];
    };
    std::normal_distribution<double> jitter(0.0, 1.0);
    std::uniform_real_distribution<double> duration(150.0, 450.0);
    std::uniform_real_distribution<double> saccade(20.0, 60.0);

    GazeSequence seq;
    seq.image_id = std::move(image_id);
    seq.width = w;
    seq.height = h;
    double t = 0;
    for (int s = 0; s < total; ++s) {
        GazeSample g;
        if (distract[s]) {
            auto [x, y] = pick(bg);
            g.x = x;
            g.y = y;
        } else {
            const auto& pool = s < config.n_scan_fixations                   ? near
                               : s - config.n_scan_fixations < n_central ? central
                                                                             : boundary;
            auto [x, y] = pick(pool);
            g.x = x;
            g.y = y;
            if (config.jitter_sigma > 0) {
                g.x = std::clamp(g.x + config.jitter_sigma * jitter(rng), 0.0, double(w - 1));
                g.y = std::clamp(g.y + config.jitter_sigma * jitter(rng), 0.0, double(h - 1));
            }
        }
        g.onset = t;
        g.duration = std::round(duration(rng));
        t += g.duration + std::round(saccade(rng));
        seq.samples.push_back(g);
    }
    return seq;
}

}  // namespace gazeseg
