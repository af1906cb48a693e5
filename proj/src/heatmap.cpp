#include "gazeseg/heatmap.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace gazeseg {

Weighting parse_weighting(const std::string& name) {
    if (name == "uniform") return Weighting::uniform;
    if (name == "duration") return Weighting::duration;
    throw ValidationError("unknown heatmap weighting '" + name + "'");
}

std::string to_string(Weighting w) { return w == Weighting::uniform ? "uniform" : "duration"; }

Grid<double> splat_field(const GazeSequence& seq, double sigma, Weighting weighting) {
    require(sigma > 0, "sigma must be positive");
    seq.validate();
    Grid<double> field = Grid<double>::Zero(seq.height, seq.width);
    const double radius = kSplatRadiusSigmas * sigma;
    const double r2max = radius * radius;
    const double inv2s2 = 1.0 / (2 * sigma * sigma);
    for (const auto& s : seq.samples) {
        const double weight = weighting == Weighting::duration ? s.duration : 1.0;
        if (weight == 0) continue;
        const int y0 = std::max(0, int(std::ceil(s.y - radius)));
        const int y1 = std::min(seq.height - 1, int(std::floor(s.y + radius)));
        const int x0 = std::max(0, int(std::ceil(s.x - radius)));
        const int x1 = std::min(seq.width - 1, int(std::floor(s.x + radius)));
        for (int y = y0; y <= y1; ++y) {
            const double dy = y - s.y;
            for (int x = x0; x <= x1; ++x) {
                const double dx = x - s.x;
                const double d2 = dx * dx + dy * dy;
                if (d2 <= r2max) field(y, x) += weight * std::exp(-d2 * inv2s2);
            }
        }
    }
    return field;
}

AttentionHeatmap render_heatmap(const GazeSequence& seq, double sigma, Weighting weighting) {
    if (seq.samples.empty()) throw ValidationError("no gaze data");
    Grid<double> field = splat_field(seq, sigma, weighting);
    const double peak = field.maxCoeff();
    if (!(peak > 0)) throw ValidationError("gaze data carries zero total weight inside the image");
    return {field / peak};
}

namespace {

constexpr std::array<char, 8> kMagic{'G', 'Z', 'H', 'E', 'A', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little, "heatmap files assume a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

}  // namespace

void write_heatmap(std::ostream& out, const AttentionHeatmap& h) {
    out.write(kMagic.data(), kMagic.size());
    put_u32(out, std::uint32_t(h.width()));
    put_u32(out, std::uint32_t(h.height()));
    Grid<float> f = h.values.cast<float>();
    out.write(reinterpret_cast<const char*>(f.data()), std::streamsize(f.size() * sizeof(float)));
}

AttentionHeatmap read_heatmap(std::istream& in) {
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw ValidationError("not a heatmap file (bad magic)");
    const auto w = get_u32(in), h = get_u32(in);
    if (!in || w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16))
        throw ValidationError("heatmap file has an invalid extent");
    Grid<float> f(h, w);
    in.read(reinterpret_cast<char*>(f.data()), std::streamsize(f.size() * sizeof(float)));
    if (!in) throw ValidationError("heatmap file is truncated");
    return {f.cast<double>()};
}

void save_heatmap(const std::filesystem::path& path, const AttentionHeatmap& h) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_heatmap(out, h);
}

AttentionHeatmap load_heatmap(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return read_heatmap(in);
}

AttentionHeatmap quantize_to_float(const AttentionHeatmap& h) {
    return {h.values.cast<float>().cast<double>()};
}

}  // namespace gazeseg
