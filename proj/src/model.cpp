#include "gazeseg/model.hpp"

#include "gazeseg/container.hpp"
#include "gazeseg/seeds.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace gazeseg {

void ModelConfig::validate() const {
    require(depth >= 1, "model depth must be at least 1");
    require(depth <= 8, "model depth must be at most 8");
    require(base_channels >= 1 && feature_dim >= 1 && in_channels >= 1, "model channel counts must be positive");
}

// ---------------------------------------------------------------------------
// Classifier

template <typename Scalar>
Matrix<Scalar> Classifier<Scalar>::logits(const FeatureMap<Scalar>& phi) const {
    if (phi.channels() != weight.cols()) throw ShapeError("classifier expects " + std::to_string(weight.cols()) + " channels");
    Matrix<Scalar> z = weight * phi.values;
    z.colwise() += bias.col(0);
    return z;
}

template <typename Scalar>
ProbabilityMap<Scalar> softmax_columns(const Matrix<Scalar>& z, int height, int width) {
    ProbabilityMap<Scalar> p(height, width, 2);
    for (Eigen::Index q = 0; q < z.cols(); ++q) {
        const Scalar fg = Scalar(1) / (Scalar(1) + std::exp(z(0, q) - z(1, q)));
        p.values(1, q) = fg;
        p.values(0, q) = Scalar(1) - fg;
    }
    return p;
}

template <typename Scalar>
ProbabilityMap<Scalar> Classifier<Scalar>::operator()(const FeatureMap<Scalar>& phi) const {
    return softmax_columns<Scalar>(logits(phi), phi.height, phi.width);
}

template <typename Scalar>
FeatureMap<Scalar> Classifier<Scalar>::backward(const FeatureMap<Scalar>& phi, const Matrix<Scalar>& dlogits,
                                                 Classifier& grad) const {
    grad.weight.noalias() += dlogits * phi.values.transpose();
    grad.bias.col(0) += dlogits.rowwise().sum();
    return FeatureMap<Scalar>(phi.height, phi.width, weight.transpose() * dlogits);
}

// ---------------------------------------------------------------------------
// Parameters

template <typename Scalar>
NetworkParameters<Scalar> NetworkParameters<Scalar>::zeros_like() const {
    NetworkParameters z;
    for (const auto& t : conv) z.conv.push_back(Matrix<Scalar>::Zero(t.rows(), t.cols()));
    z.head.weight = Matrix<Scalar>::Zero(head.weight.rows(), head.weight.cols());
    z.head.bias = Matrix<Scalar>::Zero(head.bias.rows(), head.bias.cols());
    return z;
}

template <typename Scalar>
std::size_t NetworkParameters<Scalar>::scalar_count() const {
    std::size_t n = 0;
    for_each([&](const auto& t) { n += std::size_t(t.size()); });
    return n;
}

// ---------------------------------------------------------------------------
// Layer kernels

namespace {

/// Column p holds the 3x3 neighbourhood of pixel p, tap-major with the
/// channels of each tap contiguous; out-of-image taps are zero.
template <typename Scalar>
void im2col(const Matrix<Scalar>& in, int h, int w, Matrix<Scalar>& cols) {
    const Eigen::Index c = in.rows();
    cols.resize(9 * c, Eigen::Index(h) * w);
    Scalar* dst = cols.data();
    const Scalar* src = in.data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ky = -1; ky <= 1; ++ky)
                for (int kx = -1; kx <= 1; ++kx, dst += c) {
                    const int yy = y + ky, xx = x + kx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w)
                        std::fill_n(dst, c, Scalar(0));
                    else
                        std::copy_n(src + (Eigen::Index(yy) * w + xx) * c, c, dst);
                }
}

template <typename Scalar>
Matrix<Scalar> col2im(const Matrix<Scalar>& cols, Eigen::Index c, int h, int w) {
    Matrix<Scalar> out = Matrix<Scalar>::Zero(c, Eigen::Index(h) * w);
    const Scalar* src = cols.data();
    Scalar* dst = out.data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ky = -1; ky <= 1; ++ky)
                for (int kx = -1; kx <= 1; ++kx, src += c) {
                    const int yy = y + ky, xx = x + kx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    Scalar* d = dst + (Eigen::Index(yy) * w + xx) * c;
                    for (Eigen::Index k = 0; k < c; ++k) d[k] += src[k];
                }
    return out;
}

template <typename Scalar>
Matrix<Scalar> maxpool(const Matrix<Scalar>& in, int h, int w, std::vector<Eigen::Index>& argmax) {
    const int ho = h / 2, wo = w / 2;
    const Eigen::Index c = in.rows();
    Matrix<Scalar> out(c, Eigen::Index(ho) * wo);
    argmax.resize(std::size_t(out.size()));
    for (int y = 0; y < ho; ++y)
        for (int x = 0; x < wo; ++x) {
            const Eigen::Index po = Eigen::Index(y) * wo + x;
            const Eigen::Index taps[4] = {Eigen::Index(2 * y) * w + 2 * x, Eigen::Index(2 * y) * w + 2 * x + 1,
                                          Eigen::Index(2 * y + 1) * w + 2 * x, Eigen::Index(2 * y + 1) * w + 2 * x + 1};
            for (Eigen::Index k = 0; k < c; ++k) {
                Eigen::Index best = taps[0];
                for (int t = 1; t < 4; ++t)
                    if (in(k, taps[t]) > in(k, best)) best = taps[t];
                out(k, po) = in(k, best);
                argmax[std::size_t(po * c + k)] = best;
            }
        }
    return out;
}

template <typename Scalar>
Matrix<Scalar> maxpool_backward(const Matrix<Scalar>& dout, const std::vector<Eigen::Index>& argmax, Eigen::Index n_in) {
    const Eigen::Index c = dout.rows();
    Matrix<Scalar> din = Matrix<Scalar>::Zero(c, n_in);
    for (Eigen::Index po = 0; po < dout.cols(); ++po)
        for (Eigen::Index k = 0; k < c; ++k) din(k, argmax[std::size_t(po * c + k)]) += dout(k, po);
    return din;
}

template <typename Scalar>
Matrix<Scalar> upsample(const Matrix<Scalar>& in, int h, int w) {
    Matrix<Scalar> out(in.rows(), Eigen::Index(4) * h * w);
    for (int y = 0; y < 2 * h; ++y)
        for (int x = 0; x < 2 * w; ++x) out.col(Eigen::Index(y) * 2 * w + x) = in.col(Eigen::Index(y / 2) * w + x / 2);
    return out;
}

template <typename Scalar>
Matrix<Scalar> upsample_backward(const Matrix<Scalar>& dout, int h, int w) {
    Matrix<Scalar> din = Matrix<Scalar>::Zero(dout.rows(), Eigen::Index(h) * w);
    for (int y = 0; y < 2 * h; ++y)
        for (int x = 0; x < 2 * w; ++x) din.col(Eigen::Index(y / 2) * w + x / 2) += dout.col(Eigen::Index(y) * 2 * w + x);
    return din;
}

template <typename Scalar>
void conv_forward(const Matrix<Scalar>& in, int h, int w, const Matrix<Scalar>& weight, const Matrix<Scalar>& bias,
                  typename LevelNetwork<Scalar>::ConvCache& cache) {
    im2col(in, h, w, cache.columns);
    cache.output.noalias() = weight * cache.columns;
    cache.output.colwise() += bias.col(0);
    cache.output = cache.output.cwiseMax(Scalar(0));
}

template <typename Scalar>
Matrix<Scalar> conv_backward(const typename LevelNetwork<Scalar>::ConvCache& cache, const Matrix<Scalar>& dout,
                             int h, int w, const Matrix<Scalar>& weight, Matrix<Scalar>& dweight,
                             Matrix<Scalar>& dbias, bool need_input_grad) {
    const Matrix<Scalar> dpre = (cache.output.array() > Scalar(0)).select(dout, Scalar(0));
    dweight.noalias() += dpre * cache.columns.transpose();
    dbias.col(0) += dpre.rowwise().sum();
    if (!need_input_grad) return {};
    const Matrix<Scalar> dcols = weight.transpose() * dpre;
    return col2im<Scalar>(dcols, weight.cols() / 9, h, w);
}

}  // namespace

// ---------------------------------------------------------------------------
// Network

template <typename Scalar>
LevelNetwork<Scalar>::LevelNetwork(const ModelConfig& config, std::uint64_t init_seed)
    : config_(config), init_seed_(init_seed) {
    config.validate();
    Rng rng(init_seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    auto add_conv = [&](int cin, int cout) {
        Matrix<Scalar> weight(cout, 9 * cin);
        const double scale = std::sqrt(2.0 / (9.0 * cin));
        for (Eigen::Index k = 0; k < weight.size(); ++k) weight.data()[k] = Scalar(scale * normal(rng));
        params_.conv.push_back(std::move(weight));
        params_.conv.push_back(Matrix<Scalar>::Zero(cout, 1));
    };
    auto channels = [&](int stage) { return config.base_channels << stage; };

    int cin = config.in_channels;
    for (int k = 0; k < config.depth; ++k) {
        add_conv(cin, channels(k));
        add_conv(channels(k), channels(k));
        cin = channels(k);
    }
    add_conv(cin, channels(config.depth));
    add_conv(channels(config.depth), channels(config.depth));
    for (int k = config.depth - 1; k >= 0; --k) {
        add_conv(channels(k + 1) + channels(k), channels(k));
        add_conv(channels(k), k == 0 ? config.feature_dim : channels(k));
    }

    params_.head.weight.resize(2, config.feature_dim);
    const double head_scale = std::sqrt(1.0 / config.feature_dim);
    for (Eigen::Index k = 0; k < params_.head.weight.size(); ++k)
        params_.head.weight.data()[k] = Scalar(head_scale * normal(rng));
    params_.head.bias = Matrix<Scalar>::Zero(2, 1);
}

template <typename Scalar>
FeatureMap<Scalar> LevelNetwork<Scalar>::features(const Grid<Scalar>& image, Trace* trace) const {
    const int d = config_.depth;
    int h = int(image.rows()), w = int(image.cols());
    if (h % config_.size_multiple() != 0 || w % config_.size_multiple() != 0 || h == 0 || w == 0)
        throw ShapeError("input " + std::to_string(h) + "x" + std::to_string(w) + " is not a multiple of " +
                         std::to_string(config_.size_multiple()));
    if (config_.in_channels != 1) throw ShapeError("features() takes single-channel images");

    Trace local;
    Trace& t = trace ? *trace : local;
    t.encoder.assign(std::size_t(d), {});
    t.pool_argmax.assign(std::size_t(d), {});
    t.decoder.assign(std::size_t(d), {});

    const auto& P = params_.conv;
    auto block = [&](const Matrix<Scalar>& in, std::size_t base, BlockCache& cache) {
        cache.height = h;
        cache.width = w;
        conv_forward<Scalar>(in, h, w, P[base], P[base + 1], cache.first);
        conv_forward<Scalar>(cache.first.output, h, w, P[base + 2], P[base + 3], cache.second);
        return &cache.second.output;
    };

    Matrix<Scalar> x = Eigen::Map<const Matrix<Scalar>>(image.data(), 1, image.size());
    for (int k = 0; k < d; ++k) {
        const Matrix<Scalar>* skip = block(x, std::size_t(4 * k), t.encoder[std::size_t(k)]);
        x = maxpool<Scalar>(*skip, h, w, t.pool_argmax[std::size_t(k)]);
        h /= 2;
        w /= 2;
    }
    x = *block(x, std::size_t(4 * d), t.bottleneck);
    for (int j = 0; j < d; ++j) {
        const int k = d - 1 - j;
        Matrix<Scalar> up = upsample<Scalar>(x, h, w);
        h *= 2;
        w *= 2;
        const auto& skip = t.encoder[std::size_t(k)].second.output;
        Matrix<Scalar> cat(skip.rows() + up.rows(), skip.cols());
        cat << skip, up;
        x = *block(cat, std::size_t(4 * (d + 1 + j)), t.decoder[std::size_t(j)]);
    }
    return FeatureMap<Scalar>(h, w, std::move(x));
}

template <typename Scalar>
void LevelNetwork<Scalar>::backward(const Trace& t, const FeatureMap<Scalar>& dphi, NetworkParameters<Scalar>& grad) const {
    const int d = config_.depth;
    const auto& P = params_.conv;
    auto& G = grad.conv;
    auto block_backward = [&](const BlockCache& cache, const Matrix<Scalar>& dout, std::size_t base, bool need_input) {
        Matrix<Scalar> dmid = conv_backward<Scalar>(cache.second, dout, cache.height, cache.width, P[base + 2],
                                                    G[base + 2], G[base + 3], true);
        return conv_backward<Scalar>(cache.first, dmid, cache.height, cache.width, P[base], G[base], G[base + 1],
                                     need_input);
    };

    std::vector<Matrix<Scalar>> dskip(static_cast<std::size_t>(d));
    Matrix<Scalar> dx = dphi.values;
    for (int j = d - 1; j >= 0; --j) {
        const int k = d - 1 - j;
        const auto& cache = t.decoder[std::size_t(j)];
        Matrix<Scalar> dcat = block_backward(cache, dx, std::size_t(4 * (d + 1 + j)), true);
        const Eigen::Index skip_rows = t.encoder[std::size_t(k)].second.output.rows();
        dskip[std::size_t(k)] = dcat.topRows(skip_rows);
        dx = upsample_backward<Scalar>(dcat.bottomRows(dcat.rows() - skip_rows), cache.height / 2, cache.width / 2);
    }
    dx = block_backward(t.bottleneck, dx, std::size_t(4 * d), true);
    for (int k = d - 1; k >= 0; --k) {
        const auto& cache = t.encoder[std::size_t(k)];
        dx = maxpool_backward<Scalar>(dx, t.pool_argmax[std::size_t(k)], Eigen::Index(cache.height) * cache.width);
        dx += dskip[std::size_t(k)];
        dx = block_backward(cache, dx, std::size_t(4 * k), k > 0);
    }
}

template <typename Scalar>
template <typename To>
LevelNetwork<To> LevelNetwork<Scalar>::cast() const {
    LevelNetwork<To> out;
    out.config_ = config_;
    out.init_seed_ = init_seed_;
    for (const auto& t : params_.conv) out.params_.conv.push_back(t.template cast<To>());
    out.params_.head.weight = params_.head.weight.template cast<To>();
    out.params_.head.bias = params_.head.bias.template cast<To>();
    return out;
}

template <typename Scalar>
std::pair<FeatureMap<Scalar>, ProbabilityMap<Scalar>> predict(const LevelNetwork<Scalar>& net, const Grid<Scalar>& image) {
    auto phi = net.features(image);
    auto p = net.classifier()(phi);
    return {std::move(phi), std::move(p)};
}

LevelNetwork<float> build_network(const ModelConfig& config, std::uint64_t seed) { return {config, seed}; }

Grid<float> normalize_input(const Image& image) {
    const double mean = image.mean();
    const double var = (image - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + 1e-6);
    return ((image - mean) * inv).cast<float>();
}

template struct Classifier<float>;
template struct Classifier<double>;
template struct NetworkParameters<float>;
template struct NetworkParameters<double>;
template class LevelNetwork<float>;
template class LevelNetwork<double>;
template ProbabilityMap<float> softmax_columns(const Matrix<float>&, int, int);
template ProbabilityMap<double> softmax_columns(const Matrix<double>&, int, int);
template LevelNetwork<double> LevelNetwork<float>::cast<double>() const;
template LevelNetwork<float> LevelNetwork<double>::cast<float>() const;
template LevelNetwork<float> LevelNetwork<float>::cast<float>() const;
template std::pair<FeatureMap<float>, ProbabilityMap<float>> predict(const LevelNetwork<float>&, const Grid<float>&);
template std::pair<FeatureMap<double>, ProbabilityMap<double>> predict(const LevelNetwork<double>&, const Grid<double>&);

// ---------------------------------------------------------------------------
// Container and checkpoints

namespace {

constexpr std::array<char, 8> kCheckpointMagic{'G', 'Z', 'S', 'E', 'G', 'C', 'K', '1'};
static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"depth", c.depth}, {"base_channels", c.base_channels}, {"feature_dim", c.feature_dim},
            {"in_channels", c.in_channels}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c{j.at("depth").get<int>(), j.at("base_channels").get<int>(), j.at("feature_dim").get<int>(),
                  j.at("in_channels").get<int>()};
    c.validate();
    return c;
}

void write_container(std::ostream& out, nlohmann::json header, const std::vector<const Matrix<float>*>& tensors) {
    auto& shapes = header["tensors"] = nlohmann::json::array();
    for (const auto* t : tensors) shapes.push_back({t->rows(), t->cols()});
    const std::string text = header.dump();
    const std::uint64_t len = text.size();
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), std::streamsize(text.size()));
    for (const auto* t : tensors)
        out.write(reinterpret_cast<const char*>(t->data()), std::streamsize(t->size() * sizeof(float)));
    if (!out) throw std::runtime_error("failed to write checkpoint container");
}

TensorContainer read_container(std::istream& in) {
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kCheckpointMagic) throw ValidationError("not a checkpoint file (bad magic)");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > (1u << 28)) throw ValidationError("checkpoint header length is invalid");
    std::string text(len, '\0');
    in.read(text.data(), std::streamsize(len));
    if (!in) throw ValidationError("checkpoint header is truncated");
    TensorContainer c;
    c.header = nlohmann::json::parse(text);
    for (const auto& shape : c.header.at("tensors")) {
        Matrix<float> t(shape.at(0).get<Eigen::Index>(), shape.at(1).get<Eigen::Index>());
        in.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * sizeof(float)));
        if (!in) throw ValidationError("checkpoint payload is truncated");
        c.tensors.push_back(std::move(t));
    }
    return c;
}

void write_network(std::ostream& out, const LevelNetwork<float>& net) {
    nlohmann::json header{{"kind", "network"}, {"format", 1}, {"scalar", "float32"},
                          {"model", model_config_to_json(net.config())}, {"init_seed", net.init_seed()}};
    std::vector<const Matrix<float>*> tensors;
    net.parameters().for_each([&](const Matrix<float>& t) { tensors.push_back(&t); });
    write_container(out, std::move(header), tensors);
}

LevelNetwork<float> read_network(std::istream& in) {
    auto c = read_container(in);
    if (c.header.value("kind", "") != "network") throw ValidationError("checkpoint does not hold a single network");
    LevelNetwork<float> net(model_config_from_json(c.header.at("model")), c.header.at("init_seed").get<std::uint64_t>());
    std::size_t k = 0;
    if (c.tensors.size() != net.parameters().tensor_count())
        throw ValidationError("checkpoint tensor count does not match the model configuration");
    net.parameters().for_each([&](Matrix<float>& t) {
        if (t.rows() != c.tensors[k].rows() || t.cols() != c.tensors[k].cols())
            throw ValidationError("checkpoint tensor shape does not match the model configuration");
        t = std::move(c.tensors[k++]);
    });
    return net;
}

void save_network(const std::filesystem::path& path, const LevelNetwork<float>& net) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_network(out, net);
}

LevelNetwork<float> load_network(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return read_network(in);
}

}  // namespace gazeseg
