#ifndef GAZESEG_MODEL_HPP
#define GAZESEG_MODEL_HPP

#include "gazeseg/core.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace gazeseg {

struct ModelConfig {
    int depth = 3;           // pooling stages
    int base_channels = 16;  // channels of the first stage, doubled per stage
    int feature_dim = 16;    // channels of the per-pixel feature map
    int in_channels = 1;

    void validate() const;
    int size_multiple() const { return 1 << depth; }
    bool operator==(const ModelConfig&) const = default;
};

/// Per-pixel linear map from D features to two logits, then softmax.
template <typename Scalar>
struct Classifier {
    Matrix<Scalar> weight;  // 2 x D
    Matrix<Scalar> bias;    // 2 x 1

    Matrix<Scalar> logits(const FeatureMap<Scalar>& phi) const;
    ProbabilityMap<Scalar> operator()(const FeatureMap<Scalar>& phi) const;

    /// Accumulates into `grad` the gradient for logits-gradient `dlogits`
    /// evaluated at features `phi`; returns the gradient w.r.t. phi.
    FeatureMap<Scalar> backward(const FeatureMap<Scalar>& phi, const Matrix<Scalar>& dlogits,
                                Classifier& grad) const;

    bool operator==(const Classifier& o) const { return weight == o.weight && bias == o.bias; }
};

/// Column-wise two-class softmax.
template <typename Scalar>
ProbabilityMap<Scalar> softmax_columns(const Matrix<Scalar>& logits, int height, int width);

/// Every learnable tensor of one network: 3x3 convolution weights/biases in
/// forward order, then the classifier. Also used for gradients and
/// optimizer moments, which share the layout.
template <typename Scalar>
struct NetworkParameters {
    std::vector<Matrix<Scalar>> conv;
    Classifier<Scalar> head;

    NetworkParameters zeros_like() const;
    std::size_t tensor_count() const { return conv.size() + 2; }
    std::size_t scalar_count() const;

    template <typename F>
    void for_each(F&& f) {
        for (auto& t : conv) f(t);
        f(head.weight);
        f(head.bias);
    }
    template <typename F>
    void for_each(F&& f) const {
        for (const auto& t : conv) f(t);
        f(head.weight);
        f(head.bias);
    }
    /// Visits matching tensors of two parameter sets with the same layout.
    template <typename F>
    void zip(NetworkParameters& other, F&& f) {
        for (std::size_t k = 0; k < conv.size(); ++k) f(conv[k], other.conv[k]);
        f(head.weight, other.head.weight);
        f(head.bias, other.head.bias);
    }

    bool operator==(const NetworkParameters& o) const { return conv == o.conv && head == o.head; }
};

/// Encoder-decoder feature extractor f (UNet layout: two 3x3 conv+ReLU per
/// stage, 2x2 max pooling, nearest upsampling, skip concatenation) followed
/// by the shallow classifier g.
template <typename Scalar>
class LevelNetwork {
public:
    struct ConvCache {
        Matrix<Scalar> columns;  // im2col of the input
        Matrix<Scalar> output;   // post-ReLU
    };
    struct BlockCache {
        int height = 0, width = 0;
        ConvCache first, second;
    };
    /// Activations of one forward pass, consumed by backward().
    struct Trace {
        std::vector<BlockCache> encoder;
        std::vector<std::vector<Eigen::Index>> pool_argmax;
        BlockCache bottleneck;
        std::vector<BlockCache> decoder;  // processing order: deepest first
    };

    LevelNetwork() = default;
    LevelNetwork(const ModelConfig& config, std::uint64_t init_seed);

    const ModelConfig& config() const { return config_; }
    std::uint64_t init_seed() const { return init_seed_; }
    NetworkParameters<Scalar>& parameters() { return params_; }
    const NetworkParameters<Scalar>& parameters() const { return params_; }
    const Classifier<Scalar>& classifier() const { return params_.head; }

    /// f(image). Image sides must be multiples of 2^depth. Pass a trace to
    /// keep the activations for backward().
    FeatureMap<Scalar> features(const Grid<Scalar>& image, Trace* trace = nullptr) const;

    /// Accumulates parameter gradients of f for feature gradient `dphi`.
    void backward(const Trace& trace, const FeatureMap<Scalar>& dphi, NetworkParameters<Scalar>& grad) const;

    template <typename To>
    LevelNetwork<To> cast() const;

private:
    template <typename>
    friend class LevelNetwork;

    ModelConfig config_;
    std::uint64_t init_seed_ = 0;
    NetworkParameters<Scalar> params_;
};

struct Prediction {
    FeatureMap<float> phi;
    ProbabilityMap<float> p;
};

/// Builds a network with deterministic He-normal initialization from `seed`.
LevelNetwork<float> build_network(const ModelConfig& config, std::uint64_t seed);

/// Returns phi = f(image) and p = g(phi).
template <typename Scalar>
std::pair<FeatureMap<Scalar>, ProbabilityMap<Scalar>> predict(const LevelNetwork<Scalar>& net,
                                                              const Grid<Scalar>& image);

/// Zero-mean, unit-variance network input from 0-255 intensities.
Grid<float> normalize_input(const Image& image);

/// Checkpoint container:
///   8-byte magic "GZSEGCK1", uint64 little-endian header length, UTF-8 JSON
///   header (config, seeds, tensor shapes, payload metadata), then every
///   tensor's float32 values in column-major order, in header order.
/// Network checkpoints carry kind "network".
void save_network(const std::filesystem::path& path, const LevelNetwork<float>& net);
LevelNetwork<float> load_network(const std::filesystem::path& path);
void write_network(std::ostream& out, const LevelNetwork<float>& net);
LevelNetwork<float> read_network(std::istream& in);

}  // namespace gazeseg

#endif
