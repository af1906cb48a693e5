#include "gazeseg/losses.hpp"
#include "gazeseg/model.hpp"

#include "oracles/finite_diff.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace gazeseg;

namespace {

Grid<float> random_image(std::mt19937_64& rng, int h, int w) {
    std::normal_distribution<float> n(0, 1);
    Grid<float> g(h, w);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n(rng);
    return g;
}

Eigen::VectorXd flatten(const NetworkParameters<double>& p) {
    std::vector<double> v;
    p.for_each([&](const Matrix<double>& t) { v.insert(v.end(), t.data(), t.data() + t.size()); });
    return Eigen::Map<Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

void unflatten(NetworkParameters<double>& p, const Eigen::VectorXd& v) {
    Eigen::Index at = 0;
    p.for_each([&](Matrix<double>& t) {
        t = Eigen::Map<const Matrix<double>>(v.data() + at, t.rows(), t.cols());
        at += t.size();
    });
}

}  // namespace

TEST_CASE("same seed, same parameters; different seed, different parameters") {
    const ModelConfig c{2, 4, 4};
    const auto a = build_network(c, 5), b = build_network(c, 5), d = build_network(c, 6);
    CHECK(a.parameters() == b.parameters());
    CHECK_FALSE(a.parameters() == d.parameters());
    CHECK(a.init_seed() == 5);
}

TEST_CASE("64x64 forward at depth 3: full-size two-class map") {
    std::mt19937_64 rng(1);
    const auto net = build_network({3, 4, 6}, 2);
    const auto img = random_image(rng, 64, 64);
    const auto [phi, p] = predict(net, img);
    CHECK(phi.height == 64);
    CHECK(phi.width == 64);
    CHECK(phi.channels() == 6);
    CHECK(p.channels() == 2);
    CHECK((p.values.colwise().sum().array() - 1).abs().maxCoeff() < 1e-6);
    CHECK(p.values.minCoeff() > 0);
    CHECK(p.values.maxCoeff() < 1);
    // p = g(phi), bit for bit
    CHECK(net.classifier()(phi).values == p.values);
    // deterministic
    CHECK(predict(net, img).second.values == p.values);
}

TEST_CASE("sides must be multiples of 2^depth") {
    const auto net = build_network({2, 2, 2}, 0);
    CHECK_THROWS_AS(predict(net, Grid<float>(Grid<float>::Zero(10, 8))), ShapeError);
    CHECK_NOTHROW(predict(net, Grid<float>(Grid<float>::Zero(12, 8))));
    ModelConfig bad{0, 2, 2};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("parameter gradients of a CE loss match finite differences") {
    std::mt19937_64 rng(3);
    auto net = build_network({1, 2, 2}, 9).cast<double>();
    const Grid<double> img = random_image(rng, 4, 4).cast<double>();
    Mask mask(4, 4);
    for (Eigen::Index i = 0; i < 16; ++i) mask.data()[i] = (i * 7) % 3 == 0;

    auto loss_of = [&](const LevelNetwork<double>& n) {
        const auto [phi, p] = predict(n, img);
        return loss_supervision(p, mask);
    };
    typename LevelNetwork<double>::Trace trace;
    const auto phi = net.features(img, &trace);
    const auto p = net.classifier()(phi);
    Matrix<double> dlogits = Matrix<double>::Zero(2, 16);
    loss_supervision(p, mask, &dlogits);
    auto grad = net.parameters().zeros_like();
    const auto dphi = net.classifier().backward(phi, dlogits, grad.head);
    net.backward(trace, dphi, grad);

    const Eigen::VectorXd x = flatten(net.parameters());
    auto probe = net;
    const auto fd = oracle::central_difference(
        [&](const Eigen::VectorXd& v) {
            unflatten(probe.parameters(), v);
            return loss_of(probe);
        },
        x);
    CHECK(oracle::max_relative_error(flatten(grad), fd, 1e-7) < 1e-4);
}

TEST_CASE("network checkpoint round-trips bit-exactly") {
    const auto net = build_network({2, 3, 5}, 42);
    std::stringstream buf;
    write_network(buf, net);
    CHECK(buf.str().substr(0, 8) == "GZSEGCK1");
    const auto back = read_network(buf);
    CHECK(back.parameters() == net.parameters());
    CHECK(back.config() == net.config());
    CHECK(back.init_seed() == 42);
    std::stringstream truncated(buf.str().substr(0, buf.str().size() / 2));
    CHECK_THROWS(read_network(truncated));
}

TEST_CASE("input normalization is zero-mean unit-variance") {
    Image img(4, 4);
    for (Eigen::Index i = 0; i < 16; ++i) img.data()[i] = double(i * 13 % 255);
    const auto g = normalize_input(img);
    CHECK(std::abs(g.mean()) < 1e-6);
    CHECK(std::abs(std::sqrt((g * g).mean()) - 1) < 1e-5);
}
