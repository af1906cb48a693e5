#include "gazeseg/eval.hpp"

#include "oracles/set_dice.hpp"

#include <doctest.h>

#include <random>

using namespace gazeseg;

namespace {

Mask row(std::initializer_list<int> v) {
    Mask m(1, Eigen::Index(v.size()));
    int i = 0;
    for (int x : v) m(0, i++) = std::uint8_t(x);
    return m;
}

std::vector<int> flat(const Mask& m) { return {m.data(), m.data() + m.size()}; }

}  // namespace

TEST_CASE("dice basics") {
    CHECK(dice(row({1, 1, 0}), row({1, 1, 0})) == 1.0);
    CHECK(dice(row({1, 0, 0}), row({0, 1, 1})) == 0.0);
    CHECK(dice(row({1, 1, 0, 0}), row({1, 0, 0, 0})) == doctest::Approx(2.0 / 3));
    CHECK(dice(row({0, 0}), row({0, 0})) == 1.0);
    CHECK_THROWS_AS(dice(row({1, 0}), row({1, 0, 0})), ValidationError);
}

TEST_CASE("dice equals the set-arithmetic oracle on random pairs") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> side(1, 12);
    std::uniform_real_distribution<double> u(0, 1);
    int exact = 0;
    for (int t = 0; t < 1000; ++t) {
        const int h = side(rng), w = side(rng);
        const double pa = u(rng), pb = u(rng);
        Mask a(h, w), b(h, w);
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            a.data()[i] = u(rng) < pa;
            b.data()[i] = u(rng) < pb;
        }
        exact += dice(a, b) == oracle::set_dice(flat(a), flat(b));
        CHECK(dice(a, b) == dice(b, a));
        CHECK(dice(a, a) == 1.0);
    }
    CHECK(exact == 1000);
}

TEST_CASE("wrong pixel set") {
    CHECK(wrong_pixel_set(row({1, 0, 1}), row({1, 0, 1})).empty());
    CHECK(wrong_pixel_set(row({1, 0, 1}), row({0, 1, 0})).size() == 3);
    CHECK(wrong_pixel_set(row({1, 1, 0, 0}), row({1, 0, 0, 1})) == std::vector<Eigen::Index>{1, 3});
}

TEST_CASE("memorization metrics on the wrong set") {
    // S = {1, 3}: gt|S = (0, 1), pseudo|S = (1, 0), pred|S = (1, 1)
    const auto p = memorization_metrics(row({1, 1, 0, 1}), row({1, 1, 0, 0}), row({1, 0, 0, 1}), 7);
    REQUIRE(p);
    CHECK(p->iter == 7);
    CHECK(p->early_learning == doctest::Approx(2.0 / 3));
    CHECK(p->overfitting == doctest::Approx(2.0 / 3));

    const Mask gt = row({1, 0, 1, 0, 1}), pseudo = row({0, 1, 1, 0, 0});
    const auto follows_gt = memorization_metrics(gt, pseudo, gt);
    CHECK(follows_gt->early_learning == 1.0);
    CHECK(follows_gt->overfitting == 0.0);
    const auto follows_pseudo = memorization_metrics(pseudo, pseudo, gt);
    CHECK(follows_pseudo->overfitting == 1.0);

    CHECK_FALSE(memorization_metrics(gt, gt, gt).has_value());
}

TEST_CASE("mean and sample standard deviation") {
    const std::vector<double> v{1.0, 2.0, 4.0};
    const auto ms = mean_std(v);
    CHECK(ms.mean == doctest::Approx(7.0 / 3));
    CHECK(ms.std == doctest::Approx(std::sqrt(((1 - 7.0 / 3) * (1 - 7.0 / 3) + (2 - 7.0 / 3) * (2 - 7.0 / 3) +
                                               (4 - 7.0 / 3) * (4 - 7.0 / 3)) / 2)));
    const std::vector<double> one{0.5};
    CHECK(mean_std(one).std == 0.0);
}
