#include "gazeseg/pseudomask.hpp"

#include <doctest.h>

#include <random>

using namespace gazeseg;

TEST_CASE("ladder endpoints and interpolation") {
    CHECK(make_ladder(0.3, 0.6, 2).thresholds == std::vector<double>{0.3, 0.6});
    const auto l4 = make_ladder(0.2, 0.8, 4).thresholds;
    REQUIRE(l4.size() == 4);
    CHECK(l4[0] == 0.2);
    CHECK(l4[1] == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(l4[2] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(l4[3] == 0.8);
}

TEST_CASE("invalid ladders") {
    CHECK_THROWS_AS(make_ladder(0.5, 0.5, 2), ValidationError);
    CHECK_THROWS_AS(make_ladder(0.6, 0.3, 2), ValidationError);
    CHECK_THROWS_AS(make_ladder(0.3, 0.6, 1), ValidationError);
    CHECK_THROWS_AS(make_ladder(0.0, 0.6, 2), ValidationError);
    CHECK_THROWS_AS(make_ladder(0.3, 1.0, 2), ValidationError);
}

TEST_CASE("hand-checked 2x2 stack") {
    AttentionHeatmap h{Grid<double>(2, 2)};
    h.values << 0.25, 0.45, 0.65, 0.95;
    const auto s = binarize_stack(h, make_ladder(0.3, 0.6, 2), "q");
    Mask l0(2, 2), l1(2, 2);
    l0 << 0, 1, 1, 1;
    l1 << 0, 0, 1, 1;
    CHECK((s.masks[0] == l0).all());
    CHECK((s.masks[1] == l1).all());
    CHECK(s.image_id == "q");
}

TEST_CASE("thresholds are inclusive and a full heatmap fills every level") {
    AttentionHeatmap h{Grid<double>::Constant(3, 3, 1.0)};
    for (const auto& m : binarize_stack(h, make_ladder(0.2, 0.8, 3)).masks) CHECK((m == 1).all());
    AttentionHeatmap edge{Grid<double>::Constant(2, 2, 0.6)};
    const auto s = binarize_stack(edge, make_ladder(0.3, 0.6, 2));
    CHECK((s.masks[1] == 1).all());
}

TEST_CASE("random stacks nest and rethresholding at 0.5 is idempotent") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 200; ++t) {
        const int m = 2 + t % 3;
        double lo = 0.01 + 0.5 * u(rng), hi = lo + (0.98 - lo) * (0.05 + 0.95 * u(rng));
        AttentionHeatmap h{Grid<double>(9, 11)};
        for (Eigen::Index i = 0; i < h.values.size(); ++i) h.values.data()[i] = u(rng);
        const auto s = binarize_stack(h, make_ladder(lo, hi, m));
        CHECK(is_nested(s));
        for (int k = 0; k + 1 < m; ++k) {
            CHECK(is_subset(s.masks[k + 1], s.masks[k]));
            CHECK(s.masks[k].cast<int>().sum() >= s.masks[k + 1].cast<int>().sum());
        }
        for (const auto& mask : s.masks) CHECK((binarize(mask.cast<double>(), 0.5) == mask).all());
    }
}

TEST_CASE("is_nested spots a violation and empty top levels are reported") {
    PseudoMaskStack s{"x", {Mask::Zero(2, 2), Mask::Zero(2, 2)}};
    CHECK(s.top_level_empty());
    s.masks[1](0, 0) = 1;
    CHECK_FALSE(is_nested(s));
    CHECK_FALSE(s.top_level_empty());
}
