#include "gazeseg/eval.hpp"
#include "gazeseg/gaze_data.hpp"
#include "gazeseg/losses.hpp"
#include "gazeseg/trainer.hpp"

#include "oracles/finite_diff.hpp"

#include <cmath>
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace gazeseg;
namespace fs = std::filesystem;

namespace {

ProbabilityMap<double> two_class(std::initializer_list<double> fg, int h, int w) {
    ProbabilityMap<double> p(h, w, 2);
    int i = 0;
    for (double v : fg) {
        p.values(1, i) = v;
        p.values(0, i) = 1 - v;
        ++i;
    }
    return p;
}

// Small synthetic set: level 0 gets a dilated mask, level 1 the ground truth.
std::vector<TrainingSample> toy_samples(int n, int size, std::uint64_t seed, bool with_gt = true) {
    ShapeConfig shape;
    shape.noise_sigma = 6;
    shape.texture_amplitude = 6;
    std::vector<TrainingSample> out;
    for (auto& s : generate_synthetic_dataset(n, size, shape, seed)) {
        TrainingSample t;
        t.id = s.id;
        t.image = normalize_input(s.image);
        Mask dilated = 1 - erode(1 - s.mask, 1);
        t.masks = {dilated, s.mask};
        if (with_gt) t.gt = s.mask;
        out.push_back(std::move(t));
    }
    return out;
}

TrainConfig small_config(double lambda, int iters) {
    TrainConfig c;
    c.m = 2;
    c.lambda = lambda;
    c.iters = iters;
    c.batch_size = 2;
    c.seed = 17;
    c.eval_interval = 0;
    c.checkpoint_interval = 0;
    return c;
}

const ModelConfig kTiny{1, 4, 4};

fs::path scratch_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("gazeseg_trainer_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("cross-entropy values") {
    const Mask fg = Mask::Ones(1, 2);
    CHECK(loss_supervision(two_class({0.5, 0.5}, 1, 2), fg) == doctest::Approx(std::log(2.0)));
    CHECK(loss_supervision(two_class({1 - 1e-7, 1 - 1e-7}, 1, 2), fg) == doctest::Approx(1e-7).epsilon(1e-3));
    Mask m(1, 2);
    m << 1, 0;
    CHECK(loss_supervision(two_class({0.8, 0.4}, 1, 2), m) ==
          doctest::Approx(-(std::log(0.8) + std::log(0.6)) / 2).epsilon(1e-12));
    CHECK(loss_supervision(two_class({0.0, 1.0}, 1, 2), m) == doctest::Approx(-std::log(1e-7)));
    CHECK_THROWS_AS(loss_supervision(two_class({0.5, 0.5}, 1, 2), Mask::Ones(2, 1)), ValidationError);
}

namespace {

// Features whose classifier output is (nearly) one-hot with the chosen labels.
struct OneHotCase {
    FeatureMap<double> phi{2, 2, 1};
    Classifier<double> head;
};

OneHotCase one_hot_case(std::initializer_list<int> labels) {
    OneHotCase c;
    c.head.weight = Matrix<double>(2, 1);
    c.head.weight << -1000, 1000;
    c.head.bias = Matrix<double>::Zero(2, 1);
    int i = 0;
    for (int l : labels) c.phi.values(0, i++) = l ? 1 : -1;
    return c;
}

}  // namespace

TEST_CASE("consistency: agreement -1, disagreement 0, always in [-1, 0]") {
    const NeighborhoodSpec spec{1, 1, true};  // identity propagation keeps one-hots exact
    auto c = one_hot_case({1, 0, 0, 1});
    ProbabilityMap<double> same(2, 2, 2), opposite(2, 2, 2);
    for (int i = 0; i < 4; ++i) {
        const int l = c.phi.values(0, i) > 0;
        same.values(1, i) = l, same.values(0, i) = 1 - l;
        opposite.values(1, i) = 1 - l, opposite.values(0, i) = l;
    }
    CHECK(loss_consistency(c.phi, c.head, same, spec) == -1.0);
    CHECK(loss_consistency(c.phi, c.head, opposite, spec) == 0.0);

    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0, 2);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 200; ++t) {
        FeatureMap<double> phi(4, 5, 3);
        for (Eigen::Index i = 0; i < phi.values.size(); ++i) phi.values.data()[i] = n(rng);
        Classifier<double> head{Matrix<double>(2, 3), Matrix<double>(2, 1)};
        for (Eigen::Index i = 0; i < 6; ++i) head.weight.data()[i] = n(rng);
        head.bias << n(rng), n(rng);
        ProbabilityMap<double> peer(4, 5, 2);
        for (Eigen::Index q = 0; q < 20; ++q) {
            peer.values(1, q) = u(rng);
            peer.values(0, q) = 1 - peer.values(1, q);
        }
        const double l = loss_consistency(phi, head, peer, {3, 1, true});
        CHECK(l >= -1.0);
        CHECK(l <= 0.0);
    }
}

TEST_CASE("consistency gradient matches central differences (4x4, D = 3)") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0, 1);
    FeatureMap<double> phi(4, 4, 3);
    for (Eigen::Index i = 0; i < phi.values.size(); ++i) phi.values.data()[i] = n(rng);
    Classifier<double> head{Matrix<double>(2, 3), Matrix<double>(2, 1)};
    for (Eigen::Index i = 0; i < 6; ++i) head.weight.data()[i] = n(rng);
    head.bias << 0.2, -0.1;
    ProbabilityMap<double> peer(4, 4, 2);
    for (Eigen::Index q = 0; q < 16; ++q) {
        peer.values(1, q) = 1 / (1 + std::exp(-n(rng)));
        peer.values(0, q) = 1 - peer.values(1, q);
    }
    const NeighborhoodSpec spec{3, 1, true};
    auto grad = zero_consistency_gradient(phi, head);
    loss_consistency(phi, head, peer, spec, &grad);

    const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(phi.values.data(), 48);
    const auto fd = oracle::central_difference(
        [&](const Eigen::VectorXd& v) {
            FeatureMap<double> f(4, 4, 3);
            f.values = Eigen::Map<const Matrix<double>>(v.data(), 3, 16);
            return loss_consistency(f, head, peer, spec);
        },
        x);
    const Eigen::VectorXd analytic = Eigen::Map<const Eigen::VectorXd>(grad.dphi.values.data(), 48);
    CHECK(oracle::max_relative_error(analytic, fd, 1e-8) < 1e-4);

    const Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(head.weight.data(), 6);
    const auto fd_w = oracle::central_difference(
        [&](const Eigen::VectorXd& v) {
            Classifier<double> h = head;
            h.weight = Eigen::Map<const Matrix<double>>(v.data(), 2, 3);
            return loss_consistency(phi, h, peer, spec);
        },
        w);
    const Eigen::VectorXd analytic_w = Eigen::Map<const Eigen::VectorXd>(grad.dhead.weight.data(), 6);
    CHECK(oracle::max_relative_error(analytic_w, fd_w, 1e-8) < 1e-4);
}

TEST_CASE("lambda = 0 levels train exactly like independent CE runs") {
    const auto data = toy_samples(6, 16, 3);
    const auto cfg = small_config(0, 10);
    const auto joint = fit(data, make_ladder(0.3, 0.6, 2), kTiny, cfg);
    for (int level = 0; level < 2; ++level) {
        std::vector<TrainingSample> own = data;
        for (auto& s : own) s.masks = {s.masks[std::size_t(level)]};
        const auto alone = fit_single_level(own, 0.5, kTiny, cfg, {}, level);
        CHECK(alone.state.ensemble.networks[0].parameters() == joint.state.ensemble.networks[std::size_t(level)].parameters());
    }
    // and level 1's data has no say over level 0
    auto altered = data;
    for (auto& s : altered) s.masks[1] = Mask::Zero(16, 16);
    const auto other = fit(altered, make_ladder(0.3, 0.6, 2), kTiny, cfg);
    CHECK(other.state.ensemble.networks[0].parameters() == joint.state.ensemble.networks[0].parameters());
    CHECK_FALSE(other.state.ensemble.networks[1].parameters() == joint.state.ensemble.networks[1].parameters());
}

TEST_CASE("frozen peers do not move, and updates are synchronous") {
    const auto data = toy_samples(4, 16, 5);
    const auto cfg = small_config(3, 1);
    auto base = init_training(kTiny, cfg, {0.3, 0.6});
    const auto batch = make_batch(data, cfg, 0);

    auto frozen = base;
    train_step(frozen, batch, 1, {{true, false}});
    CHECK(frozen.ensemble.networks[1].parameters() == base.ensemble.networks[1].parameters());
    CHECK_FALSE(frozen.ensemble.networks[0].parameters() == base.ensemble.networks[0].parameters());

    auto both = base;
    const auto records = train_step(both, batch, 1);
    CHECK(both.ensemble.networks[0].parameters() == frozen.ensemble.networks[0].parameters());
    REQUIRE(records.size() == 2);
    for (const auto& r : records) {
        CHECK(r.total_loss == doctest::Approx(r.ce_loss + 3 * r.cons_loss).epsilon(1e-9));
        CHECK(r.cons_loss >= -1);
        CHECK(r.cons_loss <= 0);
        CHECK(r.ce_loss >= 0);
    }
}

TEST_CASE("a step is reproducible bit for bit") {
    const auto data = toy_samples(4, 16, 6);
    const auto cfg = small_config(3, 1);
    auto a = init_training(kTiny, cfg, {0.3, 0.6});
    auto b = init_training(kTiny, cfg, {0.3, 0.6});
    const auto ra = train_step(a, make_batch(data, cfg, 0), 1);
    const auto rb = train_step(b, make_batch(data, cfg, 0), 1);
    for (std::size_t k = 0; k < ra.size(); ++k) {
        CHECK(ra[k].ce_loss == rb[k].ce_loss);
        CHECK(ra[k].cons_loss == rb[k].cons_loss);
    }
    for (int l = 0; l < 2; ++l) CHECK(a.ensemble.networks[l].parameters() == b.ensemble.networks[l].parameters());
}

TEST_CASE("non-finite loss aborts with a record") {
    const auto data = toy_samples(2, 16, 7);
    auto cfg = small_config(3, 1);
    auto state = init_training(kTiny, cfg, {0.3, 0.6});
    state.ensemble.networks[0].parameters().head.bias(0, 0) = std::numeric_limits<float>::quiet_NaN();
    try {
        train_step(state, make_batch(data, cfg, 0), 1);
        FAIL("expected TrainingAborted");
    } catch (const TrainingAborted& e) {
        CHECK(e.record().iter == 1);
        CHECK(e.record().level == 0);
    }
}

TEST_CASE("fit logs iters x m records and the loss comes down") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto data = toy_samples(20, 16, 40 + seed);
        auto cfg = small_config(3, 50);
        cfg.seed = seed;
        const auto r = fit(data, make_ladder(0.3, 0.6, 2), kTiny, cfg);
        REQUIRE(r.log.steps.size() == 100);
        for (std::size_t k = 0; k < r.log.steps.size(); ++k) CHECK(r.log.steps[k].iter == int(k / 2) + 1);
        auto smoothed_ce = [&](int first, int last) {
            double s = 0;
            for (const auto& rec : r.log.steps)
                if (rec.iter >= first && rec.iter <= last) s += rec.ce_loss;
            return s;
        };
        CHECK(smoothed_ce(41, 50) < smoothed_ce(1, 10));
    }
}

TEST_CASE("checkpoint resume equals the uninterrupted run") {
    const auto data = toy_samples(8, 16, 9);
    auto cfg = small_config(3, 12);
    cfg.checkpoint_interval = 5;
    cfg.eval_interval = 4;
    cfg.optimizer = OptimizerConfig::sgd_cosine_preset();
    const auto ladder = make_ladder(0.3, 0.6, 2);
    const auto straight_dir = scratch_dir("straight"), resumed_dir = scratch_dir("resumed");

    FitOptions straight;
    straight.run_dir = straight_dir;
    straight.eval_set = data;
    const auto full = fit(data, ladder, kTiny, cfg, straight);

    FitOptions first;
    first.run_dir = resumed_dir;
    first.eval_set = data;
    first.stop_after = 7;
    const auto partial = fit(data, ladder, kTiny, cfg, first);
    CHECK(partial.interrupted);
    CHECK(partial.state.iter == 7);
    FitOptions second = first;
    second.stop_after.reset();
    second.resume = true;
    const auto resumed = fit(data, ladder, kTiny, cfg, second);

    CHECK(resumed.state.iter == 12);
    for (int l = 0; l < 2; ++l)
        CHECK(resumed.state.ensemble.networks[l].parameters() == full.state.ensemble.networks[l].parameters());
    for (int l = 0; l < 2; ++l) {
        CHECK(resumed.state.optimizer[l].first == full.state.optimizer[l].first);
    }
    auto text = [](const fs::path& p) {
        std::ifstream in(p);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(text(straight_dir / "runlog.jsonl") == text(resumed_dir / "runlog.jsonl"));
    CHECK(text(straight_dir / "evallog.jsonl") == text(resumed_dir / "evallog.jsonl"));
    CHECK(read_step_log(resumed_dir / "runlog.jsonl").size() == 24);
    CHECK(read_eval_log(resumed_dir / "evallog.jsonl").size() == 3);

    const auto loaded = load_training_state(straight_dir / "checkpoint.bin");
    CHECK(loaded.iter == 12);
    CHECK(loaded.ensemble.thresholds == ladder.thresholds);
    for (int l = 0; l < 2; ++l) {
        CHECK(loaded.ensemble.networks[l].parameters() == full.state.ensemble.networks[l].parameters());
        CHECK(loaded.optimizer[l].second == full.state.optimizer[l].second);
    }
}

TEST_CASE("ensemble prediction is the mean of the levels") {
    const auto cfg = small_config(3, 1);
    auto state = init_training(kTiny, cfg, {0.3, 0.6});
    std::mt19937_64 rng(4);
    std::normal_distribution<float> n(0, 1);
    Grid<float> img(16, 16);
    for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = n(rng);

    auto& ens = state.ensemble;
    const auto p0 = predict(ens.networks[0], img).second;
    const auto p1 = predict(ens.networks[1], img).second;
    const auto e = ensemble_predict(ens, img);
    CHECK((e.p.values - (p0.values + p1.values) / 2).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((e.p.values.colwise().sum().array() - 1).abs().maxCoeff() < 1e-6);

    auto swapped = ens;
    std::swap(swapped.networks[0], swapped.networks[1]);
    CHECK((ensemble_predict(swapped, img).mask == e.mask).all());

    auto twins = ens;
    twins.networks[1] = twins.networks[0];
    CHECK((ensemble_predict(twins, img).p.values - p0.values).cwiseAbs().maxCoeff() < 1e-6);

    ProbabilityMap<float> tie(1, 2, 2);
    tie.values << 0.5f, 0.3f, 0.5f, 0.7f;
    const Mask m = argmax_mask(tie);
    CHECK(m(0, 0) == 0);
    CHECK(m(0, 1) == 1);
}

TEST_CASE("ensemble evaluation: per-level list, skipped samples, means") {
    auto data = toy_samples(3, 16, 12);
    const auto cfg = small_config(3, 1);
    auto state = init_training(kTiny, cfg, {0.3, 0.6});
    data[2].gt.reset();
    const auto e = evaluate_ensemble(state.ensemble, data);
    CHECK(e.level_dice.size() == 2);
    CHECK(e.images == 2);
    CHECK(e.skipped == 1);
    REQUIRE(e.image_dice.size() == 2);
    CHECK(e.ensemble_dice == doctest::Approx((e.image_dice[0] + e.image_dice[1]) / 2));

    // gt set to the ensemble's own prediction scores 1
    auto perfect = data;
    perfect.resize(1);
    perfect[0].gt = ensemble_predict(state.ensemble, perfect[0].image).mask;
    CHECK(evaluate_ensemble(state.ensemble, perfect).ensemble_dice == 1.0);
}

TEST_CASE("batches are seeded, level-independent, and flips keep masks aligned") {
    const auto data = toy_samples(5, 16, 13);
    auto cfg = small_config(3, 10);
    const auto a = make_batch(data, cfg, 3), b = make_batch(data, cfg, 3);
    REQUIRE(a.size() == 2);
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].id == b[k].id);
        CHECK((a[k].image == b[k].image).all());
    }
    cfg.random_flip = true;
    for (int it = 0; it < 10; ++it)
        for (const auto& s : make_batch(data, cfg, it)) {
            const auto& src = *std::find_if(data.begin(), data.end(), [&](const auto& d) { return d.id == s.id; });
            const bool same = (s.image == src.image).all();
            const bool h = (s.image == src.image.rowwise().reverse()).all();
            const bool v = (s.image == src.image.colwise().reverse()).all();
            const bool hv = (s.image == src.image.reverse()).all();
            CHECK((same || h || v || hv));
            if (same) CHECK((s.masks[0] == src.masks[0]).all());
            if (h) CHECK((s.masks[0] == src.masks[0].rowwise().reverse()).all());
            if (v) CHECK((s.masks[1] == src.masks[1].colwise().reverse()).all());
        }
}

TEST_CASE("optimizer presets and the cosine schedule") {
    const auto adam = OptimizerConfig::adam_preset();
    CHECK(adam.kind == OptimizerKind::adam);
    CHECK(adam.learning_rate(1, 100) == doctest::Approx(4e-4));
    CHECK(adam.learning_rate(100, 100) == doctest::Approx(4e-4));
    const auto sgd = OptimizerConfig::sgd_cosine_preset();
    CHECK(sgd.kind == OptimizerKind::sgd_momentum);
    CHECK(sgd.momentum == 0.99);
    CHECK(sgd.learning_rate(1, 101) == doctest::Approx(1e-2));
    CHECK(sgd.learning_rate(51, 101) == doctest::Approx((1e-2 + 1e-4) / 2));
    CHECK(sgd.learning_rate(101, 101) == doctest::Approx(1e-4));
    CHECK(parse_optimizer("sgd-momentum") == OptimizerKind::sgd_momentum);
    CHECK_THROWS(parse_optimizer("rmsprop"));
}

TEST_CASE("train config checks") {
    TrainConfig c;
    CHECK(c.lambda == 3);
    CHECK(c.m == 2);
    CHECK(c.warnings().empty());
    c.lambda = 8;
    CHECK(c.warnings().size() == 1);
    c.lambda = -1;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = {};
    c.m = 1;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = {};
    c.iters = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = {};
    c.lambda = 2.5;
    c.optimizer = OptimizerConfig::sgd_cosine_preset();
    c.lpp = {5, 2, false};
    const auto back = train_config_from_json(train_config_to_json(c));
    CHECK(back.lambda == 2.5);
    CHECK(back.optimizer == c.optimizer);
    CHECK(back.lpp.window == 5);
    CHECK_FALSE(back.lpp.include_center);
}

TEST_CASE("memorization on training images follows each level's own mask") {
    auto data = toy_samples(4, 16, 20);
    const auto cfg = small_config(3, 1);
    auto state = init_training(kTiny, cfg, {0.3, 0.6});
    const auto summary = memorization_on_training(state.ensemble, data);
    REQUIRE(summary);
    // level 1's mask is the ground truth: its wrong set is empty and it drops out
    CHECK(summary->level_early_learning.size() == 2);
    CHECK(std::isnan(summary->level_early_learning[1]));
    CHECK(summary->early_learning == summary->level_early_learning[0]);
    for (auto& s : data) s.gt.reset();
    CHECK_FALSE(memorization_on_training(state.ensemble, data).has_value());
}
