#include "gazeseg/trainer.hpp"

#include "gazeseg/container.hpp"
#include "gazeseg/eval.hpp"
#include "gazeseg/losses.hpp"
#include "gazeseg/seeds.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace gazeseg {

// ---------------------------------------------------------------------------
// Configuration

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "sgd" || name == "sgd-momentum" || name == "sgd_momentum") return OptimizerKind::sgd_momentum;
    throw ValidationError("unknown optimizer '" + name + "'");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd-momentum"; }

OptimizerConfig OptimizerConfig::adam_preset() { return {}; }

OptimizerConfig OptimizerConfig::sgd_cosine_preset() {
    OptimizerConfig c;
    c.kind = OptimizerKind::sgd_momentum;
    c.lr = 1e-2;
    c.momentum = 0.99;
    c.cosine = true;
    c.min_lr = 1e-4;
    return c;
}

double OptimizerConfig::learning_rate(int iter, int total) const {
    if (!cosine || total <= 1) return lr;
    const double progress = double(iter - 1) / double(total - 1);
    return min_lr + 0.5 * (lr - min_lr) * (1 + std::cos(M_PI * progress));
}

void OptimizerConfig::validate() const {
    require(lr > 0, "learning rate must be positive");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0, "Adam parameters out of range");
    require(momentum >= 0 && momentum < 1, "momentum must lie in [0, 1)");
    require(!cosine || (min_lr > 0 && min_lr <= lr), "cosine schedule needs 0 < min_lr <= lr");
}

void TrainConfig::validate() const {
    require(m >= 2, "the multi-level trainer needs m >= 2");
    require(lambda >= 0, "lambda must be non-negative");
    require(iters >= 1, "iters must be at least 1");
    require(batch_size >= 1, "batch_size must be at least 1");
    require(eval_interval >= 0 && checkpoint_interval >= 0, "intervals must be non-negative");
    optimizer.validate();
    lpp.validate();
}

std::vector<std::string> TrainConfig::warnings() const {
    std::vector<std::string> out;
    if (lambda > kLambdaDegenerationWarning)
        out.push_back("lambda = " + std::to_string(lambda) +
                      " exceeds 7; strong consistency tends to collapse the levels into a degenerate model");
    return out;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"m", c.m},
            {"lambda", c.lambda},
            {"iters", c.iters},
            {"batch_size", c.batch_size},
            {"optimizer",
             {{"kind", to_string(c.optimizer.kind)},
              {"lr", c.optimizer.lr},
              {"beta1", c.optimizer.beta1},
              {"beta2", c.optimizer.beta2},
              {"eps", c.optimizer.eps},
              {"momentum", c.optimizer.momentum},
              {"cosine", c.optimizer.cosine},
              {"min_lr", c.optimizer.min_lr}}},
            {"seed", c.seed},
            {"lpp", {{"window", c.lpp.window}, {"dilation", c.lpp.dilation}, {"include_center", c.lpp.include_center}}},
            {"loss_norm", c.loss_norm},
            {"random_flip", c.random_flip},
            {"eval_interval", c.eval_interval},
            {"checkpoint_interval", c.checkpoint_interval}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.m = j.at("m");
    c.lambda = j.at("lambda");
    c.iters = j.at("iters");
    c.batch_size = j.at("batch_size");
    const auto& o = j.at("optimizer");
    c.optimizer.kind = parse_optimizer(o.at("kind"));
    c.optimizer.lr = o.at("lr");
    c.optimizer.beta1 = o.at("beta1");
    c.optimizer.beta2 = o.at("beta2");
    c.optimizer.eps = o.at("eps");
    c.optimizer.momentum = o.at("momentum");
    c.optimizer.cosine = o.at("cosine");
    c.optimizer.min_lr = o.at("min_lr");
    c.seed = j.at("seed");
    c.lpp.window = j.at("lpp").at("window");
    c.lpp.dilation = j.at("lpp").at("dilation");
    c.lpp.include_center = j.at("lpp").at("include_center");
    c.loss_norm = j.at("loss_norm");
    c.random_flip = j.at("random_flip");
    c.eval_interval = j.at("eval_interval");
    c.checkpoint_interval = j.at("checkpoint_interval");
    return c;
}

// ---------------------------------------------------------------------------
// Records

nlohmann::json to_json(const StepRecord& r) {
    return {{"iter", r.iter}, {"level", r.level}, {"ce_loss", r.ce_loss}, {"cons_loss", r.cons_loss},
            {"total_loss", r.total_loss}};
}

StepRecord step_record_from_json(const nlohmann::json& j) {
    return {j.at("iter"), j.at("level"), j.at("ce_loss"), j.at("cons_loss"), j.at("total_loss")};
}

nlohmann::json to_json(const EvalRecord& r) {
    nlohmann::json j{{"iter", r.iter},
                     {"level_dice", r.level_dice},
                     {"ensemble_dice", r.ensemble_dice},
                     {"eval_images", r.eval_images}};
    if (r.early_learning) j["early_learning"] = *r.early_learning;
    if (r.overfitting) j["overfitting"] = *r.overfitting;
    if (!r.level_early_learning.empty()) j["level_early_learning"] = r.level_early_learning;
    if (!r.level_overfitting.empty()) j["level_overfitting"] = r.level_overfitting;
    return j;
}

EvalRecord eval_record_from_json(const nlohmann::json& j) {
    EvalRecord r;
    r.iter = j.at("iter");
    r.level_dice = j.at("level_dice").get<std::vector<double>>();
    r.ensemble_dice = j.at("ensemble_dice");
    r.eval_images = j.value("eval_images", 0);
    if (j.contains("early_learning")) r.early_learning = j.at("early_learning").get<double>();
    if (j.contains("overfitting")) r.overfitting = j.at("overfitting").get<double>();
    // null marks a level without usable images (NaN in memory)
    auto levels = [&](const char* key) {
        std::vector<double> v;
        if (j.contains(key))
            for (const auto& x : j.at(key)) v.push_back(x.is_null() ? std::nan("") : x.get<double>());
        return v;
    };
    r.level_early_learning = levels("level_early_learning");
    r.level_overfitting = levels("level_overfitting");
    return r;
}

namespace {

template <typename F>
void for_each_json_line(const std::filesystem::path& path, F&& f) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) f(nlohmann::json::parse(line));
}

}  // namespace

std::vector<StepRecord> read_step_log(const std::filesystem::path& path) {
    std::vector<StepRecord> out;
    for_each_json_line(path, [&](const nlohmann::json& j) { out.push_back(step_record_from_json(j)); });
    return out;
}

std::vector<EvalRecord> read_eval_log(const std::filesystem::path& path) {
    std::vector<EvalRecord> out;
    for_each_json_line(path, [&](const nlohmann::json& j) { out.push_back(eval_record_from_json(j)); });
    return out;
}

// ---------------------------------------------------------------------------
// Training state

std::uint64_t level_init_seed(std::uint64_t seed, int level) { return derive_seed(seed, "init", std::uint64_t(level)); }

namespace {

TrainingState make_state(const ModelConfig& model, const TrainConfig& config, std::vector<double> thresholds,
                         std::vector<int> init_levels) {
    model.validate();
    TrainingState st;
    st.ensemble.model = model;
    st.ensemble.config = config;
    st.ensemble.thresholds = std::move(thresholds);
    for (int level : init_levels) {
        st.ensemble.networks.push_back(build_network(model, level_init_seed(config.seed, level)));
        const auto zeros = st.ensemble.networks.back().parameters().zeros_like();
        st.optimizer.push_back({zeros, zeros});
    }
    return st;
}

void optimizer_update(const OptimizerConfig& opt, int iter, int total, NetworkParameters<float>& params,
                      NetworkParameters<float>& grad, OptimizerState& state) {
    const float lr = float(opt.learning_rate(iter, total));
    std::size_t k = 0;
    std::vector<Matrix<float>*> g, m, v;
    grad.for_each([&](Matrix<float>& t) { g.push_back(&t); });
    state.first.for_each([&](Matrix<float>& t) { m.push_back(&t); });
    state.second.for_each([&](Matrix<float>& t) { v.push_back(&t); });
    if (opt.kind == OptimizerKind::adam) {
        const float b1 = float(opt.beta1), b2 = float(opt.beta2);
        const float c1 = float(1 - std::pow(opt.beta1, iter));
        const float c2 = float(1 - std::pow(opt.beta2, iter));
        const float eps = float(opt.eps);
        params.for_each([&](Matrix<float>& p) {
            auto& mk = *m[k];
            auto& vk = *v[k];
            const auto& gk = *g[k];
            mk = b1 * mk + (1 - b1) * gk;
            vk = b2 * vk + (1 - b2) * gk.cwiseProduct(gk);
            p.array() -= lr * (mk.array() / c1) / ((vk.array() / c2).sqrt() + eps);
            ++k;
        });
    } else {
        const float mu = float(opt.momentum);
        params.for_each([&](Matrix<float>& p) {
            auto& vk = *m[k];
            vk = mu * vk + *g[k];
            p -= lr * vk;
            ++k;
        });
    }
}

}  // namespace

TrainingState init_training(const ModelConfig& model, const TrainConfig& config, std::vector<double> thresholds) {
    config.validate();
    require(int(thresholds.size()) == config.m, "threshold count must equal m");
    std::vector<int> levels(std::size_t(config.m));
    std::iota(levels.begin(), levels.end(), 0);
    return make_state(model, config, std::move(thresholds), levels);
}

// ---------------------------------------------------------------------------
// Step

std::vector<StepRecord> train_step(TrainingState& state, std::span<const TrainingSample> batch, int iter,
                                   const StepOptions& options) {
    auto& ens = state.ensemble;
    const auto& cfg = ens.config;
    const std::size_t levels = ens.networks.size();
    const std::size_t bsize = batch.size();
    require(bsize > 0, "empty batch");
    require(options.update_level.empty() || options.update_level.size() == levels, "update_level size must equal m");
    for (const auto& s : batch)
        require(s.masks.size() == levels, "sample '" + s.id + "' carries " + std::to_string(s.masks.size()) +
                                              " masks for " + std::to_string(levels) + " levels");

    using Trace = LevelNetwork<float>::Trace;
    std::vector<std::vector<Trace>> traces(levels, std::vector<Trace>(bsize));
    std::vector<std::vector<FeatureMap<float>>> phis(levels, std::vector<FeatureMap<float>>(bsize));
    std::vector<std::vector<ProbabilityMap<float>>> probs(levels, std::vector<ProbabilityMap<float>>(bsize));
    for (std::size_t i = 0; i < levels; ++i)
        for (std::size_t b = 0; b < bsize; ++b) {
            phis[i][b] = ens.networks[i].features(batch[b].image, &traces[i][b]);
            probs[i][b] = ens.networks[i].classifier()(phis[i][b]);
        }

    const double pair_weight = levels > 1 ? cfg.lambda / double(levels - 1) : 0.0;
    const float inv_batch = 1.0f / float(bsize);
    std::vector<NetworkParameters<float>> grads;
    std::vector<StepRecord> records;
    for (std::size_t i = 0; i < levels; ++i) {
        const auto& net = ens.networks[i];
        const bool update = options.update_level.empty() || options.update_level[i];
        grads.push_back(net.parameters().zeros_like());
        auto& grad = grads.back();
        StepRecord rec{iter, int(i), 0, 0, 0};
        for (std::size_t b = 0; b < bsize; ++b) {
            const auto& phi = phis[i][b];
            Matrix<float> dlogits = Matrix<float>::Zero(2, phi.pixels());
            const double ce = loss_supervision<float>(probs[i][b], batch[b].masks[i], &dlogits, inv_batch, cfg.loss_norm);
            FeatureMap<float> dphi = net.classifier().backward(phi, dlogits, grad.head);

            double cons = 0;
            if (levels > 1) {
                std::vector<const ProbabilityMap<float>*> peers;
                for (std::size_t j = 0; j < levels; ++j)
                    if (j != i) peers.push_back(&probs[j][b]);
                if (cfg.lambda > 0) {
                    auto cg = zero_consistency_gradient(phi, net.classifier());
                    const auto terms = consistency_terms<float>(phi, net.classifier(), peers, cfg.lpp, &cg,
                                                                float(pair_weight) * inv_batch, cfg.loss_norm);
                    cons = std::accumulate(terms.begin(), terms.end(), 0.0) / double(terms.size());
                    dphi.values += cg.dphi.values;
                    grad.head.weight += cg.dhead.weight;
                    grad.head.bias += cg.dhead.bias;
                } else {
                    const auto terms =
                        consistency_terms<float>(phi, net.classifier(), peers, cfg.lpp, nullptr, 1.0f, cfg.loss_norm);
                    cons = std::accumulate(terms.begin(), terms.end(), 0.0) / double(terms.size());
                }
            }
            const double total = ce + pair_weight * cons * double(levels - 1);
            rec.ce_loss += ce / double(bsize);
            rec.cons_loss += cons / double(bsize);
            rec.total_loss += total / double(bsize);
            if (!std::isfinite(total))
                throw TrainingAborted("non-finite loss at iteration " + std::to_string(iter) + ", level " +
                                          std::to_string(i) + ", sample '" + batch[b].id + "'",
                                      rec);
            if (update) net.backward(traces[i][b], dphi, grad);
        }
        records.push_back(rec);
    }
    for (std::size_t i = 0; i < levels; ++i)
        if (options.update_level.empty() || options.update_level[i])
            optimizer_update(cfg.optimizer, iter, cfg.iters, ens.networks[i].parameters(), grads[i], state.optimizer[i]);
    return records;
}

namespace {

template <typename T>
Grid<T> flipped(const Grid<T>& g, bool horizontal, bool vertical) {
    Grid<T> out = g;
    if (horizontal) out = out.rowwise().reverse().eval();
    if (vertical) out = out.colwise().reverse().eval();
    return out;
}

}  // namespace

std::vector<TrainingSample> make_batch(std::span<const TrainingSample> samples, const TrainConfig& config, int iter) {
    require(!samples.empty(), "training set is empty");
    const auto n = std::uint64_t(samples.size());
    std::vector<TrainingSample> batch;
    std::vector<std::size_t> perm;
    std::uint64_t perm_epoch = ~std::uint64_t(0);
    for (int k = 0; k < config.batch_size; ++k) {
        const std::uint64_t slot = std::uint64_t(iter) * std::uint64_t(config.batch_size) + std::uint64_t(k);
        const std::uint64_t epoch = slot / n;
        if (epoch != perm_epoch) {
            perm.resize(samples.size());
            std::iota(perm.begin(), perm.end(), std::size_t(0));
            Rng rng(derive_seed(config.seed, "batch", epoch));
            std::shuffle(perm.begin(), perm.end(), rng);
            perm_epoch = epoch;
        }
        TrainingSample s = samples[perm[slot % n]];
        if (config.random_flip) {
            const auto bits = derive_seed(config.seed, "flip", slot);
            const bool h = bits & 1, v = (bits >> 1) & 1;
            s.image = flipped(s.image, h, v);
            for (auto& m : s.masks) m = flipped(m, h, v);
            if (s.gt) s.gt = flipped(*s.gt, h, v);
        }
        batch.push_back(std::move(s));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Prediction

Mask argmax_mask(const ProbabilityMap<float>& p) {
    Mask m(p.height, p.width);
    for (Eigen::Index q = 0; q < p.values.cols(); ++q) m.data()[q] = p.values(1, q) > p.values(0, q);
    return m;
}

EnsemblePrediction ensemble_predict(const LevelEnsemble& ensemble, const Grid<float>& image) {
    require(ensemble.levels() >= 1, "ensemble has no networks");
    ProbabilityMap<float> mean;
    for (const auto& net : ensemble.networks) {
        auto [phi, p] = predict(net, image);
        if (mean.values.size() == 0)
            mean = std::move(p);
        else
            mean.values += p.values;
    }
    mean.values /= float(ensemble.levels());
    Mask mask = argmax_mask(mean);
    return {std::move(mean), std::move(mask)};
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_training_state(const std::filesystem::path& path, const TrainingState& state) {
    const auto& ens = state.ensemble;
    nlohmann::json header{{"kind", "training"},
                          {"format", 1},
                          {"scalar", "float32"},
                          {"iter", state.iter},
                          {"model", model_config_to_json(ens.model)},
                          {"train", train_config_to_json(ens.config)},
                          {"thresholds", ens.thresholds}};
    auto& levels = header["levels"] = nlohmann::json::array();
    std::vector<const Matrix<float>*> tensors;
    for (std::size_t i = 0; i < ens.networks.size(); ++i) {
        levels.push_back({{"init_seed", ens.networks[i].init_seed()}});
        ens.networks[i].parameters().for_each([&](const Matrix<float>& t) { tensors.push_back(&t); });
        state.optimizer[i].first.for_each([&](const Matrix<float>& t) { tensors.push_back(&t); });
        state.optimizer[i].second.for_each([&](const Matrix<float>& t) { tensors.push_back(&t); });
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        write_container(out, std::move(header), tensors);
    }
    std::filesystem::rename(tmp, path);
}

TrainingState load_training_state(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    auto c = read_container(in);
    if (c.header.value("kind", "") != "training") throw ValidationError("checkpoint does not hold a training state");
    TrainingState st;
    st.iter = c.header.at("iter");
    st.ensemble.model = model_config_from_json(c.header.at("model"));
    st.ensemble.config = train_config_from_json(c.header.at("train"));
    st.ensemble.thresholds = c.header.at("thresholds").get<std::vector<double>>();
    std::size_t k = 0;
    auto take = [&](Matrix<float>& t) {
        if (k >= c.tensors.size() || t.rows() != c.tensors[k].rows() || t.cols() != c.tensors[k].cols())
            throw ValidationError("checkpoint tensors do not match the model configuration");
        t = std::move(c.tensors[k++]);
    };
    for (const auto& level : c.header.at("levels")) {
        st.ensemble.networks.push_back(build_network(st.ensemble.model, level.at("init_seed").get<std::uint64_t>()));
        auto zeros = st.ensemble.networks.back().parameters().zeros_like();
        st.optimizer.push_back({zeros, zeros});
        st.ensemble.networks.back().parameters().for_each(take);
        st.optimizer.back().first.for_each(take);
        st.optimizer.back().second.for_each(take);
    }
    if (k != c.tensors.size()) throw ValidationError("checkpoint holds unexpected extra tensors");
    return st;
}

// ---------------------------------------------------------------------------
// Fit

namespace {

EvalRecord evaluate_now(const LevelEnsemble& ens, int iter, std::span<const TrainingSample> train,
                        const FitOptions& options) {
    EvalRecord rec;
    rec.iter = iter;
    if (!options.eval_set.empty()) {
        auto e = evaluate_ensemble(ens, options.eval_set);
        rec.level_dice = e.level_dice;
        rec.ensemble_dice = e.ensemble_dice;
        rec.eval_images = e.images;
    }
    if (auto m = memorization_on_training(ens, train, options.memorization_limit)) {
        rec.early_learning = m->early_learning;
        rec.overfitting = m->overfitting;
        rec.level_early_learning = m->level_early_learning;
        rec.level_overfitting = m->level_overfitting;
    }
    return rec;
}

void rewrite_logs_up_to(const std::filesystem::path& dir, int iter) {
    auto filter = [&](const std::filesystem::path& path) {
        if (!std::filesystem::exists(path)) return;
        std::vector<std::string> keep;
        {
            std::ifstream in(path);
            std::string line;
            while (std::getline(in, line))
                if (!line.empty() && nlohmann::json::parse(line).at("iter").get<int>() <= iter) keep.push_back(line);
        }
        std::ofstream out(path, std::ios::trunc);
        for (const auto& l : keep) out << l << '\n';
    };
    filter(dir / "runlog.jsonl");
    filter(dir / "evallog.jsonl");
}

FitResult fit_levels(std::span<const TrainingSample> train, TrainingState state, const FitOptions& options) {
    require(!train.empty(), "training set is empty");
    const auto& cfg = state.ensemble.config;
    std::ofstream step_log, eval_log;
    if (options.run_dir) {
        std::filesystem::create_directories(*options.run_dir);
        const auto ckpt = *options.run_dir / "checkpoint.bin";
        if (options.resume) {
            if (!std::filesystem::exists(ckpt)) throw std::runtime_error("no checkpoint to resume from in " + options.run_dir->string());
            auto loaded = load_training_state(ckpt);
            if (train_config_to_json(loaded.ensemble.config) != train_config_to_json(cfg) ||
                !(loaded.ensemble.model == state.ensemble.model))
                throw ValidationError("checkpoint configuration differs from the requested run");
            state = std::move(loaded);
            rewrite_logs_up_to(*options.run_dir, state.iter);
            step_log.open(*options.run_dir / "runlog.jsonl", std::ios::app);
            eval_log.open(*options.run_dir / "evallog.jsonl", std::ios::app);
        } else {
            step_log.open(*options.run_dir / "runlog.jsonl", std::ios::trunc);
            eval_log.open(*options.run_dir / "evallog.jsonl", std::ios::trunc);
        }
    }

    FitResult result;
    const int last = options.stop_after ? std::min(*options.stop_after, cfg.iters) : cfg.iters;
    for (int t = state.iter + 1; t <= last; ++t) {
        const auto batch = make_batch(train, cfg, t - 1);
        auto records = train_step(state, batch, t);
        state.iter = t;
        for (const auto& r : records) {
            if (step_log.is_open()) step_log << to_json(r).dump() << '\n';
            result.log.steps.push_back(r);
        }
        const bool eval_due = (cfg.eval_interval > 0 && t % cfg.eval_interval == 0) || t == cfg.iters;
        if (eval_due && (!options.eval_set.empty() || std::any_of(train.begin(), train.end(), [](const auto& s) { return bool(s.gt); }))) {
            auto rec = evaluate_now(state.ensemble, t, train, options);
            if (eval_log.is_open()) eval_log << to_json(rec).dump() << '\n';
            if (options.on_eval) options.on_eval(rec);
            result.log.evals.push_back(std::move(rec));
        }
        const bool interrupted = options.interrupt && options.interrupt->load();
        const bool ckpt_due =
            (cfg.checkpoint_interval > 0 && t % cfg.checkpoint_interval == 0) || t == last || interrupted;
        if (options.run_dir && ckpt_due) {
            step_log.flush();
            eval_log.flush();
            save_training_state(*options.run_dir / "checkpoint.bin", state);
        }
        if (interrupted) {
            result.interrupted = true;
            break;
        }
    }
    if (state.iter < cfg.iters) result.interrupted = true;  // stop_after
    result.state = std::move(state);
    return result;
}

}  // namespace

FitResult fit(std::span<const TrainingSample> train, const ThresholdLadder& ladder, const ModelConfig& model,
              const TrainConfig& config, const FitOptions& options) {
    config.validate();
    require(ladder.m == config.m, "ladder level count must equal the training m");
    for (const auto& s : train)
        require(int(s.masks.size()) == config.m, "sample '" + s.id + "' does not carry m pseudo-masks");
    return fit_levels(train, init_training(model, config, ladder.thresholds), options);
}

FitResult fit_single_level(std::span<const TrainingSample> train, double threshold, const ModelConfig& model,
                           const TrainConfig& config, const FitOptions& options, int init_level) {
    TrainConfig single = config;
    single.m = 2;  // validate everything except the level count
    single.validate();
    single.m = 1;
    single.lambda = 0;
    std::vector<TrainingSample> one_level(train.begin(), train.end());
    for (auto& s : one_level) {
        require(!s.masks.empty(), "sample '" + s.id + "' carries no mask");
        s.masks.resize(1);
    }
    return fit_levels(one_level, make_state(model, single, {threshold}, {init_level}), options);
}

}  // namespace gazeseg
