#include "capal/regressor.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace capal {

namespace {

constexpr const char* kParamsMagic = "capal-mlp";
constexpr int kParamsVersion = 1;

}  // namespace

RegressionSample<double> scene_sample(const SceneRecord& scene, const std::vector<bool>& dropped,
                                      double iou_threshold) {
    if (!scene.truth) throw std::invalid_argument("scene " + scene.scene_id + " has no truth");
    if (dropped.size() != scene.proposals.size())
        throw std::invalid_argument("scene_sample: mask size mismatch");
    const auto dg = scene.global_feature.size();
    if (scene.masked_feature.size() != dg)
        throw std::invalid_argument("scene " + scene.scene_id + ": g and u differ in size");

    Eigen::VectorXd pooled = scene.masked_feature * scene.masked_weight;
    double mass = scene.masked_weight;
    std::vector<Box3d> kept;
    for (std::size_t j = 0; j < scene.proposals.size(); ++j) {
        const auto& p = scene.proposals[j];
        if (dropped[j]) {
            if (p.feature_weight > 0.0 && p.feature_contribution.size() == dg) {
                pooled += p.feature_weight * p.feature_contribution;
                mass += p.feature_weight;
            }
        } else {
            kept.push_back(p.box);
        }
    }

    RegressionSample<double> s;
    s.input.resize(2 * dg);
    s.input.head(dg) = scene.global_feature;
    s.input.tail(dg) = mass > 0.0 ? Eigen::VectorXd(pooled / mass) : scene.masked_feature;
    const auto truth = truth_boxes(scene);
    s.target = static_cast<double>(undetected_count(kept, truth, iou_threshold));
    return s;
}

RegressionSample<double> scene_sample(const SceneRecord& scene, double iou_threshold) {
    return scene_sample(scene, std::vector<bool>(scene.proposals.size(), false), iou_threshold);
}

MlpParamsd train(std::span<const SceneRecord> scenes, const TrainConfig& cfg) {
    if (scenes.empty()) throw std::invalid_argument("train: empty training set");
    if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be > 0");
    if (cfg.epochs < 1 || cfg.batch_size < 1)
        throw std::invalid_argument("train: epochs and batch_size must be positive");
    if (cfg.mask_probability < 0.0 || cfg.mask_probability > 1.0)
        throw std::invalid_argument("train: mask_probability must lie in [0,1]");

    const auto dg = scenes.front().global_feature.size();
    for (const auto& s : scenes) {
        if (!s.truth) throw std::invalid_argument("train: scene " + s.scene_id + " is unlabeled");
        if (s.global_feature.size() != dg || s.masked_feature.size() != dg)
            throw std::invalid_argument("train: inconsistent feature dimensions");
    }

    std::mt19937_64 rng(cfg.seed);
    auto params = init_params<double>(2 * dg, cfg.hidden1, cfg.hidden2, rng);

    // Targets of the unmasked scenes do not change; cache them.
    std::vector<RegressionSample<double>> clean;
    clean.reserve(scenes.size());
    for (const auto& s : scenes) clean.push_back(scene_sample(s, cfg.iou_threshold));

    std::bernoulli_distribution mask(cfg.mask_probability);
    std::vector<std::size_t> order(scenes.size());
    std::vector<RegressionSample<double>> batch;
    MlpParamsd grad;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) {
                const auto& scene = scenes[order[i]];
                std::vector<bool> dropped(scene.proposals.size(), false);
                bool any = false;
                for (std::size_t j = 0; j < dropped.size(); ++j)
                    if (mask(rng)) dropped[j] = any = true;
                batch.push_back(any ? scene_sample(scene, dropped, cfg.iou_threshold)
                                    : clean[order[i]]);
            }
            loss_and_gradient<double>(params, batch, grad);
            grad *= -cfg.learning_rate / static_cast<double>(batch.size());
            params += grad;
            if (!params.all_finite())
                throw std::runtime_error("train: non-finite parameters at epoch " +
                                         std::to_string(epoch));
        }
    }
    return params;
}

void save_params(std::ostream& os, const MlpParamsd& p) {
    os << kParamsMagic << ' ' << kParamsVersion << '\n';
    os << p.input_dim() << ' ' << p.hidden1() << ' ' << p.hidden2() << '\n';
    os << std::setprecision(17);
    const auto write = [&os](const auto& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? " " : "") << m(r, c);
            os << '\n';
        }
    };
    write(p.w1);
    write(p.b1.transpose());
    write(p.w2);
    write(p.b2.transpose());
    write(p.w3);
    write(p.b3.transpose());
}

MlpParamsd load_params(std::istream& is) {
    std::string magic;
    int version = 0;
    if (!(is >> magic >> version) || magic != kParamsMagic)
        throw std::runtime_error("load_params: not a capal-mlp record");
    if (version != kParamsVersion)
        throw std::runtime_error("load_params: unsupported version " + std::to_string(version));
    Eigen::Index in = 0, h1 = 0, h2 = 0;
    if (!(is >> in >> h1 >> h2) || in <= 0 || h1 <= 0 || h2 <= 0)
        throw std::runtime_error("load_params: bad dimension header");
    auto p = MlpParamsd::zeros(in, h1, h2);
    const auto read = [&is](auto&& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                if (!(is >> m(r, c))) throw std::runtime_error("load_params: truncated record");
    };
    read(p.w1);
    read(p.b1.transpose());
    read(p.w2);
    read(p.b2.transpose());
    read(p.w3);
    read(p.b3.transpose());
    if (!p.all_finite()) throw std::runtime_error("load_params: non-finite parameter");
    return p;
}

void save_params(const std::string& path, const MlpParamsd& p) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    save_params(os, p);
}

MlpParamsd load_params(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    return load_params(is);
}

}  // namespace capal
