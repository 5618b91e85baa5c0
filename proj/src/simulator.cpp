#include "capal/simulator.hpp"

#include "capal/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace capal {

namespace {

enum class Stream : std::uint32_t { world = 1, scene = 2, detector = 3 };

std::mt19937_64 make_rng(std::uint64_t seed, Stream stream, std::uint64_t a = 0, std::uint64_t b = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(a),
                      static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                      static_cast<std::uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

Eigen::VectorXd gaussian(Eigen::Index n, double sd, std::mt19937_64& rng) {
    std::normal_distribution<double> N(0.0, 1.0);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = sd * N(rng);
    return v;
}

Eigen::VectorXd unit_gaussian(Eigen::Index n, std::mt19937_64& rng) {
    Eigen::VectorXd v;
    do {
        v = gaussian(n, 1.0, rng);
    } while (v.norm() == 0.0);
    return v.normalized();
}

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
    const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp().matrix();
    return e / e.sum();
}

constexpr double kCellSize = 1.6;
constexpr int kGridSide = 4;
constexpr double kRoomHeight = 2.5;

}  // namespace

int WorldSpec::modes_of(int c) const {
    if (modes_per_class.empty()) return 1;
    return modes_per_class[static_cast<std::size_t>(c) % modes_per_class.size()];
}

std::vector<double> WorldSpec::frequencies() const {
    std::vector<double> f;
    if (!class_frequencies.empty()) {
        f = class_frequencies;
    } else {
        for (int c = 0; c < num_classes; ++c) f.push_back(std::pow(c + 1.0, -zipf_exponent));
    }
    const double s = std::accumulate(f.begin(), f.end(), 0.0);
    for (auto& v : f) v /= s;
    return f;
}

void WorldSpec::validate() const {
    if (num_classes < 1) throw std::invalid_argument("world: num_classes must be >= 1");
    for (int m : modes_per_class)
        if (m < 1) throw std::invalid_argument("world: mode counts must be >= 1");
    if (!class_frequencies.empty()) {
        if (static_cast<int>(class_frequencies.size()) != num_classes)
            throw std::invalid_argument("world: class_frequencies length differs from num_classes");
        double s = 0.0;
        for (double v : class_frequencies) {
            if (v < 0.0 || v > 1.0) throw std::invalid_argument("world: frequencies must lie in [0,1]");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-6) throw std::invalid_argument("world: frequencies must sum to 1");
    }
    if (num_scene_types < 1) throw std::invalid_argument("world: num_scene_types must be >= 1");
    if (min_objects < 0 || max_objects < std::max(1, min_objects) ||
        max_objects > kGridSide * kGridSide)
        throw std::invalid_argument("world: object count bounds invalid (max <= 16)");
    if (embedding_dim < 1 || feature_dim < 1) throw std::invalid_argument("world: dimensions must be >= 1");
    const auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(max_miss_rate) || !prob(max_confusion) || !prob(off_type_weight) || !prob(mode_decay))
        throw std::invalid_argument("world: probabilities must lie in [0,1]");
    if (!(coverage_scale > 0.0) || !(temperature_min > 0.0) || temperature_max < temperature_min)
        throw std::invalid_argument("world: coverage scale and temperatures must be positive");
    if (mean_objects < min_objects) throw std::invalid_argument("world: mean_objects below min_objects");
    if (!(background_weight > fp_region_weight * max_false_positives))
        throw std::invalid_argument("world: background_weight must exceed the false-positive mass");
}

WorldModel make_world(const WorldSpec& spec) {
    spec.validate();
    auto rng = make_rng(spec.seed, Stream::world);
    WorldModel w;
    const int C = spec.num_classes, T = spec.num_scene_types;
    for (int c = 0; c < C; ++c) {
        std::vector<Eigen::VectorXd> dirs;
        for (int m = 0; m < spec.modes_of(c); ++m) dirs.push_back(unit_gaussian(spec.embedding_dim, rng));
        w.mode_directions.push_back(std::move(dirs));
    }
    for (int c = 0; c < C; ++c) w.class_signatures.push_back(gaussian(spec.feature_dim, 1.0, rng));
    for (int t = 0; t < T; ++t) w.type_signatures.push_back(gaussian(spec.feature_dim, 1.0, rng));
    // object regions share a common component that background lacks
    const Eigen::VectorXd objectness = spec.objectness * unit_gaussian(spec.feature_dim, rng);
    for (auto& sig : w.class_signatures) sig += objectness;
    std::uniform_real_distribution<double> size_draw(0.4, 1.3);
    for (int c = 0; c < C; ++c) w.class_sizes.push_back(size_draw(rng));

    // each class has a home type and a secondary type
    const auto freq = spec.frequencies();
    w.type_templates = Eigen::MatrixXd::Zero(T, C);
    for (int c = 0; c < C; ++c) {
        const int home = c % T;
        int second = (c * 5 + 2) % T;
        if (second == home) second = (home + 1) % T;
        for (int t = 0; t < T; ++t) {
            const bool in_type = t == home || t == second;
            w.type_templates(t, c) = freq[static_cast<std::size_t>(c)] * (in_type ? 1.0 : spec.off_type_weight);
        }
    }
    for (int t = 0; t < T; ++t) {
        const double s = w.type_templates.row(t).sum();
        if (s > 0.0) w.type_templates.row(t) /= s;
    }
    return w;
}

SimPool generate_pool(const WorldSpec& spec, std::size_t n_scenes) {
    if (n_scenes < 1) throw std::invalid_argument("generate_pool: n_scenes must be >= 1");
    SimPool pool;
    pool.spec = spec;
    pool.world = make_world(spec);
    const auto& w = pool.world;
    const int T = spec.num_scene_types;
    const int width = std::max<int>(4, static_cast<int>(std::to_string(n_scenes - 1).size()));

    for (std::size_t i = 0; i < n_scenes; ++i) {
        auto rng = make_rng(spec.seed, Stream::scene, i);
        SceneRecord scene;
        std::string id = std::to_string(i);
        scene.scene_id = "scene_" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;

        std::uniform_int_distribution<int> type_draw(0, T - 1);
        scene.scene_type = type_draw(rng);
        HiddenScene hidden;
        hidden.background = w.type_signatures[static_cast<std::size_t>(scene.scene_type)] +
                            gaussian(spec.feature_dim, spec.feature_noise, rng);

        std::poisson_distribution<int> extra(std::max(0.0, spec.mean_objects - spec.min_objects));
        const int n_obj = std::clamp(spec.min_objects + extra(rng), std::max(1, spec.min_objects),
                                     spec.max_objects);

        const Eigen::VectorXd weights = w.type_templates.row(scene.scene_type).transpose();
        std::discrete_distribution<int> class_draw(weights.data(), weights.data() + weights.size());

        std::vector<int> cells(kGridSide * kGridSide);
        std::iota(cells.begin(), cells.end(), 0);
        std::shuffle(cells.begin(), cells.end(), rng);
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        std::uniform_real_distribution<double> yaw(-std::numbers::pi, std::numbers::pi);

        std::vector<TruthObject> truth;
        for (int k = 0; k < n_obj; ++k) {
            TruthObject obj;
            obj.class_id = class_draw(rng);
            const int modes = spec.modes_of(obj.class_id);
            std::vector<double> mw;
            for (int m = 0; m < modes; ++m) mw.push_back(std::pow(spec.mode_decay, m));
            std::discrete_distribution<int> mode_draw(mw.begin(), mw.end());
            obj.mode = mode_draw(rng);

            const auto& dir = w.mode_directions[static_cast<std::size_t>(obj.class_id)]
                                               [static_cast<std::size_t>(obj.mode)];
            Eigen::VectorXd e = dir + gaussian(spec.embedding_dim, spec.embedding_spread, rng);
            obj.embedding = e.norm() > 0.0 ? Eigen::VectorXd(e.normalized()) : dir;

            const double base = w.class_sizes[static_cast<std::size_t>(obj.class_id)];
            Eigen::Vector3d size;
            for (int a = 0; a < 3; ++a) size[a] = base * (1.0 + 0.15 * unit(rng));
            const int cell = cells[static_cast<std::size_t>(k)];
            Eigen::Vector3d center((cell % kGridSide + 0.5) * kCellSize + 0.1 * unit(rng),
                                   (cell / kGridSide + 0.5) * kCellSize + 0.1 * unit(rng),
                                   std::min(size[2] / 2.0, kRoomHeight / 2.0));
            double y = yaw(rng);
            if (y >= std::numbers::pi) y = -std::numbers::pi;
            obj.box = Box3d(center, size, y);

            hidden.object_features.push_back(
                w.class_signatures[static_cast<std::size_t>(obj.class_id)] +
                gaussian(spec.feature_dim, spec.feature_noise, rng));
            truth.push_back(std::move(obj));
        }
        scene.truth = std::move(truth);

        // pooled features before any detection
        Eigen::VectorXd sum = spec.background_weight * hidden.background;
        for (const auto& f : hidden.object_features) sum += f;
        const double mass = spec.background_weight + static_cast<double>(n_obj);
        scene.global_feature = sum / mass;
        scene.masked_feature = scene.global_feature;
        scene.masked_weight = mass;

        pool.scenes.push_back(std::move(scene));
        pool.hidden.push_back(std::move(hidden));
    }
    return pool;
}

std::uint64_t hash_ids(std::span<const std::string> ids) {
    std::vector<std::string> sorted(ids.begin(), ids.end());
    std::sort(sorted.begin(), sorted.end());
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& s : sorted) {
        for (unsigned char ch : s) {
            h ^= ch;
            h *= 1099511628211ULL;
        }
        h ^= 0xff;
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

struct Coverage {
    std::vector<double> class_labeled;                  // n_c
    std::vector<std::vector<double>> mode_labeled;      // n_cm
    std::vector<std::vector<double>> mode_total;        // N_cm
    double labeled_fraction = 0.0;                      // labeled objects / all objects
};

Coverage coverage_of(const SimPool& pool, const std::set<std::string>& labeled) {
    const auto& spec = pool.spec;
    Coverage cov;
    cov.class_labeled.assign(static_cast<std::size_t>(spec.num_classes), 0.0);
    for (int c = 0; c < spec.num_classes; ++c) {
        cov.mode_labeled.emplace_back(static_cast<std::size_t>(spec.modes_of(c)), 0.0);
        cov.mode_total.emplace_back(static_cast<std::size_t>(spec.modes_of(c)), 0.0);
    }
    double all = 0.0, lab = 0.0;
    for (const auto& s : pool.scenes) {
        const bool is_labeled = labeled.count(s.scene_id) > 0;
        for (const auto& t : *s.truth) {
            const auto c = static_cast<std::size_t>(t.class_id);
            const auto m = static_cast<std::size_t>(t.mode);
            cov.mode_total[c][m] += 1.0;
            all += 1.0;
            if (is_labeled) {
                cov.mode_labeled[c][m] += 1.0;
                cov.class_labeled[c] += 1.0;
                lab += 1.0;
            }
        }
    }
    cov.labeled_fraction = all > 0.0 ? lab / all : 0.0;
    return cov;
}

Box3d jitter_box(const Box3d& b, double rel, std::mt19937_64& rng) {
    if (rel <= 0.0) return b;
    std::normal_distribution<double> N(0.0, 1.0);
    Box3d out = b;
    for (int a = 0; a < 3; ++a) {
        out.center[a] += rel * b.size[a] * N(rng);
        out.size[a] = b.size[a] * std::exp(rel * N(rng));
    }
    return out;
}

}  // namespace

std::vector<SceneRecord> simulate_detector(const SimPool& pool, std::span<const std::string> labeled) {
    const auto& spec = pool.spec;
    const auto& w = pool.world;
    const std::set<std::string> labeled_set(labeled.begin(), labeled.end());
    for (const auto& id : labeled_set) {
        const bool known = std::any_of(pool.scenes.begin(), pool.scenes.end(),
                                       [&](const SceneRecord& s) { return s.scene_id == id; });
        if (!known) throw std::invalid_argument("simulate_detector: unknown labeled id " + id);
    }
    const auto cov = coverage_of(pool, labeled_set);
    const std::uint64_t lab_hash = hash_ids(labeled);
    const int C = spec.num_classes;
    const double ns = spec.noise_scale;
    const double kappa = spec.coverage_scale;

    // false-positive pressure falls with average class coverage
    double fp_pressure = 0.0;
    for (int c = 0; c < C; ++c)
        fp_pressure += std::exp(-cov.class_labeled[static_cast<std::size_t>(c)] / kappa);
    fp_pressure /= C;
    const double fp_mean = spec.fp_rate * fp_pressure * (1.0 - cov.labeled_fraction);

    std::vector<SceneRecord> out;
    out.reserve(pool.scenes.size());
    for (std::size_t i = 0; i < pool.scenes.size(); ++i) {
        const auto& src = pool.scenes[i];
        const auto& hidden = pool.hidden[i];
        auto rng = make_rng(spec.seed, Stream::detector, i, lab_hash);
        std::uniform_real_distribution<double> U(0.0, 1.0);
        std::normal_distribution<double> N(0.0, 1.0);

        SceneRecord scene = src;
        scene.proposals.clear();
        const double bg_w = spec.background_weight;
        Eigen::VectorXd masked_sum = Eigen::VectorXd::Zero(spec.feature_dim);
        double masked_mass = 0.0;

        const auto make_probs = [&](int signal_class, double temperature, Proposal& p) {
            Eigen::VectorXd logits = gaussian(C, ns * spec.logit_noise, rng);
            if (signal_class >= 0) logits[signal_class] += spec.logit_signal;
            p.class_probs = softmax(logits / temperature);
            p.predicted_class = argmax_class(p.class_probs);
            if (spec.mc_samples > 0) {
                p.mc_samples.resize(spec.mc_samples, C);
                for (int s = 0; s < spec.mc_samples; ++s) {
                    const Eigen::VectorXd z = logits + gaussian(C, ns * spec.mc_noise, rng);
                    p.mc_samples.row(s) = softmax(z / temperature).transpose();
                }
            }
        };

        const auto& truth = *src.truth;
        for (std::size_t k = 0; k < truth.size(); ++k) {
            const auto& obj = truth[k];
            const auto c = static_cast<std::size_t>(obj.class_id);
            const auto m = static_cast<std::size_t>(obj.mode);
            const double frac = cov.mode_labeled[c][m] / cov.mode_total[c][m];
            const double eff = cov.mode_labeled[c][m] + spec.class_share * cov.class_labeled[c];
            const double weakness = std::exp(-eff / kappa) * (1.0 - frac);

            const double miss = spec.max_miss_rate * weakness;
            if (U(rng) < miss) {
                masked_sum += hidden.object_features[k];
                masked_mass += 1.0;
                continue;
            }
            Proposal p;
            p.box = jitter_box(obj.box, ns * (spec.box_jitter + spec.box_jitter_growth * weakness), rng);
            const double temperature =
                spec.temperature_min + (spec.temperature_max - spec.temperature_min) * weakness;
            int signal = obj.class_id;
            if (C > 1 && U(rng) < spec.max_confusion * weakness) {
                std::uniform_int_distribution<int> other(0, C - 2);
                signal = other(rng);
                if (signal >= obj.class_id) ++signal;
            }
            make_probs(signal, temperature, p);
            const Eigen::VectorXd e =
                obj.embedding + gaussian(spec.embedding_dim, ns * spec.detector_embedding_noise, rng);
            p.embedding = e.norm() > 0.0 ? Eigen::VectorXd(e.normalized()) : obj.embedding;
            const Box3d perturbed = jitter_box(
                p.box, ns * (spec.perturb_jitter + spec.perturb_jitter_growth * weakness), rng);
            p.consistency_iou = iou_axis_aligned(p.box, perturbed);
            p.feature_contribution = hidden.object_features[k];
            p.feature_weight = 1.0;
            scene.proposals.push_back(std::move(p));
        }

        std::poisson_distribution<int> fp_draw(std::max(0.0, fp_mean));
        const int n_fp = fp_mean > 0.0 ? std::min(fp_draw(rng), spec.max_false_positives) : 0;
        const Eigen::VectorXd type_w = w.type_templates.row(std::max(0, src.scene_type)).transpose();
        std::discrete_distribution<int> fp_class(type_w.data(), type_w.data() + type_w.size());
        std::uniform_real_distribution<double> room(0.0, kGridSide * kCellSize);
        std::uniform_real_distribution<double> fp_size(0.3, 1.2);
        for (int f = 0; f < n_fp; ++f) {
            Proposal p;
            const Eigen::Vector3d size(fp_size(rng), fp_size(rng), fp_size(rng));
            p.box = Box3d(Eigen::Vector3d(room(rng), room(rng), size[2] / 2.0), size, 0.0);
            make_probs(-1, spec.temperature_max, p);
            // an off-mode direction for the predicted class
            const auto& modes = w.mode_directions[static_cast<std::size_t>(p.predicted_class)];
            Eigen::VectorXd e = unit_gaussian(spec.embedding_dim, rng);
            for (int attempt = 0; attempt < 20; ++attempt) {
                bool near = false;
                for (const auto& d : modes) near = near || e.dot(d) > 0.3;
                if (!near) break;
                e = unit_gaussian(spec.embedding_dim, rng);
            }
            p.embedding = e;
            const Box3d perturbed = jitter_box(p.box, ns * spec.fp_perturb_jitter, rng);
            p.consistency_iou = iou_axis_aligned(p.box, perturbed);
            p.feature_contribution = hidden.background;
            p.feature_weight = spec.fp_region_weight;
            scene.proposals.push_back(std::move(p));
        }

        const double bg_left = bg_w - spec.fp_region_weight * n_fp;
        masked_sum += bg_left * hidden.background;
        masked_mass += bg_left;
        scene.masked_feature = masked_sum / masked_mass;
        scene.masked_weight = masked_mass;
        out.push_back(std::move(scene));
    }
    return out;
}

ProxyScores proxy_quality(std::span<const SceneRecord> scenes, std::span<const std::string> labeled,
                          const WorldSpec& spec) {
    const std::set<std::string> labeled_set(labeled.begin(), labeled.end());
    const int C = spec.num_classes, T = spec.num_scene_types;
    std::vector<double> n_c(C, 0.0), N_c(C, 0.0), n_t(T, 0.0), N_t(T, 0.0);
    std::vector<std::vector<double>> n_cm(C), N_cm(C);
    for (int c = 0; c < C; ++c) {
        n_cm[c].assign(static_cast<std::size_t>(spec.modes_of(c)), 0.0);
        N_cm[c].assign(static_cast<std::size_t>(spec.modes_of(c)), 0.0);
    }
    for (const auto& s : scenes) {
        if (!s.truth) throw std::invalid_argument("proxy_quality: scene " + s.scene_id + " has no truth");
        const bool lab = labeled_set.count(s.scene_id) > 0;
        if (s.scene_type >= 0 && s.scene_type < T) {
            N_t[s.scene_type] += 1.0;
            if (lab) n_t[s.scene_type] += 1.0;
        }
        for (const auto& t : *s.truth) {
            if (t.class_id < 0 || t.class_id >= C) continue;
            N_c[t.class_id] += 1.0;
            if (lab) n_c[t.class_id] += 1.0;
            if (t.mode >= 0 && t.mode < spec.modes_of(t.class_id)) {
                N_cm[t.class_id][t.mode] += 1.0;
                if (lab) n_cm[t.class_id][t.mode] += 1.0;
            }
        }
    }

    const auto sat = [](double n, double total, double kappa) {
        return (1.0 - std::exp(-n / kappa)) / (1.0 - std::exp(-total / kappa));
    };
    const auto score = [&](double ka, double kb, double kt, double wa, double wb, double wt) {
        double a = 0.0, b = 0.0, t = 0.0;
        int na = 0, nb = 0, nt = 0;
        for (int c = 0; c < C; ++c) {
            if (N_c[c] > 0.0) {
                a += sat(n_c[c], N_c[c], ka);
                ++na;
            }
            for (std::size_t m = 0; m < N_cm[c].size(); ++m)
                if (N_cm[c][m] > 0.0) {
                    b += sat(n_cm[c][m], N_cm[c][m], kb);
                    ++nb;
                }
        }
        for (int k = 0; k < T; ++k)
            if (N_t[k] > 0.0) {
                t += sat(n_t[k], N_t[k], kt);
                ++nt;
            }
        double total = 0.0, weight = 0.0;
        if (na) { total += wa * a / na; weight += wa; }
        if (nb) { total += wb * b / nb; weight += wb; }
        if (nt) { total += wt * t / nt; weight += wt; }
        return weight > 0.0 ? total / weight : 0.0;
    };

    ProxyScores out;
    out.map25 = score(8.0, 4.0, 3.0, 0.4, 0.4, 0.2);
    out.map50 = score(20.0, 10.0, 6.0, 0.3, 0.5, 0.2);
    return out;
}

double detection_recall(std::span<const SceneRecord> outputs, double iou_threshold) {
    double total = 0.0, missed = 0.0;
    for (const auto& s : outputs) {
        if (!s.truth) continue;
        const auto pred = proposal_boxes(s);
        const auto gt = truth_boxes(s);
        total += static_cast<double>(gt.size());
        missed += static_cast<double>(undetected_count(pred, gt, iou_threshold));
    }
    return total > 0.0 ? 1.0 - missed / total : 1.0;
}

}  // namespace capal
