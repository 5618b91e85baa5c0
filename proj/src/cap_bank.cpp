#include "capal/cap_bank.hpp"

#include "capal/clustering.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace capal {

std::size_t PrototypeBank::total_prototypes() const {
    std::size_t n = 0;
    for (const auto& c : classes) n += c.size();
    return n;
}

std::size_t PrototypeBank::class_offset(int c) const {
    std::size_t off = 0;
    for (int i = 0; i < c; ++i) off += classes.at(static_cast<std::size_t>(i)).size();
    return off;
}

namespace {

void check_class(const PrototypeBank& bank, int c) {
    if (c < 0 || c >= bank.num_classes)
        throw std::invalid_argument("class " + std::to_string(c) + " outside [0, " +
                                    std::to_string(bank.num_classes) + ")");
}

Prototype seed_prototype(const Eigen::VectorXd& v, double w) {
    Prototype p;
    p.weighted_sum = w * v;
    p.weight = w;
    return p;
}

}  // namespace

BestMatch best_match(const PrototypeBank& bank, const Eigen::VectorXd& o, int c) {
    check_class(bank, c);
    BestMatch best;
    const auto& protos = bank.classes[static_cast<std::size_t>(c)];
    for (std::size_t k = 0; k < protos.size(); ++k) {
        const double s = protos[k].empty ? 1.0 : cosine_similarity(o, protos[k].vector());
        if (k == 0 || s > best.similarity) {
            best.index = k;
            best.similarity = s;
        }
    }
    return best;
}

std::size_t assign(const PrototypeBank& bank, const Eigen::VectorXd& o, int c) {
    check_class(bank, c);
    const auto& protos = bank.classes[static_cast<std::size_t>(c)];
    if (protos.empty()) return 0;
    const auto best = best_match(bank, o, c);
    if (!bank.adaptive || best.similarity >= bank.tau_sim) return best.index;
    return protos.size();
}

PrototypeBank update_batch(PrototypeBank bank, std::span<const ObjectObservation> batch,
                           std::vector<AssignmentEvent>* log) {
    std::size_t position = log ? log->size() : 0;
    for (const auto& obs : batch) {
        if (!(obs.consistency_iou > 0.0)) continue;
        const std::size_t k = assign(bank, obs.embedding, obs.predicted_class);
        auto& protos = bank.classes[static_cast<std::size_t>(obs.predicted_class)];
        const bool created = k == protos.size();
        if (bank.adaptive) {
            if (created) {
                protos.push_back(seed_prototype(obs.embedding, obs.consistency_iou));
            } else if (protos[k].empty) {
                protos[k] = seed_prototype(obs.embedding, obs.consistency_iou);
            } else {
                protos[k].weighted_sum += obs.consistency_iou * obs.embedding;
                protos[k].weight += obs.consistency_iou;
            }
        }
        if (log) log->push_back({obs.predicted_class, k, created, position});
        ++position;
    }
    return bank;
}

namespace {

struct ClassEmbedding {
    int class_id;
    Eigen::VectorXd embedding;
};

std::vector<ClassEmbedding> labeled_objects(std::span<const SceneRecord> labeled) {
    std::vector<ClassEmbedding> out;
    for (const auto& scene : labeled) {
        if (!scene.truth) throw std::invalid_argument("scene " + scene.scene_id + " has no truth");
        for (const auto& t : *scene.truth) {
            if (t.embedding.size() > 0) {
                out.push_back({t.class_id, t.embedding});
                continue;
            }
            // fall back to the best-overlapping detection
            double best = kDefaultMatchIou;
            const Proposal* match = nullptr;
            for (const auto& p : scene.proposals) {
                const double v = iou_axis_aligned(p.box, t.box);
                if (v >= best) {
                    best = v;
                    match = &p;
                }
            }
            if (match) out.push_back({t.class_id, match->embedding});
        }
    }
    return out;
}

std::vector<const SceneRecord*> sorted_by_id(std::span<const SceneRecord> scenes) {
    std::vector<const SceneRecord*> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back(&s);
    std::stable_sort(out.begin(), out.end(),
                     [](const SceneRecord* a, const SceneRecord* b) { return a->scene_id < b->scene_id; });
    return out;
}

}  // namespace

std::vector<ObjectObservation> observations(const SceneRecord& scene) {
    std::vector<ObjectObservation> out;
    out.reserve(scene.proposals.size());
    for (const auto& p : scene.proposals)
        out.push_back({p.embedding, p.predicted_class, p.consistency_iou});
    return out;
}

PrototypeBank init_bank(std::span<const SceneRecord> labeled, int num_classes, double tau_sim) {
    if (num_classes < 1) throw std::invalid_argument("init_bank: num_classes must be positive");
    PrototypeBank bank;
    bank.num_classes = num_classes;
    bank.tau_sim = tau_sim;
    bank.classes.resize(static_cast<std::size_t>(num_classes));

    std::vector<Eigen::VectorXd> sums(static_cast<std::size_t>(num_classes));
    std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
    Eigen::Index dim = 0;
    for (const auto& obj : labeled_objects(labeled)) {
        if (obj.class_id < 0 || obj.class_id >= num_classes)
            throw std::invalid_argument("init_bank: truth class out of range");
        auto& s = sums[static_cast<std::size_t>(obj.class_id)];
        if (s.size() == 0) s = Eigen::VectorXd::Zero(obj.embedding.size());
        s += obj.embedding;
        ++counts[static_cast<std::size_t>(obj.class_id)];
        dim = obj.embedding.size();
    }
    for (int c = 0; c < num_classes; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        Prototype p;
        if (counts[ci] > 0) {
            const Eigen::VectorXd mean = sums[ci] / counts[ci];
            if (mean.norm() > 0.0) p = seed_prototype(mean, 1.0);
        }
        if (p.weight == 0.0) {
            p.weighted_sum = Eigen::VectorXd::Zero(dim);
            p.empty = true;
        }
        bank.classes[ci].push_back(std::move(p));
    }
    return bank;
}

PrototypeBank build_bank(std::span<const SceneRecord> labeled,
                         std::span<const SceneRecord> unlabeled, int num_classes, double tau_sim,
                         std::size_t batch_size, std::vector<AssignmentEvent>* log) {
    if (batch_size == 0) throw std::invalid_argument("build_bank: batch_size must be positive");
    auto bank = init_bank(labeled, num_classes, tau_sim);
    const auto order = sorted_by_id(unlabeled);
    std::vector<ObjectObservation> batch;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        batch.clear();
        const std::size_t stop = std::min(order.size(), start + batch_size);
        for (std::size_t i = start; i < stop; ++i) {
            auto obs = observations(*order[i]);
            batch.insert(batch.end(), obs.begin(), obs.end());
        }
        bank = update_batch(std::move(bank), batch, log);
    }
    return bank;
}

PrototypeBank build_fixed_bank(std::span<const SceneRecord> labeled,
                               std::span<const SceneRecord> unlabeled, int num_classes,
                               int per_class, std::uint64_t seed, double tau_sim) {
    if (per_class < 1) throw std::invalid_argument("build_fixed_bank: per_class must be positive");
    std::vector<std::vector<Eigen::VectorXd>> per(static_cast<std::size_t>(num_classes));
    Eigen::Index dim = 0;
    const auto add = [&](int c, const Eigen::VectorXd& v) {
        if (c < 0 || c >= num_classes || v.norm() == 0.0) return;
        per[static_cast<std::size_t>(c)].push_back(v.normalized());
        dim = v.size();
    };
    for (const auto& obj : labeled_objects(labeled)) add(obj.class_id, obj.embedding);
    for (const auto* scene : sorted_by_id(unlabeled))
        for (const auto& p : scene->proposals)
            if (p.consistency_iou > 0.0) add(p.predicted_class, p.embedding);

    PrototypeBank bank;
    bank.num_classes = num_classes;
    bank.tau_sim = tau_sim;
    bank.adaptive = false;
    bank.classes.resize(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) {
        const auto& vs = per[static_cast<std::size_t>(c)];
        auto& protos = bank.classes[static_cast<std::size_t>(c)];
        if (vs.empty()) {
            Prototype p;
            p.weighted_sum = Eigen::VectorXd::Zero(dim);
            p.empty = true;
            protos.push_back(std::move(p));
            continue;
        }
        Eigen::MatrixXd pts(static_cast<Eigen::Index>(vs.size()), vs.front().size());
        for (std::size_t i = 0; i < vs.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = vs[i];
        const int k = std::min<int>(per_class, static_cast<int>(vs.size()));
        const auto km = kmeans_pp(pts, k, seed + static_cast<std::uint64_t>(c));
        std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
        for (int l : km.labels) counts[static_cast<std::size_t>(l)] += 1.0;
        for (int j = 0; j < k; ++j) {
            const Eigen::VectorXd centroid = km.centroids.row(j).transpose();
            if (counts[static_cast<std::size_t>(j)] == 0.0 || centroid.norm() == 0.0) continue;
            protos.push_back(seed_prototype(centroid, counts[static_cast<std::size_t>(j)]));
        }
        if (protos.empty()) protos.push_back(seed_prototype(vs.front(), 1.0));
    }
    return bank;
}

void to_json(nlohmann::json& j, const PrototypeBank& bank) {
    j = nlohmann::json{{"format", "capal-bank"},
                       {"version", 1},
                       {"num_classes", bank.num_classes},
                       {"tau_sim", bank.tau_sim},
                       {"adaptive", bank.adaptive}};
    auto classes = nlohmann::json::array();
    for (const auto& protos : bank.classes) {
        auto arr = nlohmann::json::array();
        for (const auto& p : protos) {
            std::vector<double> sum(p.weighted_sum.data(), p.weighted_sum.data() + p.weighted_sum.size());
            arr.push_back({{"sum", sum}, {"weight", p.weight}, {"empty", p.empty}});
        }
        classes.push_back(std::move(arr));
    }
    j["classes"] = std::move(classes);
}

void from_json(const nlohmann::json& j, PrototypeBank& bank) {
    if (j.at("format") != "capal-bank") throw std::runtime_error("not a capal-bank record");
    if (j.at("version") != 1) throw std::runtime_error("unsupported capal-bank version");
    bank = PrototypeBank{};
    bank.num_classes = j.at("num_classes").get<int>();
    bank.tau_sim = j.at("tau_sim").get<double>();
    bank.adaptive = j.at("adaptive").get<bool>();
    for (const auto& arr : j.at("classes")) {
        std::vector<Prototype> protos;
        for (const auto& pj : arr) {
            const auto sum = pj.at("sum").get<std::vector<double>>();
            Prototype p;
            p.weighted_sum = Eigen::Map<const Eigen::VectorXd>(sum.data(), static_cast<Eigen::Index>(sum.size()));
            p.weight = pj.at("weight").get<double>();
            p.empty = pj.at("empty").get<bool>();
            protos.push_back(std::move(p));
        }
        bank.classes.push_back(std::move(protos));
    }
    if (static_cast<int>(bank.classes.size()) != bank.num_classes)
        throw std::runtime_error("capal-bank: class list length mismatch");
}

}  // namespace capal
