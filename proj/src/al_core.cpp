#include "capal/al_core.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <stdexcept>
#include <unordered_map>

namespace capal {

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::random: return "random";
        case Strategy::entropy_only: return "entropy_only";
        case Strategy::coreset: return "coreset";
        case Strategy::ours_full: return "ours_full";
        case Strategy::ours_uncertainty_only: return "ours_uncertainty_only";
        case Strategy::ours_diversity_only: return "ours_diversity_only";
        case Strategy::greedy_original: return "greedy_original";
    }
    return "random";
}

std::vector<Strategy> all_strategies() {
    return {Strategy::random,           Strategy::entropy_only,          Strategy::coreset,
            Strategy::ours_full,        Strategy::ours_uncertainty_only, Strategy::ours_diversity_only,
            Strategy::greedy_original};
}

Strategy parse_strategy(const std::string& s) {
    for (auto st : all_strategies())
        if (to_string(st) == s) return st;
    throw std::invalid_argument("unknown strategy: " + s);
}

std::string to_string(BankMode m) { return m == BankMode::adaptive ? "adaptive" : "fixed_kmeans"; }

BankMode parse_bank_mode(const std::string& s) {
    if (s == "adaptive") return BankMode::adaptive;
    if (s == "fixed_kmeans") return BankMode::fixed_kmeans;
    throw std::invalid_argument("unknown bank mode: " + s);
}

int ALConfig::num_rounds() const {
    return static_cast<int>(std::lround((final_fraction - initial_fraction) / per_round_fraction));
}

std::size_t ALConfig::initial_count(std::size_t pool_size) const {
    return static_cast<std::size_t>(std::llround(initial_fraction * static_cast<double>(pool_size)));
}

std::size_t ALConfig::round_budget(std::size_t pool_size) const {
    return static_cast<std::size_t>(std::llround(per_round_fraction * static_cast<double>(pool_size)));
}

void ALConfig::validate() const {
    if (!(initial_fraction > 0.0 && initial_fraction <= 1.0))
        throw std::invalid_argument("al: initial_fraction must lie in (0,1]");
    if (!(per_round_fraction > 0.0)) throw std::invalid_argument("al: per_round_fraction must be > 0");
    if (final_fraction < initial_fraction || final_fraction > 1.0)
        throw std::invalid_argument("al: final_fraction must lie in [initial_fraction, 1]");
    const int r = num_rounds();
    if (std::abs(initial_fraction + r * per_round_fraction - final_fraction) > 1e-9)
        throw std::invalid_argument("al: initial + rounds * per_round must equal final_fraction");
    if (delta < 1) throw std::invalid_argument("al: delta must be >= 1");
    if (num_classes < 1) throw std::invalid_argument("al: num_classes must be >= 1");
    if (!(uncertainty.scale_k > 0.0)) throw std::invalid_argument("al: scale_k must be > 0");
    if (!(diversity.beta > 0.0)) throw std::invalid_argument("al: beta must be > 0");
    if (!(tau_sim >= -1.0 && tau_sim <= 1.0)) throw std::invalid_argument("al: tau_sim must lie in [-1,1]");
    if (bank_batch_size == 0) throw std::invalid_argument("al: bank_batch_size must be >= 1");
    if (fixed_prototypes_per_class < 1) throw std::invalid_argument("al: fixed_prototypes_per_class must be >= 1");
    if (!(regressor.learning_rate > 0.0)) throw std::invalid_argument("al: learning_rate must be > 0");
}

void RoundState::check() const {
    std::set<std::string> seen;
    for (const auto& id : labeled)
        if (!seen.insert(id).second) throw std::logic_error("round state: duplicate id " + id);
    for (const auto& id : unlabeled)
        if (!seen.insert(id).second) throw std::logic_error("round state: id both labeled and unlabeled: " + id);
}

std::uint64_t round_seed(std::uint64_t seed, int round) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(round), 0x5eedu};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

RoundState initial_state(std::span<const std::string> pool_ids, const ALConfig& cfg) {
    cfg.validate();
    std::vector<std::string> ids(pool_ids.begin(), pool_ids.end());
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        throw std::invalid_argument("initial_state: duplicate scene ids");
    const std::size_t n0 = cfg.initial_count(ids.size());
    if (n0 > ids.size()) throw std::invalid_argument("initial_state: initial budget exceeds pool");

    RoundState st;
    st.seed = cfg.seed;
    st.rng_seed = round_seed(cfg.seed, 0);
    std::mt19937_64 rng(st.rng_seed);
    std::vector<std::string> shuffled = ids;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    st.labeled.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n0));
    std::sort(st.labeled.begin(), st.labeled.end());
    std::set_difference(ids.begin(), ids.end(), st.labeled.begin(), st.labeled.end(),
                        std::back_inserter(st.unlabeled));
    st.selected = st.labeled;
    return st;
}

namespace {

using SceneIndex = std::unordered_map<std::string, const SceneRecord*>;

SceneIndex index_scenes(std::span<const SceneRecord> scenes) {
    SceneIndex idx;
    for (const auto& s : scenes)
        if (!idx.emplace(s.scene_id, &s).second)
            throw std::invalid_argument("duplicate scene id in pool: " + s.scene_id);
    return idx;
}

std::vector<SceneRecord> gather(const SceneIndex& idx, const std::vector<std::string>& ids,
                                bool need_truth) {
    std::vector<SceneRecord> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        const auto it = idx.find(id);
        if (it == idx.end()) throw std::invalid_argument("model outputs missing scene " + id);
        if (need_truth && !it->second->truth)
            throw std::invalid_argument("labeled scene " + id + " has no truth");
        out.push_back(*it->second);
        if (!need_truth) out.back().truth.reset();
    }
    return out;
}

std::vector<std::string> top_by_score(const std::vector<std::string>& ids,
                                      const std::vector<double>& scores, std::size_t count) {
    return top_k_candidates(ids, scores, count, 1).ids;
}

std::vector<double> normalized_or_flat(const std::vector<double>& raw, double k) {
    if (raw.size() < 2) return std::vector<double>(raw.size(), 0.5);
    return normalize_scores(raw, k);
}

/// Unified uncertainty for the unlabeled scenes.
std::vector<double> unified_scores(const std::vector<SceneRecord>& labeled,
                                   const std::vector<SceneRecord>& unlabeled, const ALConfig& cfg,
                                   std::uint64_t rng_seed) {
    const auto& ucfg = cfg.uncertainty;
    std::vector<double> det, undet;
    if (ucfg.terms != UncertaintyTerms::undetected_only) {
        std::vector<std::optional<double>> raw;
        raw.reserve(unlabeled.size());
        for (const auto& s : unlabeled) raw.push_back(detected_uncertainty(s, ucfg));
        det = normalized_or_flat(fill_undefined_with_max(raw), ucfg.scale_k);
    }
    if (ucfg.terms != UncertaintyTerms::detected_only) {
        TrainConfig tc = cfg.regressor;
        tc.seed = cfg.regressor.seed ^ rng_seed;
        tc.iou_threshold = ucfg.undet_iou_threshold;
        const auto params = train(labeled, tc);
        std::vector<double> raw;
        raw.reserve(unlabeled.size());
        for (const auto& s : unlabeled) raw.push_back(forward(params, s.global_feature, s.masked_feature));
        undet = normalized_or_flat(raw, ucfg.scale_k);
    }
    if (det.empty()) return undet;
    if (undet.empty()) return det;
    std::vector<double> out(det.size());
    for (std::size_t i = 0; i < det.size(); ++i) out[i] = det[i] * undet[i];
    return out;
}

PrototypeBank make_bank(const std::vector<SceneRecord>& labeled,
                        const std::vector<SceneRecord>& unlabeled, const ALConfig& cfg,
                        std::uint64_t rng_seed) {
    if (cfg.bank_mode == BankMode::fixed_kmeans)
        return build_fixed_bank(labeled, unlabeled, cfg.num_classes, cfg.fixed_prototypes_per_class,
                                rng_seed, cfg.tau_sim);
    return build_bank(labeled, unlabeled, cfg.num_classes, cfg.tau_sim, cfg.bank_batch_size);
}

std::vector<DiverseCandidate> candidates_for(const std::vector<std::string>& ids,
                                             const SceneIndex& idx, const PrototypeBank& bank) {
    std::vector<DiverseCandidate> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back({id, scene_histogram(idx.at(id)->proposals, bank)});
    return out;
}

std::vector<std::string> coreset_select(const std::vector<SceneRecord>& labeled,
                                        const std::vector<SceneRecord>& unlabeled, std::size_t budget) {
    std::vector<double> dist(unlabeled.size(), std::numeric_limits<double>::infinity());
    const auto relax = [&](const Eigen::VectorXd& centre) {
        for (std::size_t i = 0; i < unlabeled.size(); ++i)
            dist[i] = std::min(dist[i], (unlabeled[i].global_feature - centre).squaredNorm());
    };
    for (const auto& s : labeled) relax(s.global_feature);
    std::vector<bool> taken(unlabeled.size(), false);
    std::vector<std::string> picked;
    for (std::size_t step = 0; step < budget; ++step) {
        std::size_t best = unlabeled.size();
        for (std::size_t i = 0; i < unlabeled.size(); ++i) {
            if (taken[i]) continue;
            if (best == unlabeled.size() || dist[i] > dist[best]) best = i;  // ids are sorted
        }
        taken[best] = true;
        picked.push_back(unlabeled[best].scene_id);
        relax(unlabeled[best].global_feature);
    }
    return picked;
}

}  // namespace

RoundState run_round(const RoundState& state, std::span<const SceneRecord> scenes,
                     const ALConfig& cfg) {
    cfg.validate();
    state.check();
    const std::size_t pool_size = state.labeled.size() + state.unlabeled.size();
    const std::size_t budget = cfg.round_budget(pool_size);
    if (budget > state.unlabeled.size())
        throw std::invalid_argument("run_round: budget " + std::to_string(budget) +
                                    " exceeds the unlabeled pool (" +
                                    std::to_string(state.unlabeled.size()) + ")");

    RoundState next;
    next.round = state.round + 1;
    next.seed = state.seed;
    next.rng_seed = round_seed(state.seed, next.round);
    std::mt19937_64 rng(next.rng_seed);

    const auto idx = index_scenes(scenes);
    const bool needs_labeled = cfg.strategy != Strategy::random && cfg.strategy != Strategy::entropy_only;
    const auto labeled = needs_labeled ? gather(idx, state.labeled, true) : std::vector<SceneRecord>{};
    const auto unlabeled = cfg.strategy == Strategy::random ? std::vector<SceneRecord>{}
                                                            : gather(idx, state.unlabeled, false);
    const std::size_t k_pool = std::min(state.unlabeled.size(), budget * static_cast<std::size_t>(cfg.delta));

    DiversityConfig dcfg = cfg.diversity;
    if (dcfg.num_clusters <= 0) dcfg.num_clusters = cfg.num_classes;
    dcfg.seed = cfg.diversity.seed ^ next.rng_seed;

    std::vector<std::string> picked;
    switch (cfg.strategy) {
        case Strategy::random: {
            auto ids = state.unlabeled;
            std::shuffle(ids.begin(), ids.end(), rng);
            picked.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(budget));
            break;
        }
        case Strategy::entropy_only: {
            UncertaintyConfig plain;
            plain.consistency_weighting = false;
            std::vector<std::optional<double>> raw;
            for (const auto& s : unlabeled) raw.push_back(detected_uncertainty(s, plain));
            const auto scores = fill_undefined_with_max(raw);
            for (std::size_t i = 0; i < unlabeled.size(); ++i) next.score_cache[unlabeled[i].scene_id] = scores[i];
            picked = top_by_score(state.unlabeled, scores, budget);
            break;
        }
        case Strategy::coreset:
            picked = coreset_select(labeled, unlabeled, budget);
            break;
        case Strategy::ours_full:
        case Strategy::ours_uncertainty_only:
        case Strategy::greedy_original: {
            const auto scores = unified_scores(labeled, unlabeled, cfg, next.rng_seed);
            for (std::size_t i = 0; i < unlabeled.size(); ++i) next.score_cache[unlabeled[i].scene_id] = scores[i];
            if (cfg.strategy == Strategy::ours_uncertainty_only) {
                picked = top_by_score(state.unlabeled, scores, budget);
                break;
            }
            const auto pool = top_by_score(state.unlabeled, scores, k_pool);
            next.bank = make_bank(labeled, unlabeled, cfg, next.rng_seed);
            const auto cands = candidates_for(pool, idx, *next.bank);
            if (cfg.strategy == Strategy::greedy_original)
                picked = greedy_select(cands, budget, cfg.diversity.beta);
            else
                picked = select_diverse(cands, budget, dcfg).ids;
            break;
        }
        case Strategy::ours_diversity_only: {
            auto ids = state.unlabeled;
            std::shuffle(ids.begin(), ids.end(), rng);
            ids.resize(k_pool);
            next.bank = make_bank(labeled, unlabeled, cfg, next.rng_seed);
            const auto cands = candidates_for(ids, idx, *next.bank);
            picked = select_diverse(cands, budget, dcfg).ids;
            break;
        }
    }

    if (picked.size() != budget) throw std::logic_error("run_round: selection size mismatch");
    next.selected = picked;
    std::vector<std::string> sorted_pick = picked;
    std::sort(sorted_pick.begin(), sorted_pick.end());
    std::set_union(state.labeled.begin(), state.labeled.end(), sorted_pick.begin(), sorted_pick.end(),
                   std::back_inserter(next.labeled));
    std::set_difference(state.unlabeled.begin(), state.unlabeled.end(), sorted_pick.begin(),
                        sorted_pick.end(), std::back_inserter(next.unlabeled));
    if (next.labeled.size() != state.labeled.size() + budget)
        throw std::logic_error("run_round: a selected scene was already labeled");
    next.check();
    return next;
}

namespace {

double labeled_fraction(const RoundState& s) {
    const double n = static_cast<double>(s.labeled.size() + s.unlabeled.size());
    return n > 0.0 ? static_cast<double>(s.labeled.size()) / n : 0.0;
}

RoundMetrics metrics_for(const RoundState& s, const EvaluateFn& evaluate, const ALConfig& cfg,
                         double wall_ms) {
    RoundMetrics m;
    m.strategy = to_string(cfg.strategy);
    m.seed = cfg.seed;
    m.round = s.round;
    m.labeled_fraction = labeled_fraction(s);
    if (evaluate) {
        const auto e = evaluate(s.labeled);
        m.proxy_map25 = e.map25;
        m.proxy_map50 = e.map50;
    }
    m.wall_ms = wall_ms;
    m.selected = s.selected;
    return m;
}

}  // namespace

ExperimentResult resume_experiment(RoundState state, const DetectorFn& detector,
                                   const EvaluateFn& evaluate, const ALConfig& cfg,
                                   int until_round, const RoundHook& hook) {
    ExperimentResult res;
    while (state.round < until_round) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto outputs = detector(state.labeled);
        state = run_round(state, outputs, cfg);
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        res.metrics.push_back(metrics_for(state, evaluate, cfg, ms));
        if (hook) hook(state);
    }
    res.final_state = std::move(state);
    return res;
}

ExperimentResult run_experiment(std::span<const std::string> pool_ids, const DetectorFn& detector,
                                const EvaluateFn& evaluate, const ALConfig& cfg, int rounds,
                                const RoundHook& hook) {
    const auto t0 = std::chrono::steady_clock::now();
    auto state = initial_state(pool_ids, cfg);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    ExperimentResult res;
    res.metrics.push_back(metrics_for(state, evaluate, cfg, ms));
    if (hook) hook(state);
    auto rest = resume_experiment(std::move(state), detector, evaluate, cfg, rounds, hook);
    res.metrics.insert(res.metrics.end(), rest.metrics.begin(), rest.metrics.end());
    res.final_state = std::move(rest.final_state);
    return res;
}

namespace {
constexpr const char* kStateFormat = "capal-round-state";
constexpr int kStateVersion = 1;
}  // namespace

void save_state(const std::string& path, const RoundState& state, const std::string& config_hash) {
    nlohmann::json j{{"format", kStateFormat},
                     {"version", kStateVersion},
                     {"config_hash", config_hash},
                     {"round", state.round},
                     {"seed", state.seed},
                     {"rng_seed", state.rng_seed},
                     {"labeled", state.labeled},
                     {"unlabeled", state.unlabeled},
                     {"selected", state.selected},
                     {"score_cache", state.score_cache}};
    j["bank"] = state.bank ? nlohmann::json(*state.bank) : nlohmann::json(nullptr);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw std::runtime_error("cannot open " + tmp + " for writing");
        os << j.dump(1) << '\n';
        if (!os) throw std::runtime_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

RoundState load_state(const std::string& path, std::string* config_hash) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    const auto j = nlohmann::json::parse(is);
    if (j.at("format") != kStateFormat) throw std::runtime_error(path + ": not a round-state checkpoint");
    if (j.at("version") != kStateVersion) throw std::runtime_error(path + ": unsupported checkpoint version");
    RoundState st;
    st.round = j.at("round").get<int>();
    st.seed = j.at("seed").get<std::uint64_t>();
    st.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    st.labeled = j.at("labeled").get<std::vector<std::string>>();
    st.unlabeled = j.at("unlabeled").get<std::vector<std::string>>();
    st.selected = j.at("selected").get<std::vector<std::string>>();
    st.score_cache = j.at("score_cache").get<std::map<std::string, double>>();
    if (!j.at("bank").is_null()) st.bank = j.at("bank").get<PrototypeBank>();
    if (config_hash) *config_hash = j.at("config_hash").get<std::string>();
    st.check();
    return st;
}

}  // namespace capal
