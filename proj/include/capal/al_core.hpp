#ifndef CAPAL_AL_CORE_HPP
#define CAPAL_AL_CORE_HPP

#include "capal/cap_bank.hpp"
#include "capal/diversity.hpp"
#include "capal/regressor.hpp"
#include "capal/scene.hpp"
#include "capal/uncertainty.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace capal {

enum class Strategy {
    random,
    entropy_only,
    coreset,
    ours_full,
    ours_uncertainty_only,
    ours_diversity_only,
    greedy_original,
};

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);
std::vector<Strategy> all_strategies();

enum class BankMode { adaptive, fixed_kmeans };
std::string to_string(BankMode m);
BankMode parse_bank_mode(const std::string& s);

struct ALConfig {
    double initial_fraction = 0.02;
    double per_round_fraction = 0.02;
    double final_fraction = 0.10;
    int delta = 6;
    Strategy strategy = Strategy::ours_full;
    std::uint64_t seed = 0;
    int num_classes = 18;

    UncertaintyConfig uncertainty;
    TrainConfig regressor;
    /// num_clusters <= 0 means "use num_classes".
    DiversityConfig diversity{0.01, 0, 0};
    double tau_sim = 0.3;
    std::size_t bank_batch_size = 16;
    BankMode bank_mode = BankMode::adaptive;
    int fixed_prototypes_per_class = 3;

    int num_rounds() const;
    std::size_t initial_count(std::size_t pool_size) const;
    std::size_t round_budget(std::size_t pool_size) const;
    /// Throws std::invalid_argument when the schedule or a knob is invalid.
    void validate() const;
};

/// State between rounds. Ids are kept sorted.
struct RoundState {
    int round = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> labeled;
    std::vector<std::string> unlabeled;
    std::vector<std::string> selected;  // picked in the last round, in pick order
    std::optional<PrototypeBank> bank;
    std::map<std::string, double> score_cache;
    /// Seed of the stream that drove the last round.
    std::uint64_t rng_seed = 0;

    /// Throws std::logic_error when labeled/unlabeled overlap or a scene appears twice.
    void check() const;
};

/// Random initial labeled set of size initial_count(|pool|); depends only on
/// the seed and the pool ids, so every strategy starts from the same set.
RoundState initial_state(std::span<const std::string> pool_ids, const ALConfig& cfg);

/// Seed of the stream used by round r (r = 0 is the initial draw).
std::uint64_t round_seed(std::uint64_t seed, int round);

/// One acquisition round. `scenes` holds the current detector outputs for the
/// whole pool; truth is read only for labeled scenes.
RoundState run_round(const RoundState& state, std::span<const SceneRecord> scenes,
                     const ALConfig& cfg);

struct RoundMetrics {
    std::string strategy;
    std::uint64_t seed = 0;
    int round = 0;
    double labeled_fraction = 0.0;
    double proxy_map25 = 0.0;
    double proxy_map50 = 0.0;
    double wall_ms = 0.0;
    std::vector<std::string> selected;
};

struct EvalScores {
    double map25 = 0.0;
    double map50 = 0.0;
};

/// Detector outputs for the whole pool given the labeled ids.
using DetectorFn = std::function<std::vector<SceneRecord>(const std::vector<std::string>& labeled)>;
using EvaluateFn = std::function<EvalScores(const std::vector<std::string>& labeled)>;
/// Called after each completed round with the new state.
using RoundHook = std::function<void(const RoundState&)>;

struct ExperimentResult {
    std::vector<RoundMetrics> metrics;
    RoundState final_state;
};

/// Initial random draw followed by `rounds` acquisition rounds, evaluating
/// after each one.
ExperimentResult run_experiment(std::span<const std::string> pool_ids, const DetectorFn& detector,
                                const EvaluateFn& evaluate, const ALConfig& cfg, int rounds,
                                const RoundHook& hook = {});

/// Continue from a saved state until `until_round` rounds are done. Metrics
/// cover only the rounds run here.
ExperimentResult resume_experiment(RoundState state, const DetectorFn& detector,
                                   const EvaluateFn& evaluate, const ALConfig& cfg,
                                   int until_round, const RoundHook& hook = {});

/// Versioned JSON checkpoint, written to a temporary file and renamed.
void save_state(const std::string& path, const RoundState& state, const std::string& config_hash);
RoundState load_state(const std::string& path, std::string* config_hash = nullptr);

}  // namespace capal

#endif  // CAPAL_AL_CORE_HPP
