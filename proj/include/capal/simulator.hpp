#ifndef CAPAL_SIMULATOR_HPP
#define CAPAL_SIMULATOR_HPP

#include "capal/scene.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace capal {

/// Parameters of the synthetic indoor world and of the simulated detector.
/// Every value here is a benchmark convention of this repository.
struct WorldSpec {
    int num_classes = 18;
    /// True intra-class modes per class; cycled when shorter than num_classes.
    std::vector<int> modes_per_class = {3, 1, 4, 2, 1, 3, 2, 4, 1, 2, 3, 1, 4, 2, 3, 1, 2, 3};
    /// Relative weight of mode m inside its class is mode_decay^m.
    double mode_decay = 0.5;
    /// Class frequencies; when empty they follow (c+1)^-zipf_exponent.
    std::vector<double> class_frequencies;
    double zipf_exponent = 1.0;
    int num_scene_types = 6;
    /// Class weight multiplier outside a scene type's home classes.
    double off_type_weight = 0.03;
    double mean_objects = 8.0;
    int min_objects = 2;
    int max_objects = 16;

    int embedding_dim = 32;
    int feature_dim = 16;
    /// Per-dimension spread of object embeddings around their mode direction.
    double embedding_spread = 0.12;
    double detector_embedding_noise = 0.05;
    double feature_noise = 0.1;
    /// Norm of the feature component shared by all object regions.
    double objectness = 3.0;

    // detector degradation as a function of labeled coverage
    double max_miss_rate = 0.9;
    double coverage_scale = 30.0;
    double class_share = 0.25;
    double max_confusion = 0.3;
    double temperature_min = 0.5;
    double temperature_max = 3.0;
    double logit_signal = 4.0;
    double logit_noise = 1.0;
    double box_jitter = 0.05;
    double box_jitter_growth = 0.1;
    double perturb_jitter = 0.03;
    double perturb_jitter_growth = 0.25;
    double fp_rate = 1.5;
    double fp_perturb_jitter = 0.5;
    int max_false_positives = 6;
    double noise_scale = 1.0;
    int mc_samples = 5;
    double mc_noise = 0.5;
    double background_weight = 4.0;
    double fp_region_weight = 0.5;

    std::uint64_t seed = 0;

    int modes_of(int c) const;
    std::vector<double> frequencies() const;
    /// Throws std::invalid_argument on a degenerate spec.
    void validate() const;
};

/// Hidden per-scene state the detector simulation needs.
struct HiddenScene {
    std::vector<Eigen::VectorXd> object_features;
    Eigen::VectorXd background;
};

/// Fixed world geometry derived from the spec seed.
struct WorldModel {
    std::vector<std::vector<Eigen::VectorXd>> mode_directions;  // [class][mode]
    std::vector<Eigen::VectorXd> class_signatures;
    std::vector<Eigen::VectorXd> type_signatures;
    Eigen::MatrixXd type_templates;  // types x classes, rows sum to 1
    std::vector<double> class_sizes;
};

struct SimPool {
    WorldSpec spec;
    WorldModel world;
    /// Scenes carry hidden truth (class, mode, embedding) and scene type; no proposals.
    std::vector<SceneRecord> scenes;
    std::vector<HiddenScene> hidden;
};

WorldModel make_world(const WorldSpec& spec);

SimPool generate_pool(const WorldSpec& spec, std::size_t n_scenes);

/// Detector outputs for every scene of the pool given the labeled set.
/// Returned scenes keep the truth. Deterministic in (spec.seed, labeled ids).
std::vector<SceneRecord> simulate_detector(const SimPool& pool, std::span<const std::string> labeled);

struct ProxyScores {
    double map25 = 0.0;
    double map50 = 0.0;
};

/// Closed-form stand-in for detector quality. Increases with per-class
/// labeled counts, intra-class mode coverage and scene-type coverage, each
/// with diminishing returns; 0 with nothing labeled and 1 with everything.
ProxyScores proxy_quality(std::span<const SceneRecord> scenes, std::span<const std::string> labeled,
                          const WorldSpec& spec);

/// Fraction of truth objects matched by some detection across the scenes.
double detection_recall(std::span<const SceneRecord> outputs, double iou_threshold = 0.25);

/// FNV-1a over the sorted ids.
std::uint64_t hash_ids(std::span<const std::string> ids);

}  // namespace capal

#endif  // CAPAL_SIMULATOR_HPP
