#ifndef CAPAL_SCENE_HPP
#define CAPAL_SCENE_HPP

#include "capal/geometry.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace capal {

/// One detected object as reported by the detector.
struct Proposal {
    Box3d box;
    Eigen::VectorXd class_probs;
    Eigen::VectorXd embedding;
    /// IoU between this detection and its counterpart under weak input perturbation.
    double consistency_iou = 1.0;
    int predicted_class = 0;
    /// Pooled feature of the box region (mean over the region) and its pooling mass.
    /// Needed to put the region back into the masked feature during augmentation.
    Eigen::VectorXd feature_contribution;
    double feature_weight = 0.0;
    /// Optional stochastic forward passes, one probability vector per row.
    Eigen::MatrixXd mc_samples;
};

/// Simulator-only annotations that the proxy evaluation needs. Real detector
/// exports leave these at -1.
struct TruthObject {
    Box3d box;
    int class_id = 0;
    Eigen::VectorXd embedding;  // empty when unavailable
    int mode = -1;
};

struct SceneRecord {
    std::string scene_id;
    std::vector<Proposal> proposals;
    Eigen::VectorXd global_feature;
    Eigen::VectorXd masked_feature;
    /// Pooling mass behind masked_feature (regions not covered by a detection).
    double masked_weight = 0.0;
    std::optional<std::vector<TruthObject>> truth;
    int scene_type = -1;

    bool labeled() const { return truth.has_value(); }
};

/// Index of the largest entry, ties to the lowest index.
inline int argmax_class(const Eigen::VectorXd& p) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < p.size(); ++i)
        if (p[i] > p[best]) best = i;
    return static_cast<int>(best);
}

/// Throws std::invalid_argument when a proposal violates its invariants.
void validate_proposal(const Proposal& p, double sum_tolerance = 1e-6);

/// Boxes of the proposals in order.
std::vector<Box3d> proposal_boxes(const SceneRecord& scene);
std::vector<Box3d> truth_boxes(const SceneRecord& scene);

}  // namespace capal

#endif  // CAPAL_SCENE_HPP
