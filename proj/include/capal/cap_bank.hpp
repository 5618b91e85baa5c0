#ifndef CAPAL_CAP_BANK_HPP
#define CAPAL_CAP_BANK_HPP

#include "capal/scene.hpp"

#include <Eigen/Core>

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace capal {

/// Cosine of the angle between two nonzero vectors.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& o,
                                            const Eigen::MatrixBase<DerivedB>& mu) {
    using Scalar = typename DerivedA::Scalar;
    const Scalar no = o.norm(), nm = mu.norm();
    if (no == Scalar(0) || nm == Scalar(0))
        throw std::invalid_argument("cosine_similarity: zero vector");
    if (o.size() != mu.size()) throw std::invalid_argument("cosine_similarity: size mismatch");
    const Scalar s = o.dot(mu) / (no * nm);
    return std::clamp(s, Scalar(-1), Scalar(1));
}

/// One prototype kept as a running IoU-weighted mean.
struct Prototype {
    Eigen::VectorXd weighted_sum;
    double weight = 0.0;
    /// Placeholder for a class with no labeled objects; takes the first
    /// object assigned to it verbatim.
    bool empty = false;

    Eigen::VectorXd vector() const {
        return weight > 0.0 ? Eigen::VectorXd(weighted_sum / weight) : weighted_sum;
    }
};

/// Per-class variable-length prototype sets.
struct PrototypeBank {
    int num_classes = 0;
    double tau_sim = 0.3;
    /// When false the prototype sets are frozen and every object goes to its
    /// most similar prototype (fixed-count ablation).
    bool adaptive = true;
    std::vector<std::vector<Prototype>> classes;

    std::size_t prototype_count(int c) const { return classes.at(static_cast<std::size_t>(c)).size(); }
    std::size_t total_prototypes() const;
    /// Offset of class c's first prototype in the flattened (c,k) order.
    std::size_t class_offset(int c) const;
};

/// One detected object as seen by the bank.
struct ObjectObservation {
    Eigen::VectorXd embedding;
    int predicted_class = 0;
    double consistency_iou = 1.0;
};

struct AssignmentEvent {
    int predicted_class = 0;
    std::size_t prototype = 0;
    bool created = false;
    std::size_t observation = 0;  // position in the processed stream
};

struct BestMatch {
    std::size_t index = 0;
    double similarity = -1.0;
};

/// Most similar prototype of class c, ties to the lowest index. An empty
/// placeholder matches with similarity 1.
BestMatch best_match(const PrototypeBank& bank, const Eigen::VectorXd& o, int c);

/// Threshold rule: the best prototype index if its similarity reaches tau_sim,
/// otherwise prototype_count(c), which signals a new prototype.
std::size_t assign(const PrototypeBank& bank, const Eigen::VectorXd& o, int c);

/// Assign and commit each observation in order. Observations with zero
/// consistency IoU are skipped.
PrototypeBank update_batch(PrototypeBank bank, std::span<const ObjectObservation> batch,
                           std::vector<AssignmentEvent>* log = nullptr);

/// One prototype per class: the mean embedding of the labeled objects of that
/// class, entered with pseudo-object weight 1. Objects use the truth embedding
/// when present, otherwise the embedding of the best-matching proposal.
PrototypeBank init_bank(std::span<const SceneRecord> labeled, int num_classes,
                        double tau_sim = 0.3);

/// init_bank, then update_batch over the unlabeled scenes' proposals in
/// ascending scene_id order, batch_size scenes at a time.
PrototypeBank build_bank(std::span<const SceneRecord> labeled,
                         std::span<const SceneRecord> unlabeled, int num_classes,
                         double tau_sim = 0.3, std::size_t batch_size = 16,
                         std::vector<AssignmentEvent>* log = nullptr);

/// Fixed-count variant: per class, k-means (k = per_class) over the labeled
/// truth embeddings and unlabeled proposal embeddings of that class.
PrototypeBank build_fixed_bank(std::span<const SceneRecord> labeled,
                               std::span<const SceneRecord> unlabeled, int num_classes,
                               int per_class, std::uint64_t seed, double tau_sim = 0.3);

std::vector<ObjectObservation> observations(const SceneRecord& scene);

void to_json(nlohmann::json& j, const PrototypeBank& bank);
void from_json(const nlohmann::json& j, PrototypeBank& bank);

}  // namespace capal

#endif  // CAPAL_CAP_BANK_HPP
