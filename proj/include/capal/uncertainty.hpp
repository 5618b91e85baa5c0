#ifndef CAPAL_UNCERTAINTY_HPP
#define CAPAL_UNCERTAINTY_HPP

#include "capal/scene.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace capal {

enum class UncertaintyMeasure { entropy, margin, mc_dropout_proxy };

/// Which of the two uncertainty terms enter the unified score.
enum class UncertaintyTerms { both, detected_only, undetected_only };

struct UncertaintyConfig {
    double scale_k = 3.0;
    UncertaintyMeasure measure = UncertaintyMeasure::entropy;
    double undet_iou_threshold = 0.25;
    /// When false, every proposal gets unit weight in the detected score.
    bool consistency_weighting = true;
    UncertaintyTerms terms = UncertaintyTerms::both;
};

std::string to_string(UncertaintyMeasure m);
UncertaintyMeasure parse_uncertainty_measure(const std::string& s);
std::string to_string(UncertaintyTerms t);
UncertaintyTerms parse_uncertainty_terms(const std::string& s);

namespace detail {
template <typename Derived>
void check_distribution(const Eigen::DenseBase<Derived>& p) {
    using Scalar = typename Derived::Scalar;
    if (p.size() == 0) throw std::invalid_argument("probability vector is empty");
    if ((p.derived().array() < Scalar(0)).any() || (p.derived().array() > Scalar(1)).any())
        throw std::invalid_argument("probability entries must lie in [0,1]");
    if (std::abs(p.sum() - Scalar(1)) > Scalar(1e-6))
        throw std::invalid_argument("probability vector does not sum to 1");
}
}  // namespace detail

/// Shannon entropy in nats, with 0 log 0 = 0.
template <typename Derived>
typename Derived::Scalar shannon_entropy(const Eigen::DenseBase<Derived>& p) {
    using Scalar = typename Derived::Scalar;
    detail::check_distribution(p);
    Scalar h(0);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const Scalar v = p.derived().coeff(i);
        if (v > Scalar(0)) h -= v * std::log(v);
    }
    return h;
}

/// 1 - (p_(1) - p_(2)): zero for a one-hot vector, one for a tie at the top.
template <typename Derived>
typename Derived::Scalar probability_margin(const Eigen::DenseBase<Derived>& p) {
    using Scalar = typename Derived::Scalar;
    if (p.size() < 2) throw std::invalid_argument("probability_margin needs at least 2 classes");
    detail::check_distribution(p);
    Scalar first = p.derived().coeff(0), second = p.derived().coeff(1);
    if (second > first) std::swap(first, second);
    for (Eigen::Index i = 2; i < p.size(); ++i) {
        const Scalar v = p.derived().coeff(i);
        if (v > first) {
            second = first;
            first = v;
        } else if (v > second) {
            second = v;
        }
    }
    return Scalar(1) - (first - second);
}

/// Entropy of the mean of stochastic forward passes (rows of `samples`).
double mc_dropout_entropy(const Eigen::MatrixXd& samples);

/// Per-proposal uncertainty under the configured measure. mc_dropout_proxy
/// falls back to plain entropy when the proposal carries no samples.
double proposal_uncertainty(const Proposal& p, UncertaintyMeasure measure);

/// Consistency-weighted mean of per-proposal uncertainty. std::nullopt when the
/// scene has no proposals or all weights are zero.
std::optional<double> detected_uncertainty(const SceneRecord& scene,
                                           const UncertaintyConfig& cfg = {});

/// Maps undefined scores to the maximum defined score in the batch (zero when
/// none is defined).
std::vector<double> fill_undefined_with_max(std::span<const std::optional<double>> raw);

/// max(0, (U - mean) / (k * std) + 0.5) with population statistics; all 0.5
/// when the spread is zero.
std::vector<double> normalize_scores(std::span<const double> raw, double scale_k);

/// Element-wise product of the two independently normalized sequences.
std::vector<double> unified_uncertainty(std::span<const double> det_scores,
                                        std::span<const double> undet_scores, double scale_k);

struct CandidatePool {
    std::vector<std::string> ids;
    bool shortfall = false;
};

/// The K = delta * budget ids with the highest score, ties by id.
CandidatePool top_k_candidates(std::span<const std::string> ids, std::span<const double> scores,
                               std::size_t budget, std::size_t delta);

}  // namespace capal

#endif  // CAPAL_UNCERTAINTY_HPP
