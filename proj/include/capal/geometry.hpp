#ifndef CAPAL_GEOMETRY_HPP
#define CAPAL_GEOMETRY_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace capal {

/// A 3D bounding box: center, extents and yaw. Yaw is carried for completeness
/// but every overlap computation here treats the box as axis-aligned.
template <typename Scalar>
struct Box3 {
    using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

    Vec3 center = Vec3::Zero();
    Vec3 size = Vec3::Ones();
    Scalar yaw = Scalar(0);

    Box3() = default;
    Box3(const Vec3& c, const Vec3& s, Scalar y = Scalar(0)) : center(c), size(s), yaw(y) {}

    bool valid() const {
        const Scalar pi = std::numbers::pi_v<Scalar>;
        return (size.array() > Scalar(0)).all() && yaw >= -pi && yaw < pi;
    }

    Vec3 min_corner() const { return center - size / Scalar(2); }
    Vec3 max_corner() const { return center + size / Scalar(2); }
    Scalar volume() const { return size.prod(); }
};

using Box3d = Box3<double>;

/// Intersection-over-union of two boxes, ignoring yaw.
template <typename Scalar>
Scalar iou_axis_aligned(const Box3<Scalar>& a, const Box3<Scalar>& b) {
    using Vec3 = typename Box3<Scalar>::Vec3;
    const Vec3 lo = a.min_corner().cwiseMax(b.min_corner());
    const Vec3 hi = a.max_corner().cwiseMin(b.max_corner());
    const Vec3 overlap = (hi - lo).cwiseMax(Scalar(0));
    const Scalar inter = overlap.prod();
    const Scalar uni = a.volume() + b.volume() - inter;
    if (inter <= Scalar(0)) return Scalar(0);
    return std::clamp(inter / uni, Scalar(0), Scalar(1));
}

inline constexpr double kDefaultMatchIou = 0.25;

namespace detail {

template <typename Scalar>
std::vector<std::vector<std::size_t>> match_graph(std::span<const Box3<Scalar>> predicted,
                                                  std::span<const Box3<Scalar>> truth,
                                                  Scalar iou_threshold) {
    if (!(iou_threshold > Scalar(0) && iou_threshold < Scalar(1)))
        throw std::invalid_argument("undetected_count: iou_threshold must lie in (0,1)");
    std::vector<std::vector<std::size_t>> adj(predicted.size());
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        std::vector<std::pair<Scalar, std::size_t>> row;
        for (std::size_t j = 0; j < truth.size(); ++j) {
            const Scalar v = iou_axis_aligned(predicted[i], truth[j]);
            if (v >= iou_threshold) row.emplace_back(v, j);
        }
        // highest overlap first, lower truth index on ties
        std::stable_sort(row.begin(), row.end(),
                         [](const auto& x, const auto& y) { return x.first > y.first; });
        for (const auto& [v, j] : row) adj[i].push_back(j);
    }
    return adj;
}

inline bool augment(std::size_t pred, const std::vector<std::vector<std::size_t>>& adj,
                    std::vector<std::ptrdiff_t>& owner, std::vector<bool>& seen) {
    for (std::size_t gt : adj[pred]) {
        if (seen[gt]) continue;
        seen[gt] = true;
        if (owner[gt] < 0 || augment(static_cast<std::size_t>(owner[gt]), adj, owner, seen)) {
            owner[gt] = static_cast<std::ptrdiff_t>(pred);
            return true;
        }
    }
    return false;
}

}  // namespace detail

/// Number of truth boxes left unmatched by a one-to-one matching between
/// predictions and truths whose IoU is at least the threshold. The matching
/// has maximum cardinality (augmenting paths, predictions visited in index
/// order, candidate truths in descending IoU), so the count is the smallest
/// achievable and never grows when a prediction is added.
template <typename Scalar>
std::size_t undetected_count(std::span<const Box3<Scalar>> predicted,
                             std::span<const Box3<Scalar>> truth,
                             Scalar iou_threshold = Scalar(kDefaultMatchIou)) {
    const auto adj = detail::match_graph(predicted, truth, iou_threshold);
    std::vector<std::ptrdiff_t> owner(truth.size(), -1);
    std::size_t matched = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        std::vector<bool> seen(truth.size(), false);
        if (detail::augment(i, adj, owner, seen)) ++matched;
    }
    return truth.size() - matched;
}

/// Greedy variant: repeatedly take the highest-IoU remaining pair. Ties go to
/// the lower prediction index, then the lower truth index. This can leave more
/// truths unmatched than undetected_count does.
template <typename Scalar>
std::size_t greedy_undetected_count(std::span<const Box3<Scalar>> predicted,
                                    std::span<const Box3<Scalar>> truth,
                                    Scalar iou_threshold = Scalar(kDefaultMatchIou)) {
    if (!(iou_threshold > Scalar(0) && iou_threshold < Scalar(1)))
        throw std::invalid_argument("greedy_undetected_count: iou_threshold must lie in (0,1)");

    struct Pair {
        Scalar iou;
        std::size_t pred;
        std::size_t gt;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        for (std::size_t j = 0; j < truth.size(); ++j) {
            const Scalar v = iou_axis_aligned(predicted[i], truth[j]);
            if (v >= iou_threshold) pairs.push_back({v, i, j});
        }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
        if (x.iou != y.iou) return x.iou > y.iou;
        if (x.pred != y.pred) return x.pred < y.pred;
        return x.gt < y.gt;
    });

    std::vector<bool> pred_used(predicted.size(), false);
    std::vector<bool> gt_used(truth.size(), false);
    std::size_t matched = 0;
    for (const auto& p : pairs) {
        if (pred_used[p.pred] || gt_used[p.gt]) continue;
        pred_used[p.pred] = gt_used[p.gt] = true;
        ++matched;
    }
    return truth.size() - matched;
}

inline std::size_t undetected_count(const std::vector<Box3d>& predicted,
                                    const std::vector<Box3d>& truth,
                                    double iou_threshold = kDefaultMatchIou) {
    return undetected_count<double>(std::span<const Box3d>(predicted),
                                    std::span<const Box3d>(truth), iou_threshold);
}

}  // namespace capal

#endif  // CAPAL_GEOMETRY_HPP
