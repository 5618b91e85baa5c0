#include "capal/geometry.hpp"
#include "capal/scene.hpp"

#include <cmath>
#include <string>

namespace capal {

template double iou_axis_aligned<double>(const Box3d&, const Box3d&);
template std::size_t undetected_count<double>(std::span<const Box3d>, std::span<const Box3d>,
                                              double);
template std::size_t greedy_undetected_count<double>(std::span<const Box3d>,
                                                     std::span<const Box3d>, double);

void validate_proposal(const Proposal& p, double sum_tolerance) {
    if (!p.box.valid()) throw std::invalid_argument("proposal: invalid box");
    const auto& pr = p.class_probs;
    if (pr.size() == 0) throw std::invalid_argument("proposal: empty class_probs");
    if (!pr.allFinite() || (pr.array() < 0.0).any() || (pr.array() > 1.0).any())
        throw std::invalid_argument("proposal: class_probs entries must lie in [0,1]");
    if (std::abs(pr.sum() - 1.0) > sum_tolerance)
        throw std::invalid_argument("proposal: class_probs sum to " + std::to_string(pr.sum()));
    if (!(p.consistency_iou >= 0.0 && p.consistency_iou <= 1.0))
        throw std::invalid_argument("proposal: consistency_iou must lie in [0,1]");
    if (p.predicted_class != argmax_class(pr))
        throw std::invalid_argument("proposal: predicted_class is not argmax(class_probs)");
}

std::vector<Box3d> proposal_boxes(const SceneRecord& scene) {
    std::vector<Box3d> out;
    out.reserve(scene.proposals.size());
    for (const auto& p : scene.proposals) out.push_back(p.box);
    return out;
}

std::vector<Box3d> truth_boxes(const SceneRecord& scene) {
    std::vector<Box3d> out;
    if (!scene.truth) return out;
    for (const auto& t : *scene.truth) out.push_back(t.box);
    return out;
}

}  // namespace capal
