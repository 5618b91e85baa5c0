#include "capal/uncertainty.hpp"

#include <algorithm>
#include <numeric>

namespace capal {

std::string to_string(UncertaintyMeasure m) {
    switch (m) {
        case UncertaintyMeasure::entropy: return "entropy";
        case UncertaintyMeasure::margin: return "margin";
        case UncertaintyMeasure::mc_dropout_proxy: return "mc_dropout_proxy";
    }
    return "entropy";
}

UncertaintyMeasure parse_uncertainty_measure(const std::string& s) {
    if (s == "entropy") return UncertaintyMeasure::entropy;
    if (s == "margin") return UncertaintyMeasure::margin;
    if (s == "mc_dropout_proxy" || s == "mc_dropout") return UncertaintyMeasure::mc_dropout_proxy;
    throw std::invalid_argument("unknown uncertainty measure: " + s);
}

std::string to_string(UncertaintyTerms t) {
    switch (t) {
        case UncertaintyTerms::both: return "both";
        case UncertaintyTerms::detected_only: return "detected_only";
        case UncertaintyTerms::undetected_only: return "undetected_only";
    }
    return "both";
}

UncertaintyTerms parse_uncertainty_terms(const std::string& s) {
    if (s == "both") return UncertaintyTerms::both;
    if (s == "detected_only") return UncertaintyTerms::detected_only;
    if (s == "undetected_only") return UncertaintyTerms::undetected_only;
    throw std::invalid_argument("unknown uncertainty terms: " + s);
}

double mc_dropout_entropy(const Eigen::MatrixXd& samples) {
    if (samples.rows() == 0) throw std::invalid_argument("mc_dropout_entropy: no samples");
    const Eigen::VectorXd mean = samples.colwise().mean().transpose();
    return shannon_entropy(mean);
}

double proposal_uncertainty(const Proposal& p, UncertaintyMeasure measure) {
    switch (measure) {
        case UncertaintyMeasure::entropy: return shannon_entropy(p.class_probs);
        case UncertaintyMeasure::margin: return probability_margin(p.class_probs);
        case UncertaintyMeasure::mc_dropout_proxy:
            if (p.mc_samples.rows() > 0) return mc_dropout_entropy(p.mc_samples);
            return shannon_entropy(p.class_probs);
    }
    return shannon_entropy(p.class_probs);
}

std::optional<double> detected_uncertainty(const SceneRecord& scene,
                                           const UncertaintyConfig& cfg) {
    double num = 0.0, den = 0.0;
    for (const auto& p : scene.proposals) {
        const double w = cfg.consistency_weighting ? p.consistency_iou : 1.0;
        if (w <= 0.0) continue;
        num += w * proposal_uncertainty(p, cfg.measure);
        den += w;
    }
    if (den <= 0.0) return std::nullopt;
    return num / den;
}

std::vector<double> fill_undefined_with_max(std::span<const std::optional<double>> raw) {
    double fill = 0.0;
    bool any = false;
    for (const auto& v : raw)
        if (v) {
            fill = any ? std::max(fill, *v) : *v;
            any = true;
        }
    std::vector<double> out;
    out.reserve(raw.size());
    for (const auto& v : raw) out.push_back(v ? *v : fill);
    return out;
}

std::vector<double> normalize_scores(std::span<const double> raw, double scale_k) {
    if (raw.size() < 2) throw std::invalid_argument("normalize_scores needs at least 2 scores");
    if (!(scale_k > 0.0)) throw std::invalid_argument("normalize_scores: scale_k must be positive");

    const double n = static_cast<double>(raw.size());
    const double mean = std::accumulate(raw.begin(), raw.end(), 0.0) / n;
    double var = 0.0;
    for (double v : raw) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);

    std::vector<double> out(raw.size(), 0.5);
    if (sd == 0.0) return out;
    for (std::size_t i = 0; i < raw.size(); ++i)
        out[i] = std::max(0.0, (raw[i] - mean) / (scale_k * sd) + 0.5);
    return out;
}

std::vector<double> unified_uncertainty(std::span<const double> det_scores,
                                        std::span<const double> undet_scores, double scale_k) {
    if (det_scores.size() != undet_scores.size())
        throw std::invalid_argument("unified_uncertainty: length mismatch");
    const auto det = normalize_scores(det_scores, scale_k);
    const auto undet = normalize_scores(undet_scores, scale_k);
    std::vector<double> out(det.size());
    for (std::size_t i = 0; i < det.size(); ++i) out[i] = det[i] * undet[i];
    return out;
}

CandidatePool top_k_candidates(std::span<const std::string> ids, std::span<const double> scores,
                               std::size_t budget, std::size_t delta) {
    if (ids.size() != scores.size())
        throw std::invalid_argument("top_k_candidates: ids and scores differ in length");
    if (budget == 0 || delta == 0)
        throw std::invalid_argument("top_k_candidates: budget and delta must be positive");

    const std::size_t k = budget * delta;
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), 0);
    const auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return ids[a] < ids[b];
    };

    CandidatePool pool;
    pool.shortfall = ids.size() < k;
    const std::size_t take = std::min(k, ids.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      better);
    pool.ids.reserve(take);
    for (std::size_t i = 0; i < take; ++i) pool.ids.push_back(ids[order[i]]);
    return pool;
}

}  // namespace capal
