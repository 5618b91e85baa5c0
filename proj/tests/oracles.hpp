#ifndef CAPAL_TESTS_ORACLES_HPP
#define CAPAL_TESTS_ORACLES_HPP

// Reference implementations used only by the tests. They are deliberately
// naive and share no code with the library paths they check.

#include "capal/geometry.hpp"
#include "capal/regressor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace oracle {

inline double box_iou(const capal::Box3d& a, const capal::Box3d& b) {
    double inter = 1.0;
    for (int k = 0; k < 3; ++k) {
        const double lo = std::max(a.center[k] - a.size[k] / 2, b.center[k] - b.size[k] / 2);
        const double hi = std::min(a.center[k] + a.size[k] / 2, b.center[k] + b.size[k] / 2);
        inter *= std::max(0.0, hi - lo);
    }
    const double va = a.size[0] * a.size[1] * a.size[2];
    const double vb = b.size[0] * b.size[1] * b.size[2];
    return inter / (va + vb - inter);
}

/// Largest one-to-one matching by trying every assignment of truths.
inline std::size_t max_matching(const std::vector<capal::Box3d>& pred, const std::vector<capal::Box3d>& truth,
                                double thr) {
    std::vector<bool> used(pred.size(), false);
    std::function<std::size_t(std::size_t)> go = [&](std::size_t t) -> std::size_t {
        if (t == truth.size()) return 0;
        std::size_t best = go(t + 1);  // leave truth t unmatched
        for (std::size_t p = 0; p < pred.size(); ++p) {
            if (used[p] || box_iou(pred[p], truth[t]) < thr) continue;
            used[p] = true;
            best = std::max(best, 1 + go(t + 1));
            used[p] = false;
        }
        return best;
    };
    return go(0);
}

inline std::size_t undetected(const std::vector<capal::Box3d>& pred, const std::vector<capal::Box3d>& truth,
                              double thr = 0.25) {
    return truth.size() - max_matching(pred, truth, thr);
}

/// Central differences of the summed squared loss with respect to every parameter.
inline capal::MlpParamsd fd_gradient(capal::MlpParamsd p, const std::vector<capal::RegressionSample<double>>& batch,
                                     double eps) {
    auto g = capal::MlpParamsd::zeros(p.input_dim(), p.hidden1(), p.hidden2());
    const auto f = [&](const capal::MlpParamsd& q) {
        double s = 0.0;
        for (const auto& b : batch) {
            const Eigen::VectorXd h1 = (q.w1 * b.input + q.b1).cwiseMax(0.0);
            const Eigen::VectorXd h2 = (q.w2 * h1 + q.b2).cwiseMax(0.0);
            const double r = (q.w3 * h2)(0) + q.b3(0) - b.target;
            s += r * r;
        }
        return s;
    };
    for (Eigen::Index i = 0; i < p.parameter_count(); ++i) {
        const double keep = p.at(i);
        p.at(i) = keep + eps;
        const double up = f(p);
        p.at(i) = keep - eps;
        const double down = f(p);
        p.at(i) = keep;
        g.at(i) = (up - down) / (2 * eps);
    }
    return g;
}

/// -sum p ln p of count vector, computed from normalized probabilities.
inline double entropy_of_counts(const std::vector<double>& counts) {
    const double n = std::accumulate(counts.begin(), counts.end(), 0.0);
    if (n <= 0) return 0.0;
    double h = 0.0;
    for (double c : counts)
        if (c > 0) h -= (c / n) * std::log(c / n);
    return h;
}

/// |E(sum_s h_s) - [sum_s (N_s/N) E(h_s) + E(N_s/N)]| for a set of partition histograms.
inline double decomposition_gap(const std::vector<std::vector<double>>& parts) {
    const std::size_t dim = parts.front().size();
    std::vector<double> joint(dim, 0.0), sizes;
    double n = 0.0;
    for (const auto& h : parts) {
        for (std::size_t i = 0; i < dim; ++i) joint[i] += h[i];
        sizes.push_back(std::accumulate(h.begin(), h.end(), 0.0));
        n += sizes.back();
    }
    double chain = entropy_of_counts(sizes);
    for (std::size_t s = 0; s < parts.size(); ++s)
        if (sizes[s] > 0) chain += sizes[s] / n * entropy_of_counts(parts[s]);
    return std::abs(entropy_of_counts(joint) - chain);
}

/// K highest scores by full sort, ties to the smaller id.
inline std::vector<std::string> top_k_by_sort(const std::vector<std::string>& ids, const std::vector<double>& scores,
                                              std::size_t k) {
    std::vector<std::size_t> idx(ids.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] != scores[b] ? scores[a] > scores[b] : ids[a] < ids[b];
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < std::min(k, idx.size()); ++i) out.push_back(ids[idx[i]]);
    return out;
}

/// Random axis-aligned box inside a small room so overlaps are common.
inline capal::Box3d random_box(std::mt19937_64& rng, double room = 3.0) {
    std::uniform_real_distribution<double> pos(0.0, room), ext(0.3, 1.5);
    return capal::Box3d({pos(rng), pos(rng), pos(rng)}, {ext(rng), ext(rng), ext(rng)});
}

/// Unit vector at `angle` radians from `a` inside the plane spanned by a and b (both unit, orthogonal).
inline Eigen::VectorXd rotate_towards(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double angle) {
    return std::cos(angle) * a + std::sin(angle) * b;
}

}  // namespace oracle

#endif
