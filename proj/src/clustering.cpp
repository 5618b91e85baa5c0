#include "capal/clustering.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <stdexcept>

namespace capal {

namespace {

int nearest(const Eigen::MatrixXd& centroids, const Eigen::VectorXd& x, double* dist = nullptr) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        const double d = (centroids.row(c).transpose() - x).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    if (dist) *dist = best_d;
    return best;
}

}  // namespace

KMeansResult kmeans_pp(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                       int max_iterations) {
    const Eigen::Index n = points.rows();
    if (k < 1) throw std::invalid_argument("kmeans_pp: k must be positive");
    if (n < k) throw std::invalid_argument("kmeans_pp: fewer points than clusters");

    std::mt19937_64 rng(seed);
    KMeansResult res;
    res.centroids.resize(k, points.cols());

    // seeding
    std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    Eigen::Index pick = first(rng);
    for (int c = 0; c < k; ++c) {
        if (c > 0) {
            double total = 0.0;
            for (double v : d2) total += v;
            if (total > 0.0) {
                std::discrete_distribution<Eigen::Index> draw(d2.begin(), d2.end());
                pick = draw(rng);
            } else {
                pick = c;  // all remaining points coincide with a centre
            }
        }
        res.centroids.row(c) = points.row(pick);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d = (points.row(i) - points.row(pick)).squaredNorm();
            d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], d);
        }
    }

    res.labels.assign(static_cast<std::size_t>(n), -1);
    for (int it = 0; it < max_iterations; ++it) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            const int l = nearest(res.centroids, points.row(i).transpose());
            if (l != res.labels[static_cast<std::size_t>(i)]) {
                res.labels[static_cast<std::size_t>(i)] = l;
                changed = true;
            }
        }
        res.iterations = it + 1;

        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int l = res.labels[static_cast<std::size_t>(i)];
            sums.row(l) += points.row(i);
            ++counts[static_cast<std::size_t>(l)];
        }
        bool reseeded = false;
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                res.centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
                continue;
            }
            // empty cluster: take the point farthest from its centroid
            Eigen::Index far = 0;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const int l = res.labels[static_cast<std::size_t>(i)];
                if (counts[static_cast<std::size_t>(l)] <= 1) continue;
                const double d = (points.row(i) - res.centroids.row(l)).squaredNorm();
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            if (far_d < 0.0) continue;
            --counts[static_cast<std::size_t>(res.labels[static_cast<std::size_t>(far)])];
            res.labels[static_cast<std::size_t>(far)] = c;
            counts[static_cast<std::size_t>(c)] = 1;
            res.centroids.row(c) = points.row(far);
            reseeded = true;
        }
        if (!changed && !reseeded) {
            res.converged = true;
            break;
        }
        if (reseeded) {
            // centroids of the donor clusters are stale; recompute before the next pass
            sums.setZero();
            std::fill(counts.begin(), counts.end(), 0);
            for (Eigen::Index i = 0; i < n; ++i) {
                const int l = res.labels[static_cast<std::size_t>(i)];
                sums.row(l) += points.row(i);
                ++counts[static_cast<std::size_t>(l)];
            }
            for (int c = 0; c < k; ++c)
                if (counts[static_cast<std::size_t>(c)] > 0)
                    res.centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        }
    }
    return res;
}

}  // namespace capal
