#ifndef CAPAL_CLUSTERING_HPP
#define CAPAL_CLUSTERING_HPP

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace capal {

struct KMeansResult {
    std::vector<int> labels;     // one per row of the input
    Eigen::MatrixXd centroids;   // one centroid per row
    int iterations = 0;
    bool converged = false;
};

/// k-means++ seeding followed by Lloyd iterations on the rows of `points`.
/// Assignment ties go to the lower cluster index; a cluster that empties is
/// re-seeded with the point farthest from its current centroid.
KMeansResult kmeans_pp(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                       int max_iterations = 100);

}  // namespace capal

#endif  // CAPAL_CLUSTERING_HPP
