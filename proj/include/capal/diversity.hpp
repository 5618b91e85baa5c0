#ifndef CAPAL_DIVERSITY_HPP
#define CAPAL_DIVERSITY_HPP

#include "capal/cap_bank.hpp"
#include "capal/scene.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace capal {

/// Prototype assignment counts. Bins follow the bank's flattened (c,k) order
/// with one extra overflow bin closing each class block.
struct Histogram {
    Eigen::VectorXi counts;
    long total = 0;

    Histogram() = default;
    explicit Histogram(Eigen::Index dim) : counts(Eigen::VectorXi::Zero(dim)) {}

    Eigen::Index dim() const { return counts.size(); }
    void add_bin(Eigen::Index bin, int n = 1) {
        counts[bin] += n;
        total += n;
    }
    Histogram& operator+=(const Histogram& o) {
        counts += o.counts;
        total += o.total;
        return *this;
    }
    friend Histogram operator+(Histogram a, const Histogram& b) { return a += b; }
    friend bool operator==(const Histogram& a, const Histogram& b) {
        return a.total == b.total && a.counts == b.counts;
    }
};

/// Number of histogram bins for a bank: every prototype plus one overflow bin per class.
Eigen::Index histogram_dim(const PrototypeBank& bank);
/// Bin of prototype k of class c; k == prototype_count(c) is the overflow bin.
Eigen::Index histogram_bin(const PrototypeBank& bank, int c, std::size_t k);

/// Sum of one-hot assignments of the proposals against a frozen bank. Objects
/// that would open a new prototype land in their class's overflow bin.
Histogram scene_histogram(std::span<const Proposal> proposals, const PrototypeBank& bank);

/// Entropy (nats) of the normalized counts; zero for an empty histogram.
double histogram_entropy(const Histogram& h);

/// E(h / |h|) + beta * |h|_1. Throws on an empty histogram.
double objective(const Histogram& h, double beta);

/// Running sum of histograms with O(support) objective updates, using
/// E = ln N - (sum n ln n) / N.
class IncrementalObjective {
public:
    explicit IncrementalObjective(Eigen::Index dim) : counts_(Eigen::VectorXi::Zero(dim)) {}

    /// Objective after adding `support` (bin, count) pairs, without committing.
    double peek(std::span<const std::pair<Eigen::Index, int>> support, double beta) const;
    void add(std::span<const std::pair<Eigen::Index, int>> support);
    double value(double beta) const;
    long total() const { return total_; }

private:
    Eigen::VectorXi counts_;
    long total_ = 0;
    double sum_nlogn_ = 0.0;
};

std::vector<std::pair<Eigen::Index, int>> support_of(const Histogram& h);

struct DiverseCandidate {
    std::string id;
    Histogram hist;
};

struct DiversityConfig {
    double beta = 0.01;
    int num_clusters = 18;
    std::uint64_t seed = 0;
};

/// k-means++ plus Lloyd on the rows of `features`; one label per row.
std::vector<int> kmeanspp_partition(const Eigen::MatrixXd& features, int num_clusters,
                                    std::uint64_t seed);

/// Start empty and repeatedly add the candidate that maximizes the running
/// objective with weight `beta_scaled`; ties by id. Returns ids in pick order.
std::vector<std::string> greedy_select(std::span<const DiverseCandidate> cluster,
                                       std::size_t quota, double beta_scaled);

struct BruteForceResult {
    std::vector<std::string> ids;
    double value = 0.0;
};

inline constexpr double kBruteForceBudget = 1e6;

/// Exhaustive maximizer of the objective over subsets of size `quota`; ties
/// to the lexicographically smallest subset of id-sorted candidates.
BruteForceResult brute_force_select(std::span<const DiverseCandidate> candidates,
                                    std::size_t quota, double beta);

struct DiverseSelection {
    std::vector<std::string> ids;
    std::vector<int> cluster_of;        // per pool entry, pool sorted by id
    std::vector<std::size_t> quotas;    // per cluster
    std::vector<double> beta_scaled;    // per cluster
};

/// Budget split across clusters proportional to cluster size using largest
/// remainders (ties to the smaller cluster index), capped at cluster sizes
/// with the excess moved to clusters that still have room.
std::vector<std::size_t> proportional_quotas(std::span<const std::size_t> cluster_sizes,
                                             std::size_t budget);

/// Partition the pool in normalized-histogram space, split the budget across
/// clusters and run greedy search per cluster with beta * N_total / N_s.
DiverseSelection select_diverse(std::span<const DiverseCandidate> pool, std::size_t budget,
                                const DiversityConfig& cfg);

}  // namespace capal

#endif  // CAPAL_DIVERSITY_HPP
