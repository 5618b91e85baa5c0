#include "capal/diversity.hpp"

#include "capal/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace capal {

Eigen::Index histogram_dim(const PrototypeBank& bank) {
    return static_cast<Eigen::Index>(bank.total_prototypes()) + bank.num_classes;
}

Eigen::Index histogram_bin(const PrototypeBank& bank, int c, std::size_t k) {
    if (k > bank.prototype_count(c)) throw std::out_of_range("histogram_bin: prototype index");
    return static_cast<Eigen::Index>(bank.class_offset(c) + static_cast<std::size_t>(c) + k);
}

Histogram scene_histogram(std::span<const Proposal> proposals, const PrototypeBank& bank) {
    Histogram h(histogram_dim(bank));
    for (const auto& p : proposals) {
        const std::size_t k = assign(bank, p.embedding, p.predicted_class);
        h.add_bin(histogram_bin(bank, p.predicted_class, k));
    }
    return h;
}

namespace {

inline double nlogn(long n) { return n > 0 ? static_cast<double>(n) * std::log(static_cast<double>(n)) : 0.0; }

double entropy_from(long total, double sum_nlogn) {
    if (total <= 0) return 0.0;
    const double n = static_cast<double>(total);
    return std::max(0.0, std::log(n) - sum_nlogn / n);
}

}  // namespace

double histogram_entropy(const Histogram& h) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < h.counts.size(); ++i) s += nlogn(h.counts[i]);
    return entropy_from(h.total, s);
}

double objective(const Histogram& h, double beta) {
    if (h.total <= 0) throw std::invalid_argument("objective: empty histogram");
    return histogram_entropy(h) + beta * static_cast<double>(h.total);
}

double IncrementalObjective::peek(std::span<const std::pair<Eigen::Index, int>> support,
                                  double beta) const {
    double s = sum_nlogn_;
    long total = total_;
    for (const auto& [bin, n] : support) {
        const long old = counts_[bin];
        s += nlogn(old + n) - nlogn(old);
        total += n;
    }
    return entropy_from(total, s) + beta * static_cast<double>(total);
}

void IncrementalObjective::add(std::span<const std::pair<Eigen::Index, int>> support) {
    for (const auto& [bin, n] : support) {
        const long old = counts_[bin];
        sum_nlogn_ += nlogn(old + n) - nlogn(old);
        counts_[bin] += n;
        total_ += n;
    }
}

double IncrementalObjective::value(double beta) const {
    return entropy_from(total_, sum_nlogn_) + beta * static_cast<double>(total_);
}

std::vector<std::pair<Eigen::Index, int>> support_of(const Histogram& h) {
    std::vector<std::pair<Eigen::Index, int>> out;
    for (Eigen::Index i = 0; i < h.counts.size(); ++i)
        if (h.counts[i] != 0) out.emplace_back(i, h.counts[i]);
    return out;
}

std::vector<int> kmeanspp_partition(const Eigen::MatrixXd& features, int num_clusters,
                                    std::uint64_t seed) {
    if (features.rows() < num_clusters)
        throw std::invalid_argument("kmeanspp_partition: fewer candidates than clusters");
    return kmeans_pp(features, num_clusters, seed, 100).labels;
}

namespace {

std::vector<const DiverseCandidate*> by_id(std::span<const DiverseCandidate> c) {
    std::vector<const DiverseCandidate*> out;
    out.reserve(c.size());
    for (const auto& x : c) out.push_back(&x);
    std::stable_sort(out.begin(), out.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
    return out;
}

}  // namespace

std::vector<std::string> greedy_select(std::span<const DiverseCandidate> cluster,
                                       std::size_t quota, double beta_scaled) {
    if (quota > cluster.size())
        throw std::invalid_argument("greedy_select: quota exceeds cluster size");
    if (quota == 0) return {};
    const auto order = by_id(cluster);
    const Eigen::Index dim = order.front()->hist.dim();

    std::vector<std::vector<std::pair<Eigen::Index, int>>> supports;
    supports.reserve(order.size());
    for (const auto* c : order) {
        if (c->hist.dim() != dim) throw std::invalid_argument("greedy_select: histogram dims differ");
        supports.push_back(support_of(c->hist));
    }

    IncrementalObjective running(dim);
    std::vector<bool> taken(order.size(), false);
    std::vector<std::string> picked;
    picked.reserve(quota);
    for (std::size_t step = 0; step < quota; ++step) {
        std::size_t best = order.size();
        double best_val = 0.0;
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (taken[i]) continue;
            const double v = running.peek(supports[i], beta_scaled);
            if (best == order.size() || v > best_val) {
                best = i;
                best_val = v;
            }
        }
        taken[best] = true;
        running.add(supports[best]);
        picked.push_back(order[best]->id);
    }
    return picked;
}

BruteForceResult brute_force_select(std::span<const DiverseCandidate> candidates,
                                    std::size_t quota, double beta) {
    const std::size_t n = candidates.size();
    if (quota > n) throw std::invalid_argument("brute_force_select: quota exceeds candidates");
    double combos = 1.0;
    for (std::size_t i = 0; i < quota; ++i)
        combos = combos * static_cast<double>(n - i) / static_cast<double>(i + 1);
    if (combos > kBruteForceBudget)
        throw std::invalid_argument("brute_force_select: combinatorial budget exceeded");

    BruteForceResult best;
    if (quota == 0) return best;
    const auto order = by_id(candidates);
    const Eigen::Index dim = order.front()->hist.dim();

    std::vector<std::size_t> idx(quota);
    std::iota(idx.begin(), idx.end(), 0);
    bool have = false;
    std::vector<std::size_t> best_idx;
    while (true) {
        Histogram sum(dim);
        for (std::size_t i : idx) sum += order[i]->hist;
        const double v = sum.total > 0 ? objective(sum, beta) : 0.0;
        if (!have || v > best.value) {
            have = true;
            best.value = v;
            best_idx = idx;
        }
        // next combination in lexicographic order
        std::size_t pos = quota;
        while (pos > 0 && idx[pos - 1] == n - quota + (pos - 1)) --pos;
        if (pos == 0) break;
        ++idx[pos - 1];
        for (std::size_t j = pos; j < quota; ++j) idx[j] = idx[j - 1] + 1;
    }
    for (std::size_t i : best_idx) best.ids.push_back(order[i]->id);
    return best;
}

std::vector<std::size_t> proportional_quotas(std::span<const std::size_t> sizes, std::size_t budget) {
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (budget > total) throw std::invalid_argument("proportional_quotas: budget exceeds pool");
    const std::size_t s = sizes.size();
    std::vector<std::size_t> q(s, 0);
    if (budget == 0 || s == 0) return q;

    // integer arithmetic keeps the remainders exact
    std::vector<std::pair<std::size_t, std::size_t>> rem;  // (remainder numerator, cluster)
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < s; ++i) {
        q[i] = budget * sizes[i] / total;
        assigned += q[i];
        rem.emplace_back(budget * sizes[i] % total, i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t i = 0; assigned < budget; ++i, ++assigned) ++q[rem[i % s].second];

    // cap at cluster size and hand the excess to clusters with room
    std::size_t excess = 0;
    for (std::size_t i = 0; i < s; ++i)
        if (q[i] > sizes[i]) {
            excess += q[i] - sizes[i];
            q[i] = sizes[i];
        }
    while (excess > 0) {
        std::size_t best = s;
        for (std::size_t i = 0; i < s; ++i)
            if (q[i] < sizes[i] && (best == s || sizes[i] - q[i] > sizes[best] - q[best])) best = i;
        ++q[best];
        --excess;
    }
    return q;
}

DiverseSelection select_diverse(std::span<const DiverseCandidate> pool, std::size_t budget,
                                const DiversityConfig& cfg) {
    if (budget > pool.size()) throw std::invalid_argument("select_diverse: budget exceeds pool");
    if (cfg.num_clusters < 1) throw std::invalid_argument("select_diverse: num_clusters must be >= 1");
    if (!(cfg.beta > 0.0)) throw std::invalid_argument("select_diverse: beta must be positive");

    DiverseSelection out;
    if (pool.empty() || budget == 0) return out;

    const auto order = by_id(pool);
    const Eigen::Index dim = order.front()->hist.dim();
    const int clusters = std::min<int>(cfg.num_clusters, static_cast<int>(order.size()));

    Eigen::MatrixXd features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(order.size()), dim);
    long n_total = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& h = order[i]->hist;
        if (h.total > 0)
            features.row(static_cast<Eigen::Index>(i)) =
                h.counts.cast<double>().transpose() / static_cast<double>(h.total);
        n_total += h.total;
    }
    out.cluster_of = kmeanspp_partition(features, clusters, cfg.seed);

    std::vector<std::vector<DiverseCandidate>> members(static_cast<std::size_t>(clusters));
    std::vector<long> n_objects(static_cast<std::size_t>(clusters), 0);
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto c = static_cast<std::size_t>(out.cluster_of[i]);
        members[c].push_back(*order[i]);
        n_objects[c] += order[i]->hist.total;
    }
    std::vector<std::size_t> sizes;
    for (const auto& m : members) sizes.push_back(m.size());
    out.quotas = proportional_quotas(sizes, budget);

    for (std::size_t c = 0; c < members.size(); ++c) {
        const double scale = n_objects[c] > 0 && n_total > 0
                                 ? static_cast<double>(n_total) / static_cast<double>(n_objects[c])
                                 : 1.0;
        out.beta_scaled.push_back(cfg.beta * scale);
        if (out.quotas[c] == 0) continue;
        auto picked = greedy_select(members[c], out.quotas[c], out.beta_scaled.back());
        out.ids.insert(out.ids.end(), picked.begin(), picked.end());
    }
    return out;
}

}  // namespace capal
