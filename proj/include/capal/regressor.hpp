#ifndef CAPAL_REGRESSOR_HPP
#define CAPAL_REGRESSOR_HPP

#include "capal/scene.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace capal {

/// Three-layer perceptron  in -> h1 -> h2 -> 1  with rectifier hidden units.
template <typename Scalar>
struct MlpParams {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Matrix w1, w2, w3;  // w3 is 1 x h2
    Vector b1, b2, b3;  // b3 has one entry

    static MlpParams zeros(Eigen::Index in, Eigen::Index h1, Eigen::Index h2) {
        MlpParams p;
        p.w1 = Matrix::Zero(h1, in);
        p.b1 = Vector::Zero(h1);
        p.w2 = Matrix::Zero(h2, h1);
        p.b2 = Vector::Zero(h2);
        p.w3 = Matrix::Zero(1, h2);
        p.b3 = Vector::Zero(1);
        return p;
    }

    Eigen::Index input_dim() const { return w1.cols(); }
    Eigen::Index hidden1() const { return w1.rows(); }
    Eigen::Index hidden2() const { return w2.rows(); }

    Eigen::Index parameter_count() const {
        return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size();
    }

    bool all_finite() const {
        return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() &&
               w3.allFinite() && b3.allFinite();
    }

    /// Flat parameter access, order: w1 b1 w2 b2 w3 b3 (column-major inside each block).
    Scalar& at(Eigen::Index flat) {
        Scalar* data[] = {w1.data(), b1.data(), w2.data(), b2.data(), w3.data(), b3.data()};
        const Eigen::Index sizes[] = {w1.size(), b1.size(), w2.size(),
                                      b2.size(), w3.size(), b3.size()};
        for (int i = 0; i < 6; ++i) {
            if (flat < sizes[i]) return data[i][flat];
            flat -= sizes[i];
        }
        throw std::out_of_range("MlpParams::at");
    }
    Scalar at(Eigen::Index flat) const { return const_cast<MlpParams*>(this)->at(flat); }

    MlpParams& operator+=(const MlpParams& o) {
        w1 += o.w1; b1 += o.b1; w2 += o.w2; b2 += o.b2; w3 += o.w3; b3 += o.b3;
        return *this;
    }
    MlpParams& operator*=(Scalar s) {
        w1 *= s; b1 *= s; w2 *= s; b2 *= s; w3 *= s; b3 *= s;
        return *this;
    }
};

using MlpParamsd = MlpParams<double>;

template <typename Scalar>
struct MlpActivations {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> z1, a1, z2, a2;
    Scalar out;
};

template <typename Scalar, typename Derived>
MlpActivations<Scalar> forward_full(const MlpParams<Scalar>& p, const Eigen::MatrixBase<Derived>& x) {
    if (x.size() != p.input_dim())
        throw std::invalid_argument("mlp forward: input has " + std::to_string(x.size()) +
                                    " entries, expected " + std::to_string(p.input_dim()));
    MlpActivations<Scalar> act;
    act.z1 = p.w1 * x + p.b1;
    act.a1 = act.z1.cwiseMax(Scalar(0));
    act.z2 = p.w2 * act.a1 + p.b2;
    act.a2 = act.z2.cwiseMax(Scalar(0));
    act.out = (p.w3 * act.a2)(0) + p.b3(0);
    return act;
}

template <typename Scalar, typename Derived>
Scalar forward(const MlpParams<Scalar>& p, const Eigen::MatrixBase<Derived>& x) {
    return forward_full(p, x).out;
}

/// Undetected-count estimate from the pooled global feature g and masked feature u.
template <typename Scalar>
Scalar forward(const MlpParams<Scalar>& p, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& g,
               const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& u) {
    if (g.size() != u.size()) throw std::invalid_argument("mlp forward: g and u differ in size");
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x(g.size() + u.size());
    x << g, u;
    return forward(p, x);
}

/// One regression example: concatenated [g; u] and the undetected count.
template <typename Scalar>
struct RegressionSample {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> input;
    Scalar target;
};

/// Sum of squared residuals over the batch.
template <typename Scalar>
Scalar loss(const MlpParams<Scalar>& p, std::span<const RegressionSample<Scalar>> batch) {
    Scalar total(0);
    for (const auto& s : batch) {
        const Scalar r = forward(p, s.input) - s.target;
        total += r * r;
    }
    return total;
}

/// Loss and its gradient by backpropagation.
template <typename Scalar>
Scalar loss_and_gradient(const MlpParams<Scalar>& p,
                         std::span<const RegressionSample<Scalar>> batch, MlpParams<Scalar>& grad) {
    grad = MlpParams<Scalar>::zeros(p.input_dim(), p.hidden1(), p.hidden2());
    Scalar total(0);
    for (const auto& s : batch) {
        const auto act = forward_full(p, s.input);
        const Scalar r = act.out - s.target;
        total += r * r;

        const Scalar d_out = Scalar(2) * r;
        grad.w3 += d_out * act.a2.transpose();
        grad.b3(0) += d_out;

        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> d2 = d_out * p.w3.transpose();
        d2 = d2.cwiseProduct((act.z2.array() > Scalar(0)).matrix().template cast<Scalar>());
        grad.w2.noalias() += d2 * act.a1.transpose();
        grad.b2 += d2;

        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> d1 = p.w2.transpose() * d2;
        d1 = d1.cwiseProduct((act.z1.array() > Scalar(0)).matrix().template cast<Scalar>());
        grad.w1.noalias() += d1 * s.input.transpose();
        grad.b1 += d1;
    }
    return total;
}

/// He-uniform weights, zero biases.
template <typename Scalar>
MlpParams<Scalar> init_params(Eigen::Index in, Eigen::Index h1, Eigen::Index h2,
                              std::mt19937_64& rng) {
    auto p = MlpParams<Scalar>::zeros(in, h1, h2);
    const auto fill = [&rng](auto& m, Eigen::Index fan_in) {
        const double lim = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-lim, lim);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(dist(rng));
    };
    fill(p.w1, in);
    fill(p.w2, h1);
    fill(p.w3, h2);
    return p;
}

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 300;
    int batch_size = 1;
    double mask_probability = 0.3;
    std::uint64_t seed = 0;
    int hidden1 = 64;
    int hidden2 = 64;
    double iou_threshold = 0.25;
};

/// Regression sample for a labeled scene with the detections listed in
/// `dropped` removed: their regions return to the masked feature and they no
/// longer count as detections when computing the target.
RegressionSample<double> scene_sample(const SceneRecord& scene, const std::vector<bool>& dropped,
                                      double iou_threshold = kDefaultMatchIou);
RegressionSample<double> scene_sample(const SceneRecord& scene,
                                      double iou_threshold = kDefaultMatchIou);

/// Mini-batch gradient descent on the squared-error loss with random box
/// masking. Each step follows the gradient of the batch-mean loss.
/// Deterministic given cfg.seed.
MlpParamsd train(std::span<const SceneRecord> scenes, const TrainConfig& cfg);

/// Text record: header line, dimension line, then each block row-major.
void save_params(std::ostream& os, const MlpParamsd& p);
MlpParamsd load_params(std::istream& is);
void save_params(const std::string& path, const MlpParamsd& p);
MlpParamsd load_params(const std::string& path);

}  // namespace capal

#endif  // CAPAL_REGRESSOR_HPP
