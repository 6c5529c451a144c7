#pragma once

#include "fedsplit/types.hpp"

#include <Eigen/Core>

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace fedsplit {

// One affine layer; W is (out x in), b is (out).
struct Layer {
    Matrix W;
    Vector b;
};

using LayerStack = std::vector<Layer>;

// Column-wise softmax of `logits / temperature`, numerically stabilised by
// subtracting the per-column max. Works on vectors (single column) and on
// (classes x batch) matrices alike.
template <typename Derived>
Matrix softmax_temperature(const Eigen::MatrixBase<Derived>& logits, Scalar temperature = 1.0) {
    if (temperature <= 0.0) throw ParameterError("softmax temperature must be positive");
    if (logits.rows() == 0 || logits.cols() == 0) throw ShapeError("softmax of empty input");
    Matrix z = logits.template cast<Scalar>() / temperature;
    Eigen::RowVectorXd mx = z.colwise().maxCoeff();
    z.rowwise() -= mx;
    Matrix e = z.array().exp().matrix();
    Eigen::RowVectorXd denom = e.colwise().sum();
    e.array().rowwise() /= denom.array();
    return e;
}

// Mean cross-entropy of integer labels under `logits` (classes x batch),
// computed through log-sum-exp rather than an explicit softmax.
template <typename Derived>
Scalar cross_entropy(const Eigen::MatrixBase<Derived>& logits, const std::vector<int>& labels) {
    const Eigen::Index c = logits.rows();
    const Eigen::Index n = logits.cols();
    if (n == 0) throw ShapeError("cross_entropy over empty batch");
    if (static_cast<Eigen::Index>(labels.size()) != n)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " columns");
    Scalar total = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (labels[j] < 0 || labels[j] >= c) throw IndexError("cross_entropy: label out of range");
        const auto col = logits.col(j);
        const Scalar mx = col.maxCoeff();
        const Scalar lse = mx + std::log((col.array() - mx).exp().sum());
        total += lse - col(labels[j]);
    }
    return total / static_cast<Scalar>(n);
}

// KL divergence D(p || q) between two distributions, with 0*log(0/q) read as 0.
template <typename DerivedP, typename DerivedQ>
Scalar kl_divergence(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedQ>& q) {
    if (p.rows() != q.rows() || p.cols() != 1 || q.cols() != 1)
        throw ShapeError("kl_divergence expects two equal-length column vectors");
    Scalar kl = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const Scalar pi = p(i);
        const Scalar qi = q(i);
        if (pi < 0.0 || qi < 0.0) throw ParameterError("kl_divergence: negative mass");
        if (pi == 0.0) continue;
        if (qi == 0.0) throw ParameterError("kl_divergence: p places mass where q has none");
        kl += pi * std::log(pi / qi);
    }
    return kl;
}

// Per-column KL divergences between two (classes x batch) distribution matrices.
template <typename DerivedP, typename DerivedQ>
Vector kl_divergence_columns(const Eigen::MatrixBase<DerivedP>& p,
                             const Eigen::MatrixBase<DerivedQ>& q) {
    if (p.rows() != q.rows() || p.cols() != q.cols())
        throw ShapeError("kl_divergence_columns: shape mismatch");
    Vector out(p.cols());
    for (Eigen::Index j = 0; j < p.cols(); ++j)
        out(j) = kl_divergence(p.col(j).eval(), q.col(j).eval());
    return out;
}

// Activations from a forward pass; activations[0] is the input batch,
// activations[i] the output of layer i-1 (ReLU for hidden layers, linear for
// the last). Kept so a backward pass can reuse them.
struct ForwardCache {
    std::vector<Matrix> activations;

    const Matrix& output() const { return activations.back(); }
};

// Per-layer parameter gradients plus the gradient w.r.t. the input batch.
struct Gradients {
    std::vector<Layer> layers;
    Matrix input;
};

// Runs `x` (features x batch) through the stack: affine + ReLU for every layer
// except the last, which stays linear.
ForwardCache mlp_forward(const LayerStack& stack, const Matrix& x);

// Backpropagates `grad_output` = dL/d(output) through a cached forward pass.
Gradients mlp_backward(const LayerStack& stack, const ForwardCache& cache,
                       const Matrix& grad_output);

// dL/d(logits) of mean cross-entropy: (softmax - one_hot) / batch.
Matrix cross_entropy_grad(const Matrix& logits, const std::vector<int>& labels);

// He-normal initialisation for the layer sizes in `dims` = {in, h1, ..., out}.
LayerStack he_init(const std::vector<Eigen::Index>& dims, std::mt19937_64& rng);

// Column-wise argmax.
std::vector<int> predict_labels(const Matrix& logits);

Scalar accuracy(const Matrix& logits, const std::vector<int>& labels);

// In-place SGD step: params -= lr * grads.
void apply_gradients(LayerStack& stack, const std::vector<Layer>& grads, Scalar lr);

Eigen::Index output_dim(const LayerStack& stack);
Eigen::Index input_dim(const LayerStack& stack);

}  // namespace fedsplit
