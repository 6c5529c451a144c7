#include "fedsplit/nn.hpp"

#include <cmath>
#include <string>

namespace fedsplit {

namespace {

void check_stack(const LayerStack& stack) {
    if (stack.empty()) throw ShapeError("empty layer stack");
    for (std::size_t i = 0; i < stack.size(); ++i) {
        const Layer& l = stack[i];
        if (l.W.rows() == 0 || l.W.cols() == 0) throw ShapeError("layer has empty weight matrix");
        if (l.b.size() != l.W.rows()) throw ShapeError("bias length does not match weight rows");
        if (i > 0 && l.W.cols() != stack[i - 1].W.rows())
            throw ShapeError("layer " + std::to_string(i) + " expects " + std::to_string(l.W.cols()) +
                             " inputs but previous layer emits " + std::to_string(stack[i - 1].W.rows()));
    }
}

}  // namespace

ForwardCache mlp_forward(const LayerStack& stack, const Matrix& x) {
    check_stack(stack);
    if (x.rows() != stack.front().W.cols())
        throw ShapeError("input has " + std::to_string(x.rows()) + " features, stack expects " +
                         std::to_string(stack.front().W.cols()));
    ForwardCache cache;
    cache.activations.reserve(stack.size() + 1);
    cache.activations.push_back(x);
    for (std::size_t i = 0; i < stack.size(); ++i) {
        Matrix z = (stack[i].W * cache.activations.back()).colwise() + stack[i].b;
        if (i + 1 < stack.size()) z = z.cwiseMax(0.0);
        cache.activations.push_back(std::move(z));
    }
    return cache;
}

Gradients mlp_backward(const LayerStack& stack, const ForwardCache& cache,
                       const Matrix& grad_output) {
    check_stack(stack);
    if (cache.activations.size() != stack.size() + 1)
        throw ShapeError("forward cache does not match stack depth");
    if (grad_output.rows() != stack.back().W.rows() ||
        grad_output.cols() != cache.activations.back().cols())
        throw ShapeError("grad_output shape does not match stack output");

    Gradients g;
    g.layers.resize(stack.size());
    Matrix delta = grad_output;
    for (std::size_t i = stack.size(); i-- > 0;) {
        const Matrix& a_in = cache.activations[i];
        g.layers[i].W = delta * a_in.transpose();
        g.layers[i].b = delta.rowwise().sum();
        Matrix prev = stack[i].W.transpose() * delta;
        if (i > 0) {
            // Hidden activations are ReLU outputs; gate on where they are active.
            prev.array() *= (cache.activations[i].array() > 0.0).cast<Scalar>();
        }
        delta = std::move(prev);
    }
    g.input = std::move(delta);
    return g;
}

Matrix cross_entropy_grad(const Matrix& logits, const std::vector<int>& labels) {
    if (static_cast<Eigen::Index>(labels.size()) != logits.cols())
        throw ShapeError("cross_entropy_grad: label count does not match batch");
    Matrix g = softmax_temperature(logits);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        if (labels[j] < 0 || labels[j] >= logits.rows())
            throw IndexError("cross_entropy_grad: label out of range");
        g(labels[j], j) -= 1.0;
    }
    return g / static_cast<Scalar>(logits.cols());
}

LayerStack he_init(const std::vector<Eigen::Index>& dims, std::mt19937_64& rng) {
    if (dims.size() < 2) throw ParameterError("he_init needs at least input and output sizes");
    for (Eigen::Index d : dims)
        if (d <= 0) throw ParameterError("he_init: all layer sizes must be positive");
    LayerStack stack(dims.size() - 1);
    std::normal_distribution<Scalar> unit(0.0, 1.0);
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const Scalar scale = std::sqrt(2.0 / static_cast<Scalar>(dims[i]));
        Matrix w(dims[i + 1], dims[i]);
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = scale * unit(rng);
        stack[i].W = std::move(w);
        stack[i].b = Vector::Zero(dims[i + 1]);
    }
    return stack;
}

std::vector<int> predict_labels(const Matrix& logits) {
    std::vector<int> out(static_cast<std::size_t>(logits.cols()));
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        Eigen::Index best = 0;
        logits.col(j).maxCoeff(&best);
        out[static_cast<std::size_t>(j)] = static_cast<int>(best);
    }
    return out;
}

Scalar accuracy(const Matrix& logits, const std::vector<int>& labels) {
    if (static_cast<Eigen::Index>(labels.size()) != logits.cols())
        throw ShapeError("accuracy: label count does not match batch");
    if (labels.empty()) throw ShapeError("accuracy over empty batch");
    const std::vector<int> pred = predict_labels(logits);
    Eigen::Index hits = 0;
    for (std::size_t j = 0; j < labels.size(); ++j)
        if (pred[j] == labels[j]) ++hits;
    return static_cast<Scalar>(hits) / static_cast<Scalar>(labels.size());
}

void apply_gradients(LayerStack& stack, const std::vector<Layer>& grads, Scalar lr) {
    if (lr < 0.0) throw ParameterError("negative learning rate");
    if (grads.size() != stack.size()) throw ShapeError("gradient count does not match stack");
    for (std::size_t i = 0; i < stack.size(); ++i) {
        if (grads[i].W.rows() != stack[i].W.rows() || grads[i].W.cols() != stack[i].W.cols() ||
            grads[i].b.size() != stack[i].b.size())
            throw ShapeError("gradient shape does not match layer " + std::to_string(i));
        stack[i].W -= lr * grads[i].W;
        stack[i].b -= lr * grads[i].b;
    }
}

Eigen::Index output_dim(const LayerStack& stack) {
    check_stack(stack);
    return stack.back().W.rows();
}

Eigen::Index input_dim(const LayerStack& stack) {
    check_stack(stack);
    return stack.front().W.cols();
}

}  // namespace fedsplit
