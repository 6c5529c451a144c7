#include "fedsplit/split_model.hpp"

#include <string>

namespace fedsplit {

namespace {

void check_alpha(Scalar alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ParameterError("alpha must lie in [0, 1], got " + std::to_string(alpha));
}

void check_head_shapes(const Layer& a, const Layer& b) {
    if (a.W.rows() != b.W.rows() || a.W.cols() != b.W.cols() || a.b.size() != b.b.size())
        throw ShapeError("head parameter shapes differ");
}

// dL/dz for the prototype term of the representation loss, plus the loss value.
struct ProtoTerm {
    Matrix grad_z;
    Scalar loss = 0.0;
};

ProtoTerm proto_term(const Matrix& z, const std::vector<int>& y,
                     const std::map<int, Vector>& protos, const std::set<int>& available,
                     Scalar lambda) {
    ProtoTerm out;
    out.grad_z = Matrix::Zero(z.rows(), z.cols());
    if (lambda == 0.0 || available.empty()) return out;
    const Scalar n = static_cast<Scalar>(z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const int label = y[static_cast<std::size_t>(j)];
        if (available.count(label) == 0) continue;
        const auto it = protos.find(label);
        if (it == protos.end())
            throw ContractError("class " + std::to_string(label) +
                                " is marked available but has no prototype");
        if (it->second.size() != z.rows())
            throw ShapeError("prototype dimension does not match embedding dimension");
        const Vector diff = z.col(j) - it->second;
        out.loss += lambda * diff.squaredNorm() / n;
        out.grad_z.col(j) = (2.0 * lambda / n) * diff;
    }
    return out;
}

}  // namespace

void validate_strict(const TrainConfig& cfg) {
    if (cfg.eta_theta <= 0.0) throw ParameterError("eta_theta must be positive");
    if (cfg.eta_phi <= 0.0) throw ParameterError("eta_phi must be positive");
    if (cfg.batch_size < 1) throw ParameterError("batch_size must be at least 1");
    if (cfg.local_epochs < 1) throw ParameterError("local_epochs must be at least 1");
    if (cfg.lambda <= 0.0) throw ParameterError("lambda must be positive");
    if (cfg.t_kd <= 0.0) throw ParameterError("t_kd must be positive");
    if (cfg.beta_reg <= 0.0) throw ParameterError("beta_reg must be positive");
}

Eigen::Index embedding_dim(const SplitModel& model) {
    const Eigen::Index d = output_dim(model.theta);
    if (model.phi.W.cols() != d)
        throw ShapeError("head expects " + std::to_string(model.phi.W.cols()) +
                         "-dim embeddings but representation emits " + std::to_string(d));
    return d;
}

Matrix embed(const LayerStack& theta, const Matrix& x) {
    return mlp_forward(theta, x).output();
}

Matrix head_logits(const Layer& phi, const Matrix& z) {
    if (z.rows() != phi.W.cols())
        throw ShapeError("embedding dimension " + std::to_string(z.rows()) +
                         " does not match head input " + std::to_string(phi.W.cols()));
    return (phi.W * z).colwise() + phi.b;
}

Matrix mixed_logits(const Layer& phi_local, const Layer& phi_global, Scalar alpha,
                    const Matrix& z) {
    check_alpha(alpha);
    check_head_shapes(phi_local, phi_global);
    return alpha * head_logits(phi_local, z) + (1.0 - alpha) * head_logits(phi_global, z);
}

Layer mix_heads(const Layer& phi_local, const Layer& phi_global, Scalar alpha) {
    check_alpha(alpha);
    check_head_shapes(phi_local, phi_global);
    Layer out;
    out.W = alpha * phi_local.W + (1.0 - alpha) * phi_global.W;
    out.b = alpha * phi_local.b + (1.0 - alpha) * phi_global.b;
    return out;
}

void train_head_step(SplitModel& model, const Matrix& z, const std::vector<int>& y,
                     const TrainConfig& cfg) {
    if (z.cols() == 0) throw ContractError("train_head_step on empty batch");
    if (cfg.eta_phi < 0.0) throw ParameterError("negative eta_phi");
    const Matrix logits = head_logits(model.phi, z);
    const Matrix g = cross_entropy_grad(logits, y);
    model.phi.W -= cfg.eta_phi * (g * z.transpose());
    model.phi.b -= cfg.eta_phi * g.rowwise().sum();
}

void train_repr_step(SplitModel& model, const Matrix& x, const std::vector<int>& y,
                     const std::map<int, Vector>& global_prototypes,
                     const std::set<int>& available, const TrainConfig& cfg) {
    if (x.cols() == 0) throw ContractError("train_repr_step on empty batch");
    if (cfg.eta_theta < 0.0) throw ParameterError("negative eta_theta");
    embedding_dim(model);
    const ForwardCache cache = mlp_forward(model.theta, x);
    const Matrix& z = cache.output();
    const Matrix logits = head_logits(model.phi, z);
    Matrix grad_z = model.phi.W.transpose() * cross_entropy_grad(logits, y);
    grad_z += proto_term(z, y, global_prototypes, available, cfg.lambda).grad_z;
    const Gradients g = mlp_backward(model.theta, cache, grad_z);
    apply_gradients(model.theta, g.layers, cfg.eta_theta);
}

void train_joint_step(SplitModel& model, const Matrix& x, const std::vector<int>& y,
                      const TrainConfig& cfg) {
    if (x.cols() == 0) throw ContractError("train_joint_step on empty batch");
    if (cfg.eta_theta < 0.0 || cfg.eta_phi < 0.0) throw ParameterError("negative learning rate");
    embedding_dim(model);
    const ForwardCache cache = mlp_forward(model.theta, x);
    const Matrix& z = cache.output();
    const Matrix g = cross_entropy_grad(head_logits(model.phi, z), y);
    const Matrix grad_z = model.phi.W.transpose() * g;
    const Gradients grads = mlp_backward(model.theta, cache, grad_z);
    apply_gradients(model.theta, grads.layers, cfg.eta_theta);
    model.phi.W -= cfg.eta_phi * (g * z.transpose());
    model.phi.b -= cfg.eta_phi * g.rowwise().sum();
}

Scalar head_loss(const Layer& phi, const Matrix& z, const std::vector<int>& y) {
    return cross_entropy(head_logits(phi, z), y);
}

Scalar repr_loss(const SplitModel& model, const Matrix& x, const std::vector<int>& y,
                 const std::map<int, Vector>& global_prototypes, const std::set<int>& available,
                 Scalar lambda) {
    const Matrix z = embed(model.theta, x);
    const Scalar ce = cross_entropy(head_logits(model.phi, z), y);
    return ce + proto_term(z, y, global_prototypes, available, lambda).loss;
}

}  // namespace fedsplit
