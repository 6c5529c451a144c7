#pragma once

#include "fedsplit/nn.hpp"
#include "fedsplit/types.hpp"

#include <map>
#include <set>
#include <vector>

namespace fedsplit {

// Two independently replaceable parameter blocks: `theta` maps inputs to
// embeddings, `phi` is a single linear classifier over embeddings.
struct SplitModel {
    LayerStack theta;
    Layer phi;
};

struct TrainConfig {
    Scalar eta_theta = 0.005;
    Scalar eta_phi = 0.005;
    Eigen::Index batch_size = 64;
    int local_epochs = 5;
    Scalar lambda = 5.0;    // prototype-regularizer weight
    Scalar t_kd = 1.0;      // softmax temperature for distribution comparison
    Scalar beta_reg = 0.1;  // head-mixing regularizer coefficient
};

// Strict validation used at experiment-configuration level; individual train
// steps only reject values that make a step meaningless (negative rates etc.),
// so tests may freeze a block with a zero rate.
void validate_strict(const TrainConfig& cfg);

Eigen::Index embedding_dim(const SplitModel& model);

// Representation output for a batch (features x n) -> (d x n).
Matrix embed(const LayerStack& theta, const Matrix& x);

// logits = W z + b for a batch of embeddings (d x n).
Matrix head_logits(const Layer& phi, const Matrix& z);

// alpha * local + (1 - alpha) * global, evaluated on logits.
Matrix mixed_logits(const Layer& phi_local, const Layer& phi_global, Scalar alpha, const Matrix& z);

// Elementwise head interpolation; equals mixed_logits by linearity.
Layer mix_heads(const Layer& phi_local, const Layer& phi_global, Scalar alpha);

// One SGD step on the head from a batch of embeddings (theta is not touched):
// phi <- phi - eta_phi * d(mean CE)/d(phi).
void train_head_step(SplitModel& model, const Matrix& z, const std::vector<int>& y,
                     const TrainConfig& cfg);

// One SGD step on the representation with the head frozen. Loss per sample is
// CE(head(embed(x)), y) + lambda * [y in available] * ||embed(x) - proto_y||^2;
// samples whose class is not in `available` contribute no regularizer term.
void train_repr_step(SplitModel& model, const Matrix& x, const std::vector<int>& y,
                     const std::map<int, Vector>& global_prototypes,
                     const std::set<int>& available, const TrainConfig& cfg);

// One SGD step updating theta and phi together on plain cross-entropy, used by
// the non-decoupled baselines.
void train_joint_step(SplitModel& model, const Matrix& x, const std::vector<int>& y,
                      const TrainConfig& cfg);

// Loss values matching the two steps above, for gradient checking and
// monotonicity tests.
Scalar head_loss(const Layer& phi, const Matrix& z, const std::vector<int>& y);
Scalar repr_loss(const SplitModel& model, const Matrix& x, const std::vector<int>& y,
                 const std::map<int, Vector>& global_prototypes, const std::set<int>& available,
                 Scalar lambda);

}  // namespace fedsplit
