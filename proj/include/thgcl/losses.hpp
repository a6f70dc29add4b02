#pragma once

#include "thgcl/autodiff.hpp"

namespace thgcl {

struct LossConfig {
    double temperature = 0.1;
    double omega_fl = 1.0;
    double omega_cl = 0.1;
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;

    void validate() const;
};

inline constexpr double kFocalClamp = 1e-7;

/// Symmetric cross-modal contrastive loss L(v->a) + L(a->v) over a batch of
/// (B x h) graph embeddings. The denominator excludes the positive pair, so
/// the value can be negative. Requires B >= 2.
Var contrastive_loss(Var audio, Var video, double temperature);

/// One direction: rows of `anchor` against rows of `other`.
Var contrastive_direction(Var anchor, Var other, double temperature);

/// Mean over all B x C entries of -alpha (1 - p_t)^gamma log(p_t), p = sigmoid(logit),
/// p_t clamped to [1e-7, 1 - 1e-7]. `labels` is a binary (B x C) tensor.
Var focal_loss(Var logits, const Tensor& labels, double gamma, double alpha);

/// omega_fl * focal + omega_cl * contrastive
Var total_loss(Var focal, Var contrastive, const LossConfig& cfg);
double total_loss(double focal, double contrastive, const LossConfig& cfg);

}  // namespace thgcl
