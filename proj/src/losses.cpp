#include "thgcl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace thgcl {

void LossConfig::validate() const {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (!(omega_fl >= 0.0) || !(omega_cl >= 0.0)) throw ConfigError("loss weights must be >= 0");
    if (!(focal_gamma >= 0.0)) throw ConfigError("focal_gamma must be >= 0");
    if (!(focal_alpha > 0.0 && focal_alpha <= 1.0)) throw ConfigError("focal_alpha must lie in (0, 1]");
}

Var contrastive_direction(Var anchor, Var other, double temperature) {
    const std::size_t b = anchor.value().rows();
    if (anchor.value().ndim() != 2 || b < 2) throw Error("contrastive loss undefined for batch < 2");
    if (other.value().shape() != anchor.value().shape()) {
        throw ShapeError("contrastive loss: embedding shapes " + shape_to_string(anchor.value().shape()) + " and " +
                         shape_to_string(other.value().shape()) + " differ");
    }
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    Tape& tape = *anchor.tape();

    Var sim = ops::scale(ops::cosine_similarity(anchor, other), 1.0 / temperature);
    const Tensor& s = sim.value();
    Tensor eye = Tensor::identity(b);
    Tensor off = Tensor::filled({b, b}, 1.0);
    // Per-row max over the negatives; the shift leaves the log-sum-exp unchanged.
    Tensor shift({b, b});
    Tensor row_max({b, 1});
    for (std::size_t i = 0; i < b; ++i) {
        off.at(i, i) = 0.0;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < b; ++j) {
            if (j != i) m = std::max(m, s.at(i, j));
        }
        row_max[i] = m;
        for (std::size_t j = 0; j < b; ++j) shift.at(i, j) = m;
    }
    Var negatives = ops::mul(ops::exp(ops::sub(sim, tape.constant(std::move(shift)))), tape.constant(std::move(off)));
    Var log_denominator = ops::add(ops::log(ops::sum_rows(negatives)), tape.constant(std::move(row_max)));
    Var positive = ops::sum_rows(ops::mul(sim, tape.constant(std::move(eye))));
    return ops::scale(ops::mean(ops::sub(positive, log_denominator)), -1.0);
}

Var contrastive_loss(Var audio, Var video, double temperature) {
    return ops::add(contrastive_direction(audio, video, temperature),
                    contrastive_direction(video, audio, temperature));
}

Var focal_loss(Var logits, const Tensor& labels, double gamma, double alpha) {
    const Tensor& z = logits.value();
    if (z.shape() != labels.shape()) {
        throw ShapeError("focal_loss: logits " + shape_to_string(z.shape()) + " vs labels " +
                         shape_to_string(labels.shape()));
    }
    if (z.numel() == 0) throw ShapeError("focal_loss: empty input");
    const std::size_t n = z.numel();
    // d(loss_e)/d(logit_e), filled during the forward pass.
    Tensor dz(z.shape());
    double total = 0.0;
    for (std::size_t e = 0; e < n; ++e) {
        const double y = labels[e];
        if (y != 0.0 && y != 1.0) throw DomainError("focal_loss: labels must be 0 or 1");
        const double sign = y == 1.0 ? 1.0 : -1.0;
        const double t = sign * z[e];
        double pt = t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
        const bool clamped = pt < kFocalClamp || pt > 1.0 - kFocalClamp;
        pt = std::clamp(pt, kFocalClamp, 1.0 - kFocalClamp);
        const double q = 1.0 - pt;
        const double logp = std::log(pt);
        total += -alpha * std::pow(q, gamma) * logp;
        if (!clamped) {
            dz[e] = -alpha * sign * (std::pow(q, gamma + 1.0) - gamma * std::pow(q, gamma) * pt * logp);
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    return logits.tape()->record(Tensor::scalar(total * inv_n), {logits},
                                 [dz = std::move(dz), inv_n](const BackwardArgs& args) {
                                     const double g = args.grad_out[0] * inv_n;
                                     Tensor& out = *args.grad_in[0];
                                     for (std::size_t e = 0; e < out.numel(); ++e) out[e] += g * dz[e];
                                 });
}

Var total_loss(Var focal, Var contrastive, const LossConfig& cfg) {
    return ops::add(ops::scale(focal, cfg.omega_fl), ops::scale(contrastive, cfg.omega_cl));
}

double total_loss(double focal, double contrastive, const LossConfig& cfg) {
    return cfg.omega_fl * focal + cfg.omega_cl * contrastive;
}

}  // namespace thgcl
