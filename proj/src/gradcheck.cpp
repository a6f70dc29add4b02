#include "thgcl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "thgcl/trainer.hpp"

namespace thgcl {

namespace {

FeatureSequence random_sequence(Modality modality, std::size_t segments, std::uint32_t dim, std::uint32_t clip_ms,
                                std::mt19937_64& rng) {
    FeatureSequence seq;
    seq.modality = modality;
    seq.dim = dim;
    const std::uint32_t seg_ms = clip_ms / static_cast<std::uint32_t>(segments);
    seq.intervals = uniform_intervals(seg_ms * static_cast<std::uint32_t>(segments), seg_ms);
    seq.values.resize(segments * dim);
    for (float& v : seq.values) v = static_cast<float>(2.0 * uniform01(rng) - 1.0);
    return seq;
}

Var loss_on_tape(const BoundModel& bound, const std::vector<ClipData>& clips, const LossConfig& loss) {
    std::vector<const ClipData*> batch;
    for (const auto& c : clips) batch.push_back(&c);
    const auto out = model_forward(bound, batch);
    const Var fl = focal_loss(out.logits, label_matrix(batch, bound.model().config.num_classes), loss.focal_gamma,
                              loss.focal_alpha);
    const Var cl = contrastive_loss(out.audio_embed, out.video_embed, loss.temperature);
    return total_loss(fl, cl, loss);
}

}  // namespace

std::vector<ClipData> gradcheck_clips(const GradcheckSetup& s) {
    std::mt19937_64 rng(s.seed);
    // A duration divisible by both segment counts keeps the two modalities aligned.
    const auto clip_ms = static_cast<std::uint32_t>(240 * s.audio_segments * s.video_segments);
    GraphConfig g;
    g.temporal_mode = s.temporal_mode;
    std::vector<ClipData> clips;
    for (int k = 0; k < 2; ++k) {
        ClipData c;
        c.clip_id = "grad" + std::to_string(k);
        c.audio = random_sequence(Modality::audio, s.audio_segments, s.audio_dim, clip_ms, rng);
        c.video = random_sequence(Modality::video, s.video_segments, s.video_dim, clip_ms, rng);
        for (std::uint32_t l = 0; l < s.num_classes; ++l) {
            if ((l + static_cast<std::uint32_t>(k)) % 2 == 0) c.labels.push_back(static_cast<int>(l));
        }
        auto graph_rng = clip_rng(s.seed, c.clip_id);
        c.graph = build_graph(c.audio, c.video, g, graph_rng);
        clips.push_back(std::move(c));
    }
    return clips;
}

double batch_loss(const ThgnModel& model, const std::vector<ClipData>& clips, const LossConfig& loss) {
    Tape tape;
    BoundModel bound(tape, model, false);
    return loss_on_tape(bound, clips, loss).value().item();
}

GradcheckReport end_to_end_gradcheck(const GradcheckSetup& s) {
    ModelConfig cfg;
    cfg.audio_dim = s.audio_dim;
    cfg.video_dim = s.video_dim;
    cfg.d = s.d;
    cfg.hidden = s.hidden;
    cfg.layers = s.layers;
    cfg.num_classes = s.num_classes;
    ThgnModel model = ThgnModel::initialize(cfg, s.seed);
    // Nonzero biases so their gradients are exercised away from the initial point.
    std::mt19937_64 rng(s.seed + 1);
    for (auto& p : model.params.items()) {
        if (p.value.ndim() == 1) {
            for (double& v : p.value.values()) v = 0.1 * (2.0 * uniform01(rng) - 1.0);
        }
    }
    const auto clips = gradcheck_clips(s);

    Tape tape;
    BoundModel bound(tape, model, true);
    const Gradients grads = tape.backward(loss_on_tape(bound, clips, s.loss));

    GradcheckReport report;
    auto& items = model.params.items();
    for (std::size_t k = 0; k < items.size(); ++k) {
        const Tensor analytic = grads[bound.vars()[k]];
        Tensor numeric = Tensor::zeros(analytic.shape());
        auto values = items[k].value.values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + s.step;
            const double up = batch_loss(model, clips, s.loss);
            values[i] = saved - s.step;
            const double down = batch_loss(model, clips, s.loss);
            values[i] = saved;
            numeric[i] = (up - down) / (2.0 * s.step);
        }
        ParameterCheck pc{items[k].name, values.size(), relative_error(analytic, numeric)};
        report.max_error = std::max(report.max_error, pc.max_error);
        report.parameters.push_back(pc);
    }
    return report;
}

}  // namespace thgcl
