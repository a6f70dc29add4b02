#include "thgcl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

namespace thgcl {

AdamState AdamState::zeros_like(const ParameterSet& params) {
    AdamState s;
    for (const auto& p : params.items()) {
        s.m.push_back(Tensor::zeros(p.value.shape()));
        s.v.push_back(Tensor::zeros(p.value.shape()));
    }
    return s;
}

void adam_step(ParameterSet& params, std::span<const Tensor> grads, AdamState& state, const AdamConfig& cfg) {
    auto& items = params.items();
    if (grads.size() != items.size() || state.m.size() != items.size() || state.v.size() != items.size()) {
        throw ShapeError("adam: parameter, gradient and state counts differ");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t k = 0; k < items.size(); ++k) {
        auto w = items[k].value.values();
        const auto g = grads[k].values();
        auto m = state.m[k].values();
        auto v = state.v[k].values();
        if (g.size() != w.size() || m.size() != w.size()) throw ShapeError("adam: gradient shape mismatch for " + items[k].name);
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            w[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
        }
    }
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void write_train_log(const TrainLog& log, std::ostream& out) {
    std::size_t e = 0;
    for (const auto& it : log.iterations) {
        out << "iter=" << it.iter << " fl=" << fmt(it.fl) << " cl=" << fmt(it.cl) << " total=" << fmt(it.total) << '\n';
        while (e < log.evals.size() && log.evals[e].iter <= it.iter) {
            const auto& ev = log.evals[e++];
            out << "eval_iter=" << ev.iter << " map=" << fmt(ev.map) << " auc=" << fmt(ev.auc) << '\n';
        }
    }
    for (; e < log.evals.size(); ++e) {
        const auto& ev = log.evals[e];
        out << "eval_iter=" << ev.iter << " map=" << fmt(ev.map) << " auc=" << fmt(ev.auc) << '\n';
    }
}

void write_loss_curve(const TrainLog& log, std::ostream& out) {
    out << "iter\tfl\tcl\ttotal\n";
    for (const auto& it : log.iterations) {
        out << it.iter << '\t' << fmt(it.fl) << '\t' << fmt(it.cl) << '\t' << fmt(it.total) << '\n';
    }
}

void write_eval_curve(const TrainLog& log, std::ostream& out) {
    out << "iter\tmap\tauc\n";
    for (const auto& ev : log.evals) out << ev.iter << '\t' << fmt(ev.map) << '\t' << fmt(ev.auc) << '\n';
}

std::vector<ClipData> load_clips(const std::vector<ClipRecord>& records, const GraphConfig& graph_cfg, int threads) {
    graph_cfg.validate();
    std::vector<ClipData> clips(records.size());
    parallel_for(records.size(), threads, [&](std::size_t i) {
        const auto& rec = records[i];
        ClipData c;
        c.clip_id = rec.clip_id;
        c.labels = rec.labels;
        c.audio = read_feature_file(rec.audio_path);
        c.video = read_feature_file(rec.video_path);
        if (c.audio.modality != Modality::audio || c.video.modality != Modality::video) {
            throw Error("clip " + rec.clip_id + ": feature files have the wrong modality");
        }
        const auto a_end = static_cast<long long>(c.audio.intervals.back().end_ms);
        const auto v_end = static_cast<long long>(c.video.intervals.back().end_ms);
        const auto seg = static_cast<long long>(
            std::max(c.audio.intervals.front().length(), c.video.intervals.front().length()));
        if (std::llabs(a_end - v_end) > seg) {
            throw Error("clip " + rec.clip_id + ": audio covers " + std::to_string(a_end) + " ms but video covers " +
                        std::to_string(v_end) + " ms");
        }
        auto rng = clip_rng(graph_cfg.xi_seed, rec.clip_id);
        c.graph = build_graph(c.audio, c.video, graph_cfg, rng);
        clips[i] = std::move(c);
    });
    return clips;
}

void split_clips(std::vector<ClipData> all, double val_fraction, std::uint64_t seed, std::vector<ClipData>& train,
                 std::vector<ClipData>& val) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
    if (all.size() < 2) throw Error("need at least 2 clips to split off a validation set");
    std::mt19937_64 rng(seed ^ 0x5eed5011ull);
    for (std::size_t i = all.size() - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i + 1));
        std::swap(all[i], all[std::min(j, i)]);
    }
    auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(all.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, all.size() - 1);
    train.clear();
    val.clear();
    for (std::size_t i = 0; i < all.size(); ++i) (i < n_val ? val : train).push_back(std::move(all[i]));
}

Tensor label_matrix(std::span<const ClipData* const> clips, std::uint32_t num_classes) {
    Tensor y = Tensor::zeros({clips.size(), num_classes});
    for (std::size_t r = 0; r < clips.size(); ++r) {
        for (int l : clips[r]->labels) {
            if (l < 0 || static_cast<std::uint32_t>(l) >= num_classes) {
                throw ConfigError("clip " + clips[r]->clip_id + ": label " + std::to_string(l) + " out of range");
            }
            y.at(r, static_cast<std::size_t>(l)) = 1.0;
        }
    }
    return y;
}

Tensor predict(const ThgnModel& model, const std::vector<ClipData>& clips, int batch_size, int threads) {
    const std::size_t C = model.config.num_classes;
    Tensor scores = Tensor::zeros({clips.size(), C});
    const std::size_t bs = static_cast<std::size_t>(std::max(batch_size, 1));
    const std::size_t chunks = (clips.size() + bs - 1) / bs;
    parallel_for(chunks, threads, [&](std::size_t k) {
        const std::size_t begin = k * bs;
        const std::size_t end = std::min(clips.size(), begin + bs);
        std::vector<const ClipData*> batch;
        for (std::size_t i = begin; i < end; ++i) batch.push_back(&clips[i]);
        Tape tape;
        BoundModel bound(tape, model, false);
        const auto out = model_forward(bound, batch);
        const Tensor& z = ops::sigmoid(out.logits).value();
        for (std::size_t r = 0; r < batch.size(); ++r) {
            for (std::size_t c = 0; c < C; ++c) scores.at(begin + r, c) = z.at(r, c);
        }
    });
    return scores;
}

EvalReport evaluate(const ThgnModel& model, const std::vector<ClipData>& clips, int batch_size, int threads) {
    const Tensor scores = predict(model, clips, batch_size, threads);
    std::vector<const ClipData*> ptrs;
    for (const auto& c : clips) ptrs.push_back(&c);
    return evaluate_scores(scores, label_matrix(ptrs, model.config.num_classes));
}

ModelConfig model_config_for(const TrainConfig& cfg, const std::vector<ClipData>& clips, int num_classes) {
    if (clips.empty()) throw Error("no clips to infer feature widths from");
    ModelConfig m;
    m.audio_dim = clips.front().audio.dim;
    m.video_dim = clips.front().video.dim;
    m.d = cfg.d;
    m.hidden = cfg.hidden;
    m.layers = cfg.layers;
    m.num_classes = static_cast<std::uint32_t>(num_classes);
    m.validate();
    return m;
}

void check_compatible(const ModelConfig& model, const std::vector<ClipData>& clips) {
    for (const auto& c : clips) {
        if (c.audio.dim != model.audio_dim || c.video.dim != model.video_dim) {
            throw ConfigError("clip " + c.clip_id + ": feature widths " + std::to_string(c.audio.dim) + "/" +
                              std::to_string(c.video.dim) + " do not match model " + describe(model));
        }
        for (int l : c.labels) {
            if (l < 0 || static_cast<std::uint32_t>(l) >= model.num_classes) {
                throw ConfigError("clip " + c.clip_id + ": label " + std::to_string(l) + " exceeds model classes");
            }
        }
    }
}

TrainResult train(const std::vector<ClipData>& train_clips, const std::vector<ClipData>& val, const TrainConfig& cfg,
                  const ProgressFn& progress) {
    cfg.validate();
    if (train_clips.empty()) throw Error("training set is empty");
    if (val.empty()) throw Error("validation set is empty");

    int C = cfg.num_classes;
    if (C == 0) {
        for (const auto* set : {&train_clips, &val}) {
            for (const auto& c : *set) {
                for (int l : c.labels) C = std::max(C, l + 1);
            }
        }
        if (C == 0) throw ConfigError("cannot infer num_classes: no labels in the data");
    }
    const ModelConfig mcfg = model_config_for(cfg, train_clips, C);
    check_compatible(mcfg, train_clips);
    check_compatible(mcfg, val);

    const LossConfig loss = cfg.effective_loss();
    const bool use_cl = cfg.loss_mode == LossMode::fl_cl;
    const AdamConfig adam{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};

    TrainResult result;
    ThgnModel model = ThgnModel::initialize(mcfg, cfg.seed);
    result.best = model;
    if (cfg.max_iterations == 0) return result;

    AdamState state = AdamState::zeros_like(model.params);
    std::mt19937_64 order_rng(cfg.seed ^ 0x0bad5eedull);
    std::vector<std::size_t> order(train_clips.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t bs = std::min(static_cast<std::size_t>(cfg.batch_size), train_clips.size());
    if (use_cl && bs < 2) throw ConfigError("contrastive loss needs at least 2 training clips per batch");
    std::size_t cursor = order.size();

    double best_map = -std::numeric_limits<double>::infinity();
    int since_best = 0;
    const auto t0 = std::chrono::steady_clock::now();

    for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
        if (cursor + bs > order.size()) {
            for (std::size_t i = order.size() - 1; i > 0; --i) {
                const auto j = static_cast<std::size_t>(uniform01(order_rng) * static_cast<double>(i + 1));
                std::swap(order[i], order[std::min(j, i)]);
            }
            cursor = 0;
        }
        std::vector<const ClipData*> batch;
        for (std::size_t k = 0; k < bs; ++k) batch.push_back(&train_clips[order[cursor + k]]);
        cursor += bs;

        Tape tape;
        BoundModel bound(tape, model, true);
        const auto out = model_forward(bound, batch);
        const Var fl = focal_loss(out.logits, label_matrix(batch, mcfg.num_classes), loss.focal_gamma,
                                  loss.focal_alpha);
        Var total;
        double cl_value = 0.0;
        if (use_cl) {
            const Var cl = contrastive_loss(out.audio_embed, out.video_embed, loss.temperature);
            cl_value = cl.value().item();
            total = total_loss(fl, cl, loss);
        } else {
            total = ops::scale(fl, loss.omega_fl);
        }
        const Gradients grads = tape.backward(total);
        std::vector<Tensor> g;
        g.reserve(bound.vars().size());
        for (const Var& v : bound.vars()) g.push_back(grads[v]);
        adam_step(model.params, g, state, adam);

        IterationRecord rec{iter, fl.value().item(), cl_value, total.value().item(), seconds_since(t0)};
        if (!std::isfinite(rec.total)) throw DomainError("loss became non-finite at iteration " + std::to_string(iter));
        result.log.iterations.push_back(rec);
        result.iterations_run = iter;

        if (iter % cfg.eval_every == 0 || iter == cfg.max_iterations) {
            const EvalReport r = evaluate(model, val, cfg.batch_size, cfg.threads);
            result.log.evals.push_back({iter, r.map.value, r.auc.value, seconds_since(t0)});
            if (progress) {
                progress("iter " + std::to_string(iter) + "  loss " + fmt(rec.total) + "  val mAP " + fmt(r.map.value));
            }
            const double m = std::isnan(r.map.value) ? -std::numeric_limits<double>::infinity() : r.map.value;
            if (m > best_map) {
                best_map = m;
                result.best = model;
                result.best_iter = iter;
                since_best = 0;
            } else if (++since_best >= cfg.early_stop_patience) {
                result.early_stopped = true;
                break;
            }
        }
    }
    result.best_map = std::isfinite(best_map) ? best_map : std::numeric_limits<double>::quiet_NaN();
    return result;
}

}  // namespace thgcl
