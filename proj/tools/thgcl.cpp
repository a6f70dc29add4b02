// thgcl: command-line front end for dataset synthesis, graph inspection,
// training, evaluation and gradient checking.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "thgcl/gradcheck.hpp"
#include "thgcl/synth.hpp"
#include "thgcl/trainer.hpp"

namespace fs = std::filesystem;
using namespace thgcl;

namespace {

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

struct GraphFlags {
    std::optional<std::string> temporal_mode;
    std::optional<std::string> xi_mode;
    std::optional<std::uint64_t> xi_seed;
    std::optional<double> tau;
    std::optional<int> span_audio, span_video, span_inter, dilation_audio, dilation_video;

    void add(CLI::App* app) {
        app->add_option("--temporal-mode", temporal_mode, "gau_haw | both_haw | both_gau");
        app->add_option("--xi-mode", xi_mode, "sampled | fixed");
        app->add_option("--xi-seed", xi_seed);
        app->add_option("--tau", tau);
        app->add_option("--span-audio", span_audio);
        app->add_option("--span-video", span_video);
        app->add_option("--span-inter", span_inter);
        app->add_option("--dilation-audio", dilation_audio);
        app->add_option("--dilation-video", dilation_video);
    }

    void apply(TrainConfig& cfg) const {
        if (temporal_mode) cfg.temporal_mode = parse_temporal_mode(*temporal_mode);
        if (xi_mode) cfg.graph_cfg.xi_mode = parse_xi_mode(*xi_mode);
        if (xi_seed) cfg.graph_cfg.xi_seed = *xi_seed;
        if (tau) cfg.graph_cfg.tau = *tau;
        if (span_audio) cfg.graph_cfg.span_audio = *span_audio;
        if (span_video) cfg.graph_cfg.span_video = *span_video;
        if (span_inter) cfg.graph_cfg.span_inter = *span_inter;
        if (dilation_audio) cfg.graph_cfg.dilation_audio = *dilation_audio;
        if (dilation_video) cfg.graph_cfg.dilation_video = *dilation_video;
    }
};

TrainConfig base_config(const std::string& config_path) {
    return config_path.empty() ? TrainConfig{} : load_train_config(config_path);
}

int run_synth(const SynthSpec& spec, const fs::path& out) {
    const SynthOutput o = generate(spec, out);
    std::cout << "wrote " << o.clips << " clips to " << out.string() << '\n'
              << "train manifest " << o.train_manifest.string() << '\n'
              << "eval manifest " << o.eval_manifest.string() << '\n';
    return 0;
}

int run_describe(const fs::path& manifest, int classes) {
    const auto records = load_manifest(manifest, classes > 0 ? classes : 1 << 30);
    write_summary(describe(records, classes > 0 ? classes : infer_num_classes(records)), std::cout);
    return 0;
}

int run_build_graph(const TrainConfig& cfg, const fs::path& manifest, const std::string& clip_id,
                    const fs::path& audio, const fs::path& video, const fs::path& out) {
    std::vector<ClipRecord> records;
    if (!manifest.empty()) {
        for (auto& r : load_manifest(manifest, 1 << 30)) {
            if (clip_id.empty() || r.clip_id == clip_id) {
                records.push_back(std::move(r));
                break;
            }
        }
        if (records.empty()) throw Error("clip '" + clip_id + "' not in " + manifest.string());
    } else {
        if (audio.empty() || video.empty()) throw ConfigError("build-graph needs --manifest or both --audio and --video");
        records.push_back({clip_id.empty() ? audio.stem().stem().string() : clip_id, audio, video, {}});
    }
    const auto clips = load_clips(records, cfg.graph(), 1);
    if (out.empty()) {
        write_graph_text(clips.front().graph, std::cout);
    } else {
        auto f = open_out(out);
        write_graph_text(clips.front().graph, f);
    }
    return 0;
}

void write_eval(const EvalReport& report, const fs::path& dir, const std::string& stem) {
    auto text = open_out(dir / (stem + ".txt"));
    write_metrics_text(report, text);
    auto summary = open_out(dir / (stem + "_summary.txt"));
    write_metrics_summary(report, summary);
}

int run_train(TrainConfig cfg, const fs::path& manifest, const fs::path& val_manifest, const fs::path& eval_manifest,
              const fs::path& out, bool quiet) {
    cfg.validate();
    const int probe = cfg.num_classes > 0 ? cfg.num_classes : 1 << 30;
    auto train_records = load_manifest(manifest, probe);
    std::vector<ClipRecord> val_records;
    if (!val_manifest.empty()) val_records = load_manifest(val_manifest, probe);
    if (cfg.num_classes == 0) {
        auto all = train_records;
        all.insert(all.end(), val_records.begin(), val_records.end());
        cfg.num_classes = infer_num_classes(all);
    }

    std::vector<ClipData> train_clips, val_clips;
    auto loaded = load_clips(train_records, cfg.graph(), cfg.threads);
    if (val_records.empty()) {
        split_clips(std::move(loaded), cfg.val_fraction, cfg.seed, train_clips, val_clips);
    } else {
        train_clips = std::move(loaded);
        val_clips = load_clips(val_records, cfg.graph(), cfg.threads);
    }

    fs::create_directories(out);
    {
        auto f = open_out(out / "config.txt");
        f << to_config_text(cfg);
    }
    const ProgressFn progress = quiet ? ProgressFn{} : ProgressFn([](const std::string& line) {
        std::cerr << line << '\n';
    });
    const TrainResult r = train(train_clips, val_clips, cfg, progress);

    save_checkpoint(r.best, out / "checkpoint.thgc");
    {
        auto f = open_out(out / "train_log.txt");
        write_train_log(r.log, f);
    }
    {
        auto f = open_out(out / "loss_curve.tsv");
        write_loss_curve(r.log, f);
    }
    {
        auto f = open_out(out / "eval_curve.tsv");
        write_eval_curve(r.log, f);
    }
    const EvalReport val_report = evaluate(r.best, val_clips, cfg.batch_size, cfg.threads);
    write_eval(val_report, out, "metrics");
    std::printf("model %s\nparameters %zu\niterations %d%s\nbest iteration %d\nvalidation mAP %.6f AUC %.6f\n",
                describe(r.best.config).c_str(), param_count(r.best), r.iterations_run,
                r.early_stopped ? " (early stop)" : "", r.best_iter, val_report.map.value, val_report.auc.value);

    if (!eval_manifest.empty()) {
        const auto eval_clips = load_clips(load_manifest(eval_manifest, cfg.num_classes), cfg.graph(), cfg.threads);
        const EvalReport rep = evaluate(r.best, eval_clips, cfg.batch_size, cfg.threads);
        write_eval(rep, out, "eval_metrics");
        std::printf("eval mAP %.6f AUC %.6f\n", rep.map.value, rep.auc.value);
    }
    return 0;
}

int run_eval(const fs::path& checkpoint, const fs::path& manifest, std::string config_path, int threads,
             const GraphFlags& graph_flags, const fs::path& out) {
    // The graph settings used in training live next to the checkpoint unless given explicitly.
    if (config_path.empty() && fs::exists(checkpoint.parent_path() / "config.txt")) {
        config_path = (checkpoint.parent_path() / "config.txt").string();
    }
    TrainConfig cfg = base_config(config_path);
    graph_flags.apply(cfg);
    const ThgnModel model = load_checkpoint(checkpoint);
    const auto records = load_manifest(manifest, static_cast<int>(model.config.num_classes));
    const auto clips = load_clips(records, cfg.graph(), threads);
    check_compatible(model.config, clips);
    const EvalReport rep = evaluate(model, clips, cfg.batch_size, threads);
    write_metrics_text(rep, std::cout);
    if (!out.empty()) {
        fs::create_directories(out);
        write_eval(rep, out, "metrics");
    }
    return 0;
}

int run_gradcheck(GradcheckSetup setup, double tolerance) {
    const GradcheckReport r = end_to_end_gradcheck(setup);
    for (const auto& p : r.parameters) std::printf("%-22s %6zu  %.3e\n", p.name.c_str(), p.entries, p.max_error);
    std::printf("max relative error %.3e (tolerance %.0e)\n", r.max_error, tolerance);
    return r.max_error < tolerance ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"temporal heterogeneous graph audio-visual event classifier"};
    app.require_subcommand(1);

    SynthSpec spec;
    fs::path synth_out;
    std::optional<double> noise;
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--classes", spec.num_classes);
    synth->add_option("--train", spec.clips_train, "training clips");
    synth->add_option("--eval", spec.clips_eval, "evaluation clips");
    synth->add_option("--clip-ms", spec.clip_ms);
    synth->add_option("--audio-seg-ms", spec.audio_seg_ms);
    synth->add_option("--video-seg-ms", spec.video_seg_ms);
    synth->add_option("--audio-dim", spec.audio_dim);
    synth->add_option("--video-dim", spec.video_dim);
    synth->add_option("--labels-min", spec.labels_min);
    synth->add_option("--labels-max", spec.labels_max);
    synth->add_option("--noise", noise, "noise sigma for both modalities");
    synth->add_option("--noise-audio", spec.noise_sigma_audio);
    synth->add_option("--noise-video", spec.noise_sigma_video);
    synth->add_option("--lag-ms", spec.lag_ms);
    synth->add_option("--event-len-ms", spec.event_len_ms);
    synth->add_option("--seed", spec.seed);

    fs::path describe_manifest;
    int describe_classes = 0;
    auto* desc = app.add_subcommand("describe", "label and duration statistics of a manifest");
    desc->add_option("--manifest", describe_manifest)->required();
    desc->add_option("--classes", describe_classes, "class count (default: inferred)");

    std::string graph_config;
    fs::path graph_manifest, graph_audio, graph_video, graph_out;
    std::string graph_clip;
    GraphFlags graph_flags;
    auto* bg = app.add_subcommand("build-graph", "dump one clip's graph as text");
    bg->add_option("--config", graph_config);
    bg->add_option("--manifest", graph_manifest);
    bg->add_option("--clip", graph_clip, "clip id (default: first in manifest)");
    bg->add_option("--audio", graph_audio);
    bg->add_option("--video", graph_video);
    bg->add_option("--out", graph_out, "output file (default: stdout)");
    graph_flags.add(bg);

    std::string train_config;
    fs::path train_manifest, val_manifest, eval_manifest, train_out;
    std::optional<std::uint64_t> train_seed;
    std::optional<std::string> loss_mode;
    std::optional<int> max_iter, hidden, threads;
    bool quiet = false;
    GraphFlags train_graph;
    auto* tr = app.add_subcommand("train", "train a model");
    tr->add_option("--config", train_config);
    tr->add_option("--manifest", train_manifest)->required();
    tr->add_option("--val-manifest", val_manifest, "explicit validation set (default: split of --manifest)");
    tr->add_option("--eval-manifest", eval_manifest, "evaluate the selected model here after training");
    tr->add_option("--out", train_out)->required();
    tr->add_option("--seed", train_seed);
    tr->add_option("--loss-mode", loss_mode, "fl_cl | fl_only | ce_only");
    tr->add_option("--max-iterations", max_iter);
    tr->add_option("--hidden", hidden);
    tr->add_option("--threads", threads);
    tr->add_flag("--quiet", quiet);
    train_graph.add(tr);

    fs::path ckpt, eval_data, eval_out;
    std::string eval_config;
    int eval_threads = 1;
    GraphFlags eval_graph;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--checkpoint", ckpt)->required();
    ev->add_option("--manifest", eval_data)->required();
    ev->add_option("--config", eval_config, "training config (default: config.txt beside the checkpoint)");
    ev->add_option("--threads", eval_threads);
    ev->add_option("--out", eval_out, "directory for metrics.txt and metrics_summary.txt");
    eval_graph.add(ev);

    GradcheckSetup gc;
    double gc_tol = 1e-4;
    std::string gc_mode;
    auto* gcmd = app.add_subcommand("gradcheck", "finite-difference check of the full model and loss");
    gcmd->add_option("--seed", gc.seed);
    gcmd->add_option("--step", gc.step);
    gcmd->add_option("--tolerance", gc_tol);
    gcmd->add_option("--temporal-mode", gc_mode);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            if (noise) spec.noise_sigma_audio = spec.noise_sigma_video = *noise;
            return run_synth(spec, synth_out);
        }
        if (*desc) return run_describe(describe_manifest, describe_classes);
        if (*bg) {
            TrainConfig cfg = base_config(graph_config);
            graph_flags.apply(cfg);
            return run_build_graph(cfg, graph_manifest, graph_clip, graph_audio, graph_video, graph_out);
        }
        if (*tr) {
            TrainConfig cfg = base_config(train_config);
            if (train_seed) cfg.seed = *train_seed;
            if (loss_mode) cfg.loss_mode = parse_loss_mode(*loss_mode);
            if (max_iter) cfg.max_iterations = *max_iter;
            if (hidden) cfg.hidden = static_cast<std::uint32_t>(*hidden);
            if (threads) cfg.threads = *threads;
            train_graph.apply(cfg);
            return run_train(cfg, train_manifest, val_manifest, eval_manifest, train_out, quiet);
        }
        if (*ev) return run_eval(ckpt, eval_data, eval_config, eval_threads, eval_graph, eval_out);
        if (*gcmd) {
            if (!gc_mode.empty()) gc.temporal_mode = parse_temporal_mode(gc_mode);
            return run_gradcheck(gc, gc_tol);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
