#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "thgcl/feature_io.hpp"
#include "thgcl/graph.hpp"
#include "thgcl/losses.hpp"
#include "thgcl/metrics.hpp"
#include "thgcl/model.hpp"

namespace thgcl {

enum class LossMode {
    fl_cl,    // focal + contrastive
    fl_only,  // focal
    ce_only,  // binary cross-entropy (focal with gamma 0, alpha 1)
};

std::string to_string(LossMode mode);
LossMode parse_loss_mode(const std::string& s);

struct TrainConfig {
    double lr = 0.005;
    int max_iterations = 5000;
    int batch_size = 32;
    int early_stop_patience = 10;
    int eval_every = 100;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    LossConfig loss_cfg;
    GraphConfig graph_cfg;
    std::uint32_t hidden = 512;
    std::uint32_t d = 128;
    std::uint32_t layers = 4;
    LossMode loss_mode = LossMode::fl_cl;
    TemporalMode temporal_mode = TemporalMode::gau_haw;
    // 0 infers the class count from the manifest labels.
    int num_classes = 0;
    // Fraction of the training manifest held out for early stopping when no validation manifest is given.
    double val_fraction = 0.2;
    // Worker threads for clip loading and inference; 1 is strictly single-threaded.
    int threads = 1;

    void validate() const;
    /// Loss weights actually applied for loss_mode.
    LossConfig effective_loss() const;
    /// graph_cfg with temporal_mode applied.
    GraphConfig graph() const;
};

/// Parses flat `key = value` text; '#' starts a comment; unknown keys are errors.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
std::string to_config_text(const TrainConfig& cfg);

struct AdamConfig {
    double lr = 0.005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::int64_t step = 0;

    static AdamState zeros_like(const ParameterSet& params);
};

/// Bias-corrected Adam update applied in place.
void adam_step(ParameterSet& params, std::span<const Tensor> grads, AdamState& state, const AdamConfig& cfg);

struct IterationRecord {
    int iter = 0;
    double fl = 0.0;
    double cl = 0.0;
    double total = 0.0;
    double wall_s = 0.0;
};

struct EvalRecord {
    int iter = 0;
    double map = 0.0;
    double auc = 0.0;
    double wall_s = 0.0;
};

struct TrainLog {
    std::vector<IterationRecord> iterations;
    std::vector<EvalRecord> evals;
};

/// `iter=<n> fl=<v> cl=<v> total=<v>` and `eval_iter=<n> map=<v> auc=<v>` lines in order.
void write_train_log(const TrainLog& log, std::ostream& out);
/// Plot-ready tab-separated curves with a header row.
void write_loss_curve(const TrainLog& log, std::ostream& out);
void write_eval_curve(const TrainLog& log, std::ostream& out);

/// Loads features for every record and builds each clip's graph.
std::vector<ClipData> load_clips(const std::vector<ClipRecord>& records, const GraphConfig& graph_cfg,
                                 int threads = 1);

/// Splits clips into (train, validation) with a seeded clip-level shuffle.
void split_clips(std::vector<ClipData> all, double val_fraction, std::uint64_t seed, std::vector<ClipData>& train,
                 std::vector<ClipData>& val);

/// Binary (clips x num_classes) label matrix.
Tensor label_matrix(std::span<const ClipData* const> clips, std::uint32_t num_classes);

/// Sigmoid scores (clips x C), forward-only.
Tensor predict(const ThgnModel& model, const std::vector<ClipData>& clips, int batch_size = 32, int threads = 1);

EvalReport evaluate(const ThgnModel& model, const std::vector<ClipData>& clips, int batch_size = 32,
                    int threads = 1);

struct TrainResult {
    ThgnModel best;
    TrainLog log;
    double best_map = 0.0;
    int best_iter = 0;
    int iterations_run = 0;
    bool early_stopped = false;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Trains on `train`, selecting the best-mAP model on `val`.
TrainResult train(const std::vector<ClipData>& train, const std::vector<ClipData>& val, const TrainConfig& cfg,
                  const ProgressFn& progress = {});

/// Model configuration implied by a training config and a dataset.
ModelConfig model_config_for(const TrainConfig& cfg, const std::vector<ClipData>& clips, int num_classes);

/// Throws ConfigError when a clip's features do not fit the model.
void check_compatible(const ModelConfig& model, const std::vector<ClipData>& clips);

}  // namespace thgcl
