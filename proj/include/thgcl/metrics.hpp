#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "thgcl/tensor.hpp"

namespace thgcl {

/// Precision averaged over the rank of each positive after a descending,
/// index-stable sort by score. Empty when there are no positives.
std::optional<double> average_precision(std::span<const double> scores, std::span<const double> labels);

/// Mann-Whitney AUC with ties counted as 1/2. Empty unless both classes are present.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const double> labels);

struct MacroMetric {
    double value = 0.0;              // NaN when every class was skipped
    std::vector<double> per_class;   // NaN for skipped classes
    std::vector<std::size_t> skipped;
};

/// Macro averages over the columns of (M x C) score/label matrices.
MacroMetric mean_average_precision(const Tensor& scores, const Tensor& labels);
MacroMetric auc_roc(const Tensor& scores, const Tensor& labels);

struct EvalReport {
    std::size_t clips = 0;
    MacroMetric map;
    MacroMetric auc;
};

EvalReport evaluate_scores(const Tensor& scores, const Tensor& labels);

/// Human-readable lines: overall metrics then one line per class.
void write_metrics_text(const EvalReport& report, std::ostream& out);
/// `key=value` lines: clips, map, auc, skipped_map, skipped_auc, ap.<k>, auc.<k>.
void write_metrics_summary(const EvalReport& report, std::ostream& out);

}  // namespace thgcl
