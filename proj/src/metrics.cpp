#include "thgcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

namespace thgcl {

namespace {

void check_pair(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size()) throw ShapeError("metric: scores and labels differ in length");
}

std::vector<double> column(const Tensor& t, std::size_t c) {
    std::vector<double> out(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) out[r] = t.at(r, c);
    return out;
}

template <typename PerClass>
MacroMetric macro(const Tensor& scores, const Tensor& labels, PerClass per_class) {
    if (scores.shape() != labels.shape() || scores.ndim() != 2) {
        throw ShapeError("metric: scores " + shape_to_string(scores.shape()) + " vs labels " +
                         shape_to_string(labels.shape()));
    }
    MacroMetric m;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < scores.cols(); ++c) {
        const auto s = column(scores, c);
        const auto l = column(labels, c);
        if (auto v = per_class(std::span<const double>(s), std::span<const double>(l))) {
            m.per_class.push_back(*v);
            total += *v;
            ++counted;
        } else {
            m.per_class.push_back(nan);
            m.skipped.push_back(c);
        }
    }
    m.value = counted ? total / static_cast<double>(counted) : nan;
    return m;
}

}  // namespace

std::optional<double> average_precision(std::span<const double> scores, std::span<const double> labels) {
    check_pair(scores, labels);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double hits = 0.0;
    double sum = 0.0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (labels[order[rank]] > 0.5) {
            hits += 1.0;
            sum += hits / static_cast<double>(rank + 1);
        }
    }
    if (hits == 0.0) return std::nullopt;
    return sum / hits;
}

std::optional<double> roc_auc(std::span<const double> scores, std::span<const double> labels) {
    check_pair(scores, labels);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Average 1-based ranks over tie groups.
    double pos_rank_sum = 0.0;
    double n_pos = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] > 0.5) {
                pos_rank_sum += avg_rank;
                n_pos += 1.0;
            }
        }
        i = j;
    }
    const double n_neg = static_cast<double>(n) - n_pos;
    if (n_pos == 0.0 || n_neg == 0.0) return std::nullopt;
    return (pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

MacroMetric mean_average_precision(const Tensor& scores, const Tensor& labels) {
    return macro(scores, labels, average_precision);
}

MacroMetric auc_roc(const Tensor& scores, const Tensor& labels) { return macro(scores, labels, roc_auc); }

EvalReport evaluate_scores(const Tensor& scores, const Tensor& labels) {
    EvalReport r;
    r.clips = scores.rows();
    r.map = mean_average_precision(scores, labels);
    r.auc = auc_roc(scores, labels);
    return r;
}

void write_metrics_text(const EvalReport& report, std::ostream& out) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "clips %zu  mAP %.6f  AUC %.6f\n", report.clips, report.map.value,
                  report.auc.value);
    out << buf;
    for (std::size_t c = 0; c < report.map.per_class.size(); ++c) {
        std::snprintf(buf, sizeof buf, "class %zu  AP %.6f  AUC %.6f\n", c, report.map.per_class[c],
                      report.auc.per_class[c]);
        out << buf;
    }
}

void write_metrics_summary(const EvalReport& report, std::ostream& out) {
    char buf[96];
    const auto kv = [&](const std::string& key, double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << key << '=' << buf << '\n';
    };
    const auto list = [](const std::vector<std::size_t>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
        return s;
    };
    out << "clips=" << report.clips << '\n';
    kv("map", report.map.value);
    kv("auc", report.auc.value);
    out << "skipped_map=" << list(report.map.skipped) << '\n';
    out << "skipped_auc=" << list(report.auc.skipped) << '\n';
    for (std::size_t c = 0; c < report.map.per_class.size(); ++c) kv("ap." + std::to_string(c), report.map.per_class[c]);
    for (std::size_t c = 0; c < report.auc.per_class.size(); ++c) kv("auc." + std::to_string(c), report.auc.per_class[c]);
}

}  // namespace thgcl
