#include "thgcl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

namespace thgcl {

std::string to_string(XiMode mode) { return mode == XiMode::sampled ? "sampled" : "fixed"; }

std::string to_string(TemporalMode mode) {
    switch (mode) {
        case TemporalMode::gau_haw: return "gau_haw";
        case TemporalMode::both_haw: return "both_haw";
        case TemporalMode::both_gau: return "both_gau";
    }
    return "?";
}

XiMode parse_xi_mode(const std::string& s) {
    if (s == "sampled") return XiMode::sampled;
    if (s == "fixed") return XiMode::fixed;
    throw ConfigError("unknown xi_mode '" + s + "' (expected sampled|fixed)");
}

TemporalMode parse_temporal_mode(const std::string& s) {
    if (s == "gau_haw") return TemporalMode::gau_haw;
    if (s == "both_haw") return TemporalMode::both_haw;
    if (s == "both_gau") return TemporalMode::both_gau;
    throw ConfigError("unknown temporal_mode '" + s + "' (expected gau_haw|both_haw|both_gau)");
}

void GraphConfig::validate() const {
    if (span_audio < 1 || span_video < 1 || span_inter < 1) throw ConfigError("graph spans must be >= 1");
    if (dilation_audio < 1 || dilation_video < 1) throw ConfigError("graph dilations must be >= 1");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (!(xi_clamp_eps > 0.0 && xi_clamp_eps < 0.5)) throw ConfigError("xi_clamp_eps must lie in (0, 0.5)");
}

std::size_t TemporalHeteroGraph::inter_edge_count() const {
    return static_cast<std::size_t>(std::count(inter_mask.values().begin(), inter_mask.values().end(), 1.0));
}

std::vector<std::size_t> intra_neighbors(std::size_t i, std::size_t count, int span, int dilation) {
    std::vector<std::size_t> out;
    const long lo = std::max<long>(0, static_cast<long>(i) - span);
    const long hi = std::min<long>(static_cast<long>(count) - 1, static_cast<long>(i) + span);
    for (long j = lo; j <= hi; ++j) {
        const long offset = std::labs(j - static_cast<long>(i));
        if (offset % dilation == 0) out.push_back(static_cast<std::size_t>(j));
    }
    return out;
}

double gaussian_weight(long i, long j, long p_min, long p_max) {
    const double dist = static_cast<double>(i - j);
    const double width = static_cast<double>(p_max - p_min + 1);
    return std::exp(-(dist * dist) / (2.0 * width * width));
}

double hawkes_weight(long p_v, long p_a_max, long p_a_min, double xi, double tau, double clamp_eps) {
    if (!(tau > 0.0)) throw ConfigError("hawkes_weight: tau must be > 0");
    xi = std::clamp(xi, clamp_eps, 1.0 - clamp_eps);
    const double excitation = std::log(xi) / std::log1p(-xi);
    const double recency = static_cast<double>(p_a_max - p_v + 1) / static_cast<double>(p_a_max - p_a_min + 1);
    const double z = excitation + recency;
    const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    return s / tau;
}

std::vector<std::pair<std::size_t, std::size_t>> inter_edges(const std::vector<Interval>& audio,
                                                             const std::vector<Interval>& video, int span_inter) {
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::vector<std::size_t> cand;
    for (std::size_t i = 0; i < audio.size(); ++i) {
        cand.clear();
        for (std::size_t j = 0; j < video.size(); ++j) {
            const auto lo = std::max(audio[i].start_ms, video[j].start_ms);
            const auto hi = std::min(audio[i].end_ms, video[j].end_ms);
            if (hi > lo) cand.push_back(j);
        }
        const double c = audio[i].center();
        std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(video[a].center() - c) < std::abs(video[b].center() - c);
        });
        if (cand.size() > static_cast<std::size_t>(span_inter)) cand.resize(static_cast<std::size_t>(span_inter));
        std::sort(cand.begin(), cand.end());
        for (std::size_t j : cand) edges.emplace_back(i, j);
    }
    return edges;
}

Tensor row_normalize(const Tensor& adj) {
    Tensor out = adj;
    for (std::size_t r = 0; r < adj.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < adj.cols(); ++c) s += adj.at(r, c);
        if (s == 0.0) continue;
        for (std::size_t c = 0; c < adj.cols(); ++c) out.at(r, c) = adj.at(r, c) / s;
    }
    return out;
}

double uniform01(std::mt19937_64& rng) {
    // (k + 0.5) / 2^53 is never exactly 0 or 1.
    const std::uint64_t k = rng() >> 11;
    return (static_cast<double>(k) + 0.5) * 0x1.0p-53;
}

std::mt19937_64 clip_rng(std::uint64_t seed, const std::string& clip_id) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char ch : clip_id) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    return std::mt19937_64(seq);
}

namespace {

double draw_xi(const GraphConfig& cfg, std::mt19937_64& rng) {
    return cfg.xi_mode == XiMode::fixed ? 0.5 : uniform01(rng);
}

Tensor intra_adjacency(std::size_t count, int span, int dilation, const GraphConfig& cfg, std::mt19937_64& rng) {
    Tensor adj({count, count});
    const bool hawkes = cfg.temporal_mode == TemporalMode::both_haw;
    for (std::size_t i = 0; i < count; ++i) {
        const auto nbrs = intra_neighbors(i, count, span, dilation);
        const long p_min = static_cast<long>(nbrs.front());
        const long p_max = static_cast<long>(nbrs.back());
        for (std::size_t j : nbrs) {
            if (j == i) {
                adj.at(i, j) = 1.0;
            } else if (hawkes) {
                adj.at(i, j) = hawkes_weight(static_cast<long>(j), p_max, p_min, draw_xi(cfg, rng), cfg.tau,
                                             cfg.xi_clamp_eps);
            } else {
                adj.at(i, j) = gaussian_weight(static_cast<long>(i), static_cast<long>(j), p_min, p_max);
            }
        }
    }
    return adj;
}

}  // namespace

TemporalHeteroGraph build_graph(const FeatureSequence& audio, const FeatureSequence& video, const GraphConfig& cfg,
                                std::mt19937_64& rng) {
    cfg.validate();
    if (audio.segments() == 0 || video.segments() == 0) throw Error("build_graph: empty modality");

    TemporalHeteroGraph g;
    g.num_audio = audio.segments();
    g.num_video = video.segments();
    g.audio_adj = intra_adjacency(g.num_audio, cfg.span_audio, cfg.dilation_audio, cfg, rng);
    g.video_adj = intra_adjacency(g.num_video, cfg.span_video, cfg.dilation_video, cfg, rng);

    const auto edges = inter_edges(audio.intervals, video.intervals, cfg.span_inter);
    // Audio index bounds over each video node's incident audio set.
    std::vector<long> a_min(g.num_video, std::numeric_limits<long>::max());
    std::vector<long> a_max(g.num_video, std::numeric_limits<long>::min());
    for (const auto& [i, j] : edges) {
        a_min[j] = std::min(a_min[j], static_cast<long>(i));
        a_max[j] = std::max(a_max[j], static_cast<long>(i));
    }
    g.inter_adj = Tensor({g.num_audio, g.num_video});
    g.inter_mask = Tensor({g.num_audio, g.num_video});
    for (const auto& [i, j] : edges) {
        const long vi = static_cast<long>(j);
        double w;
        if (cfg.temporal_mode == TemporalMode::both_gau) {
            w = gaussian_weight(static_cast<long>(i), vi, a_min[j], a_max[j]);
        } else {
            w = hawkes_weight(vi, a_max[j], a_min[j], draw_xi(cfg, rng), cfg.tau, cfg.xi_clamp_eps);
        }
        g.inter_adj.at(i, j) = w;
        g.inter_mask.at(i, j) = 1.0;
    }

    g.audio_norm = row_normalize(g.audio_adj);
    g.video_norm = row_normalize(g.video_adj);
    g.inter_norm = row_normalize(g.inter_adj);
    return g;
}

void write_graph_text(const TemporalHeteroGraph& g, std::ostream& out) {
    char buf[128];
    out << "# thgcl-graph num_audio=" << g.num_audio << " num_video=" << g.num_video << '\n';
    const auto dump = [&](const char* kind, const Tensor& raw, const Tensor& norm, const Tensor* mask) {
        for (std::size_t r = 0; r < raw.rows(); ++r) {
            for (std::size_t c = 0; c < raw.cols(); ++c) {
                const bool present = mask ? mask->at(r, c) != 0.0 : raw.at(r, c) != 0.0;
                if (!present) continue;
                std::snprintf(buf, sizeof buf, "%s %zu %zu %.9g %.9g\n", kind, r, c, raw.at(r, c), norm.at(r, c));
                out << buf;
            }
        }
    };
    dump("audio", g.audio_adj, g.audio_norm, nullptr);
    dump("video", g.video_adj, g.video_norm, nullptr);
    dump("inter", g.inter_adj, g.inter_norm, &g.inter_mask);
}

}  // namespace thgcl
