#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "thgcl/feature_io.hpp"
#include "thgcl/tensor.hpp"

namespace thgcl {

enum class XiMode { sampled, fixed };

/// Which weighting family is applied to intra-modal and inter-modal edges.
enum class TemporalMode {
    gau_haw,   // Gaussian intra, Hawkes inter
    both_haw,  // Hawkes everywhere
    both_gau,  // Gaussian everywhere
};

std::string to_string(XiMode mode);
std::string to_string(TemporalMode mode);
XiMode parse_xi_mode(const std::string& s);
TemporalMode parse_temporal_mode(const std::string& s);

struct GraphConfig {
    int span_audio = 6;
    int span_video = 4;
    int span_inter = 3;
    int dilation_audio = 3;
    int dilation_video = 4;
    double tau = 1.0;
    XiMode xi_mode = XiMode::sampled;
    std::uint64_t xi_seed = 0;
    double xi_clamp_eps = 1e-6;
    TemporalMode temporal_mode = TemporalMode::gau_haw;

    void validate() const;
};

/// Dense per-clip graph. Intra adjacencies are (P x P) and inter is (P_a x P_v);
/// row index is always the aggregating (destination) node.
struct TemporalHeteroGraph {
    std::size_t num_audio = 0;
    std::size_t num_video = 0;
    Tensor audio_adj;
    Tensor video_adj;
    Tensor inter_adj;
    Tensor audio_norm;
    Tensor video_norm;
    Tensor inter_norm;
    // 1 where an inter edge exists, independent of weight magnitude.
    Tensor inter_mask;

    std::size_t inter_edge_count() const;
    friend bool operator==(const TemporalHeteroGraph&, const TemporalHeteroGraph&) = default;
};

/// {i} plus every j within `span` of i whose offset is a multiple of `dilation`.
std::vector<std::size_t> intra_neighbors(std::size_t i, std::size_t count, int span, int dilation);

/// exp(-(i-j)^2 / (2 (p_max - p_min + 1)^2))
double gaussian_weight(long i, long j, long p_min, long p_max);

/// sigmoid(log(xi)/log(1-xi) + (p_a_max - p_v + 1)/(p_a_max - p_a_min + 1)) / tau,
/// with xi clamped to [clamp_eps, 1 - clamp_eps].
double hawkes_weight(long p_v, long p_a_max, long p_a_min, double xi, double tau, double clamp_eps = 1e-6);

/// Audio/video pairs whose intervals overlap, keeping for each audio node the
/// `span_inter` video nodes with the closest centers (ties to the lower index).
std::vector<std::pair<std::size_t, std::size_t>> inter_edges(const std::vector<Interval>& audio,
                                                             const std::vector<Interval>& video, int span_inter);

/// Divides each non-zero row by its sum.
Tensor row_normalize(const Tensor& adj);

/// Uniform draw in (0,1) from 53 random bits; stable across standard libraries.
double uniform01(std::mt19937_64& rng);

/// Generator for one clip, derived from the global seed and the clip id.
std::mt19937_64 clip_rng(std::uint64_t seed, const std::string& clip_id);

TemporalHeteroGraph build_graph(const FeatureSequence& audio, const FeatureSequence& video, const GraphConfig& cfg,
                                std::mt19937_64& rng);

/// Line-oriented dump: `<kind> <dst> <src> <weight> <normalized>` with 9 significant digits.
void write_graph_text(const TemporalHeteroGraph& g, std::ostream& out);

}  // namespace thgcl
