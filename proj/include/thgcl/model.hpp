#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "thgcl/autodiff.hpp"
#include "thgcl/feature_io.hpp"
#include "thgcl/graph.hpp"

namespace thgcl {

struct ModelConfig {
    std::uint32_t audio_dim = kEncoderAudioDim;
    std::uint32_t video_dim = kEncoderVideoDim;
    std::uint32_t d = 128;
    std::uint32_t hidden = 512;
    std::uint32_t layers = 4;
    std::uint32_t num_classes = 33;

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string describe(const ModelConfig& cfg);

struct NamedParameter {
    std::string name;
    Tensor value;
};

/// Ordered, name-addressable list of learnable tensors.
class ParameterSet {
public:
    void add(std::string name, Tensor value);
    Tensor& operator[](const std::string& name);
    const Tensor& operator[](const std::string& name) const;
    bool contains(const std::string& name) const;

    std::size_t size() const { return items_.size(); }
    std::vector<NamedParameter>& items() { return items_; }
    const std::vector<NamedParameter>& items() const { return items_; }

private:
    std::vector<NamedParameter> items_;
};

/// Total number of scalar parameters.
std::size_t param_count(const ParameterSet& params);

/// Every learnable tensor of the network: modality projections, GNN-A / GNN-V
/// stacks, cross-modal attention, attention pooling and the classifier head.
struct ThgnModel {
    ModelConfig config;
    ParameterSet params;

    /// Glorot-uniform matrices, zero biases; deterministic for a seed.
    static ThgnModel initialize(const ModelConfig& config, std::uint64_t seed);
};

std::size_t param_count(const ThgnModel& model);

/// Closed-form parameter count for a configuration.
std::size_t expected_param_count(const ModelConfig& cfg);

/// Model parameters registered as leaves on one tape.
class BoundModel {
public:
    BoundModel(Tape& tape, const ThgnModel& model, bool trainable);

    Var operator[](const std::string& name) const;
    const std::vector<Var>& vars() const { return vars_; }
    const ThgnModel& model() const { return *model_; }
    Tape& tape() const { return *tape_; }

private:
    Tape* tape_;
    const ThgnModel* model_;
    std::vector<Var> vars_;
};

/// One clip ready for the network: features plus its prebuilt graph.
struct ClipData {
    std::string clip_id;
    FeatureSequence audio;
    FeatureSequence video;
    TemporalHeteroGraph graph;
    std::vector<int> labels;
};

enum class Activation { relu, leaky_relu, identity };

/// activation(adj * x * weight)
Var gnn_layer(Var x, const Tensor& adj, Var weight, Activation activation = Activation::relu);

struct CrossAttentionParams {
    Var query;  // h x h
    Var key;    // h x h
    Var value;  // h x h
    Var attn;   // 2h x 1
};

/// Moves video information into audio nodes along inter-modal edges:
///   e_ij = leaky_relu(attn . [x_a_i W_q ; x_v_j W_k]) + log(adj_ij)
///   out_i = x_a_i + sum_j softmax_j(e_ij) x_v_j W_v
/// Rows with no inter edge pass through unchanged.
Var gat_av(Var audio, Var video, const Tensor& inter_adj, const Tensor& inter_mask, const CrossAttentionParams& p);

/// Attention weights used inside gat_av, for inspection.
Tensor gat_av_attention(Var audio, Var video, const Tensor& inter_adj, const Tensor& inter_mask,
                        const CrossAttentionParams& p);

struct PoolParams {
    Var weight;  // h x h
    Var score;   // h x 1
};

/// softmax(tanh(x W) s)^T x -> (1 x h)
Var attention_pool(Var x, const PoolParams& p);

struct ForwardOutput {
    Var logits;        // B x C
    Var audio_embed;   // B x h, pre-fusion audio graph embedding
    Var video_embed;   // B x h, pre-fusion video graph embedding
};

/// Runs every clip independently, then stacks per-clip outputs in batch order.
ForwardOutput model_forward(const BoundModel& model, std::span<const ClipData* const> batch);

void save_checkpoint(const ThgnModel& model, const std::filesystem::path& path);
ThgnModel load_checkpoint(const std::filesystem::path& path);
/// Rejects checkpoints whose configuration differs from `expected`.
ThgnModel load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace thgcl
