#pragma once

// End-to-end finite-difference check of the full network and training loss
// on a tiny two-clip batch.

#include <cstdint>
#include <string>
#include <vector>

#include "thgcl/graph.hpp"
#include "thgcl/losses.hpp"
#include "thgcl/model.hpp"

namespace thgcl {

struct GradcheckSetup {
    std::size_t audio_segments = 4;
    std::size_t video_segments = 6;
    std::uint32_t audio_dim = 6;
    std::uint32_t video_dim = 10;
    std::uint32_t d = 5;
    std::uint32_t hidden = 8;
    std::uint32_t layers = 2;
    std::uint32_t num_classes = 3;
    TemporalMode temporal_mode = TemporalMode::gau_haw;
    LossConfig loss;
    std::uint64_t seed = 7;
    double step = 1e-5;
};

struct ParameterCheck {
    std::string name;
    std::size_t entries = 0;
    double max_error = 0.0;
};

struct GradcheckReport {
    std::vector<ParameterCheck> parameters;
    double max_error = 0.0;
};

/// Two random clips with the requested segment counts over a shared duration.
std::vector<ClipData> gradcheck_clips(const GradcheckSetup& setup);

/// Training loss (focal + contrastive) of `model` on `clips`, forward only.
double batch_loss(const ThgnModel& model, const std::vector<ClipData>& clips, const LossConfig& loss);

/// Compares every parameter entry's analytic gradient with a central difference.
GradcheckReport end_to_end_gradcheck(const GradcheckSetup& setup);

}  // namespace thgcl
