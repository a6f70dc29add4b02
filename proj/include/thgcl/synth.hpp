#pragma once

// Deterministic multi-label audio-visual clip generator.
//
// Each class owns a fixed unit-norm prototype per modality. A labelled event
// occupies a window of the clip; audio segments overlapping the window carry
// the audio prototype, video segments overlapping the window shifted by
// lag_ms carry the video prototype. Gaussian noise is added everywhere.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "thgcl/feature_io.hpp"

namespace thgcl {

struct SynthSpec {
    int num_classes = 8;
    int clips_train = 512;
    int clips_eval = 128;
    std::uint32_t clip_ms = 10000;
    std::uint32_t audio_seg_ms = kDefaultAudioSegmentMs;
    std::uint32_t video_seg_ms = kDefaultVideoSegmentMs;
    std::uint32_t audio_dim = kEncoderAudioDim;
    std::uint32_t video_dim = kEncoderVideoDim;
    int labels_min = 1;
    int labels_max = 3;
    double noise_sigma_audio = 0.1;
    double noise_sigma_video = 0.1;
    std::uint32_t lag_ms = 0;
    std::uint32_t event_len_ms = 2000;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthEvent {
    std::string clip_id;
    int label = 0;
    Interval audio;
    Interval video;
};

struct SynthClip {
    ClipRecord record;
    FeatureSequence audio;
    FeatureSequence video;
    std::vector<SynthEvent> events;
};

struct SynthDataset {
    std::vector<SynthClip> train;
    std::vector<SynthClip> eval;
};

/// Generates every clip in memory.
SynthDataset synthesize(const SynthSpec& spec);

struct SynthOutput {
    std::filesystem::path train_manifest;
    std::filesystem::path eval_manifest;
    std::filesystem::path events;
    std::size_t clips = 0;
};

/// Writes train.tsv, eval.tsv, events.tsv and features/*.thgf under `dir`.
SynthOutput generate(const SynthSpec& spec, const std::filesystem::path& dir);

/// Unit-norm class prototypes (num_classes x dim) for a modality.
std::vector<std::vector<float>> class_prototypes(const SynthSpec& spec, Modality modality);

struct DatasetSummary {
    std::size_t clips = 0;
    std::vector<std::size_t> class_counts;
    std::map<std::size_t, std::size_t> audio_segments;  // segments per clip -> clips
    std::map<std::size_t, std::size_t> video_segments;
    std::map<std::uint32_t, std::size_t> duration_s;    // whole seconds of audio coverage -> clips
};

/// Reads each clip's feature files to collect segment and duration statistics.
DatasetSummary describe(const std::vector<ClipRecord>& records, int num_classes);
void write_summary(const DatasetSummary& summary, std::ostream& out);

}  // namespace thgcl
