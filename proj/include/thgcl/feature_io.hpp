#pragma once

// THGF feature files, clip manifests, and the linear projection that maps
// per-modality segment features to the shared embedding width.
//
// THGF layout (little-endian):
//   "THGF" | u16 version=1 | u8 modality (0 audio, 1 video) | u8 flags (bit0 encoder-shaped)
//   | u32 num_segments | u32 dim | num_segments x (u32 start_ms, u32 end_ms)
//   | num_segments*dim float32, row-major

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "thgcl/autodiff.hpp"
#include "thgcl/tensor.hpp"

namespace thgcl {

enum class Modality : std::uint8_t { audio = 0, video = 1 };

inline constexpr std::uint32_t kEncoderAudioDim = 128;
inline constexpr std::uint32_t kEncoderVideoDim = 1024;
inline constexpr std::uint32_t kDefaultAudioSegmentMs = 960;
inline constexpr std::uint32_t kDefaultVideoSegmentMs = 250;

struct Interval {
    std::uint32_t start_ms = 0;
    std::uint32_t end_ms = 0;

    std::uint32_t length() const { return end_ms - start_ms; }
    double center() const { return 0.5 * (static_cast<double>(start_ms) + static_cast<double>(end_ms)); }
    friend bool operator==(const Interval&, const Interval&) = default;
};

/// Segment embeddings of one modality for one clip.
struct FeatureSequence {
    Modality modality = Modality::audio;
    bool encoder_shaped = false;
    std::uint32_t dim = 0;
    std::vector<Interval> intervals;
    std::vector<float> values;  // segments x dim, row-major

    std::size_t segments() const { return intervals.size(); }
    float value(std::size_t segment, std::size_t k) const { return values[segment * dim + k]; }
    Tensor to_tensor() const;

    friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

class FeatureFileError : public Error {
public:
    enum class Kind {
        io,
        bad_magic,
        bad_version,
        bad_modality,
        truncated,
        trailing_bytes,
        empty_sequence,
        bad_interval,
        unsorted_intervals,
        bad_dim,
        bad_value,
    };

    FeatureFileError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

/// Throws FeatureFileError when the sequence breaks an invariant (empty, bad intervals, dims).
void validate(const FeatureSequence& seq);

FeatureSequence read_feature_file(const std::filesystem::path& path);
void write_feature_file(const FeatureSequence& seq, const std::filesystem::path& path);

std::vector<std::uint8_t> encode_feature_sequence(const FeatureSequence& seq);
FeatureSequence decode_feature_sequence(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

/// Consecutive non-overlapping segments [k*len, (k+1)*len) covering floor(clip_ms/len) segments.
std::vector<Interval> uniform_intervals(std::uint32_t clip_ms, std::uint32_t segment_ms);

struct ClipRecord {
    std::string clip_id;
    std::filesystem::path audio_path;
    std::filesystem::path video_path;
    std::vector<int> labels;  // sorted, unique

    friend bool operator==(const ClipRecord&, const ClipRecord&) = default;
};

class ManifestError : public Error {
public:
    ManifestError(std::size_t line, const std::string& what) : Error(what), line_(line) {}
    /// 1-based line number, 0 when not tied to a line.
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Tab-separated: clip_id, audio_path, video_path, comma-separated labels.
/// Relative feature paths are resolved against the manifest's directory.
std::vector<ClipRecord> load_manifest(const std::filesystem::path& path, int num_classes);
std::vector<ClipRecord> parse_manifest(const std::string& text, int num_classes,
                                       const std::filesystem::path& base_dir = {});
void write_manifest(const std::vector<ClipRecord>& records, const std::filesystem::path& path);

/// Highest label index + 1 over all records (0 when unlabelled).
int infer_num_classes(const std::vector<ClipRecord>& records);

/// rows = values * weight + bias. weight is (dim x d), bias is (d).
Var project(const FeatureSequence& seq, Var weight, Var bias);

}  // namespace thgcl
