#include "thgcl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <cstdio>
#include <random>

#include "thgcl/graph.hpp"

namespace thgcl {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

class Noise {
public:
    explicit Noise(std::uint64_t seed) : rng_(seed) {}

    double uniform() { return uniform01(rng_); }

    // Box-Muller keeps the stream identical across standard libraries.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform01(rng_);
        const double u2 = uniform01(rng_);
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(kTwoPi * u2);
        has_spare_ = true;
        return r * std::cos(kTwoPi * u2);
    }

    std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

private:
    std::mt19937_64 rng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

bool overlaps(const Interval& a, const Interval& b) {
    return std::min(a.end_ms, b.end_ms) > std::max(a.start_ms, b.start_ms);
}

FeatureSequence make_sequence(Modality modality, std::uint32_t dim, std::vector<Interval> intervals, double sigma,
                              const std::vector<std::vector<float>>& prototypes,
                              const std::vector<std::pair<int, Interval>>& windows, Noise& noise) {
    FeatureSequence seq;
    seq.modality = modality;
    seq.dim = dim;
    seq.encoder_shaped = dim == (modality == Modality::audio ? kEncoderAudioDim : kEncoderVideoDim);
    seq.intervals = std::move(intervals);
    seq.values.assign(seq.intervals.size() * dim, 0.0f);
    for (std::size_t s = 0; s < seq.intervals.size(); ++s) {
        float* row = seq.values.data() + s * dim;
        for (const auto& [label, window] : windows) {
            if (!overlaps(seq.intervals[s], window)) continue;
            const auto& proto = prototypes[static_cast<std::size_t>(label)];
            for (std::uint32_t k = 0; k < dim; ++k) row[k] += proto[k];
        }
        if (sigma > 0.0) {
            for (std::uint32_t k = 0; k < dim; ++k) row[k] += static_cast<float>(sigma * noise.normal());
        }
    }
    return seq;
}

SynthClip make_clip(const SynthSpec& spec, const std::string& clip_id, std::uint64_t clip_seed,
                    const std::vector<std::vector<float>>& audio_protos,
                    const std::vector<std::vector<float>>& video_protos) {
    Noise noise(clip_seed);
    SynthClip clip;
    clip.record.clip_id = clip_id;

    const int span = spec.labels_max - spec.labels_min + 1;
    const int count = spec.labels_min + static_cast<int>(noise.below(static_cast<std::uint64_t>(span)));
    std::vector<int> classes(static_cast<std::size_t>(spec.num_classes));
    std::iota(classes.begin(), classes.end(), 0);
    // Partial Fisher-Yates: the first `count` entries are a uniform sample without replacement.
    for (int i = 0; i < count; ++i) {
        const auto j = static_cast<std::size_t>(i) +
                       static_cast<std::size_t>(noise.below(static_cast<std::uint64_t>(spec.num_classes - i)));
        std::swap(classes[static_cast<std::size_t>(i)], classes[j]);
    }
    classes.resize(static_cast<std::size_t>(count));
    std::sort(classes.begin(), classes.end());

    const std::uint32_t slack =
        spec.clip_ms >= spec.event_len_ms + spec.lag_ms ? spec.clip_ms - spec.event_len_ms - spec.lag_ms : 0;
    std::vector<std::pair<int, Interval>> audio_windows, video_windows;
    for (int label : classes) {
        const auto start = static_cast<std::uint32_t>(noise.below(std::uint64_t{slack} + 1));
        SynthEvent ev;
        ev.clip_id = clip_id;
        ev.label = label;
        ev.audio = {start, start + spec.event_len_ms};
        ev.video = {start + spec.lag_ms, std::min(spec.clip_ms, start + spec.lag_ms + spec.event_len_ms)};
        audio_windows.emplace_back(label, ev.audio);
        video_windows.emplace_back(label, ev.video);
        clip.events.push_back(ev);
    }
    clip.record.labels = classes;
    clip.audio = make_sequence(Modality::audio, spec.audio_dim, uniform_intervals(spec.clip_ms, spec.audio_seg_ms),
                               spec.noise_sigma_audio, audio_protos, audio_windows, noise);
    clip.video = make_sequence(Modality::video, spec.video_dim, uniform_intervals(spec.clip_ms, spec.video_seg_ms),
                               spec.noise_sigma_video, video_protos, video_windows, noise);
    return clip;
}

}  // namespace

void SynthSpec::validate() const {
    if (num_classes < 2) throw ConfigError("synth: num_classes must be >= 2");
    if (clips_train < 0 || clips_eval < 0) throw ConfigError("synth: clip counts must be >= 0");
    if (audio_dim == 0 || video_dim == 0) throw ConfigError("synth: dims must be > 0");
    if (clip_ms < event_len_ms) throw ConfigError("synth: clip_ms must be >= event_len_ms");
    if (audio_seg_ms == 0 || video_seg_ms == 0) throw ConfigError("synth: segment lengths must be > 0");
    if (clip_ms < audio_seg_ms || clip_ms < video_seg_ms) throw ConfigError("synth: clip shorter than one segment");
    if (labels_min < 1 || labels_max < labels_min || labels_max > num_classes) {
        throw ConfigError("synth: labels_per_clip range must satisfy 1 <= min <= max <= num_classes");
    }
    if (!(noise_sigma_audio >= 0.0) || !(noise_sigma_video >= 0.0)) throw ConfigError("synth: noise must be >= 0");
}

std::vector<std::vector<float>> class_prototypes(const SynthSpec& spec, Modality modality) {
    const std::uint32_t dim = modality == Modality::audio ? spec.audio_dim : spec.video_dim;
    Noise noise(mix(spec.seed ^ (modality == Modality::audio ? 0xa0d10ull : 0x71de0ull)));
    std::vector<std::vector<float>> protos;
    for (int c = 0; c < spec.num_classes; ++c) {
        std::vector<double> v(dim);
        double norm = 0.0;
        for (double& x : v) {
            x = noise.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        std::vector<float> p(dim);
        for (std::uint32_t k = 0; k < dim; ++k) p[k] = static_cast<float>(v[k] / norm);
        protos.push_back(std::move(p));
    }
    return protos;
}

SynthDataset synthesize(const SynthSpec& spec) {
    spec.validate();
    const auto audio_protos = class_prototypes(spec, Modality::audio);
    const auto video_protos = class_prototypes(spec, Modality::video);
    SynthDataset ds;
    const auto build = [&](const char* prefix, int n, std::uint64_t stream, std::vector<SynthClip>& out) {
        for (int i = 0; i < n; ++i) {
            char id[32];
            std::snprintf(id, sizeof id, "%s%05d", prefix, i);
            const std::uint64_t clip_seed = mix(mix(spec.seed ^ stream) + static_cast<std::uint64_t>(i));
            out.push_back(make_clip(spec, id, clip_seed, audio_protos, video_protos));
        }
    };
    build("train", spec.clips_train, 0x7ea1ull, ds.train);
    build("eval", spec.clips_eval, 0xe7a1ull, ds.eval);
    return ds;
}

SynthOutput generate(const SynthSpec& spec, const std::filesystem::path& dir) {
    const SynthDataset ds = synthesize(spec);
    std::filesystem::create_directories(dir / "features");
    SynthOutput out;
    out.train_manifest = dir / "train.tsv";
    out.eval_manifest = dir / "eval.tsv";
    out.events = dir / "events.tsv";

    std::ofstream events(out.events, std::ios::trunc);
    if (!events) throw Error("cannot write " + out.events.string());
    events << "clip_id\tlabel\taudio_start_ms\taudio_end_ms\tvideo_start_ms\tvideo_end_ms\n";

    const auto emit = [&](const std::vector<SynthClip>& clips, const std::filesystem::path& manifest) {
        std::vector<ClipRecord> records;
        for (const auto& c : clips) {
            ClipRecord rec = c.record;
            rec.audio_path = std::filesystem::path("features") / (c.record.clip_id + ".audio.thgf");
            rec.video_path = std::filesystem::path("features") / (c.record.clip_id + ".video.thgf");
            write_feature_file(c.audio, dir / rec.audio_path);
            write_feature_file(c.video, dir / rec.video_path);
            for (const auto& ev : c.events) {
                events << ev.clip_id << '\t' << ev.label << '\t' << ev.audio.start_ms << '\t' << ev.audio.end_ms << '\t'
                       << ev.video.start_ms << '\t' << ev.video.end_ms << '\n';
            }
            records.push_back(std::move(rec));
        }
        write_manifest(records, manifest);
        out.clips += records.size();
    };
    emit(ds.train, out.train_manifest);
    emit(ds.eval, out.eval_manifest);
    return out;
}

DatasetSummary describe(const std::vector<ClipRecord>& records, int num_classes) {
    DatasetSummary s;
    s.class_counts.assign(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
    for (const auto& r : records) {
        ++s.clips;
        for (int l : r.labels) {
            if (static_cast<std::size_t>(l) >= s.class_counts.size()) s.class_counts.resize(static_cast<std::size_t>(l) + 1, 0);
            ++s.class_counts[static_cast<std::size_t>(l)];
        }
        const auto audio = read_feature_file(r.audio_path);
        const auto video = read_feature_file(r.video_path);
        ++s.audio_segments[audio.segments()];
        ++s.video_segments[video.segments()];
        ++s.duration_s[audio.intervals.back().end_ms / 1000];
    }
    return s;
}

void write_summary(const DatasetSummary& s, std::ostream& out) {
    out << "clips=" << s.clips << '\n';
    std::size_t labels = 0;
    for (std::size_t c = 0; c < s.class_counts.size(); ++c) {
        out << "class." << c << '=' << s.class_counts[c] << '\n';
        labels += s.class_counts[c];
    }
    out << "labels=" << labels << '\n';
    for (const auto& [n, clips] : s.audio_segments) out << "audio_segments." << n << '=' << clips << '\n';
    for (const auto& [n, clips] : s.video_segments) out << "video_segments." << n << '=' << clips << '\n';
    for (const auto& [sec, clips] : s.duration_s) out << "duration_s." << sec << '=' << clips << '\n';
}

}  // namespace thgcl
