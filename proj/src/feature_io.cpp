#include "thgcl/feature_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace thgcl {

namespace {

using Kind = FeatureFileError::Kind;

constexpr char kMagic[4] = {'T', 'H', 'G', 'F'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 2 + 1 + 1 + 4 + 4;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}

std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string modality_name(Modality m) { return m == Modality::audio ? "audio" : "video"; }

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    return parts;
}

}  // namespace

Tensor FeatureSequence::to_tensor() const {
    return Tensor({segments(), dim}, std::vector<double>(values.begin(), values.end()));
}

void validate(const FeatureSequence& seq) {
    if (seq.intervals.empty()) throw FeatureFileError(Kind::empty_sequence, "empty sequence");
    if (seq.dim == 0) throw FeatureFileError(Kind::bad_dim, "feature dim must be positive");
    if (seq.encoder_shaped) {
        const std::uint32_t expected = seq.modality == Modality::audio ? kEncoderAudioDim : kEncoderVideoDim;
        if (seq.dim != expected) {
            throw FeatureFileError(Kind::bad_dim, "encoder-shaped " + modality_name(seq.modality) +
                                                      " features must have dim " + std::to_string(expected) +
                                                      ", got " + std::to_string(seq.dim));
        }
    }
    if (seq.values.size() != seq.intervals.size() * seq.dim) {
        throw FeatureFileError(Kind::bad_dim, "value count does not match segments x dim");
    }
    for (std::size_t i = 0; i < seq.intervals.size(); ++i) {
        const Interval& iv = seq.intervals[i];
        if (iv.end_ms <= iv.start_ms) {
            throw FeatureFileError(Kind::bad_interval, "segment " + std::to_string(i) + " has end_ms " +
                                                           std::to_string(iv.end_ms) + " <= start_ms " +
                                                           std::to_string(iv.start_ms));
        }
        if (i > 0 && iv.start_ms < seq.intervals[i - 1].end_ms) {
            throw FeatureFileError(Kind::unsorted_intervals,
                                   "segment " + std::to_string(i) + " starts before the previous segment ends");
        }
    }
    for (float v : seq.values) {
        if (!std::isfinite(v)) throw FeatureFileError(Kind::bad_value, "non-finite feature value");
    }
}

std::vector<std::uint8_t> encode_feature_sequence(const FeatureSequence& seq) {
    validate(seq);
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderBytes + seq.segments() * 8 + seq.values.size() * 4);
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u16(out, kVersion);
    out.push_back(static_cast<std::uint8_t>(seq.modality));
    out.push_back(seq.encoder_shaped ? 1 : 0);
    put_u32(out, static_cast<std::uint32_t>(seq.segments()));
    put_u32(out, seq.dim);
    for (const Interval& iv : seq.intervals) {
        put_u32(out, iv.start_ms);
        put_u32(out, iv.end_ms);
    }
    for (float v : seq.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

FeatureSequence decode_feature_sequence(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    const auto fail = [&](Kind kind, const std::string& msg) -> FeatureFileError {
        return FeatureFileError(kind, origin + ": " + msg);
    };
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw fail(Kind::bad_magic, "bad magic");
    if (bytes.size() < kHeaderBytes) throw fail(Kind::truncated, "truncated header");
    const std::uint8_t* p = bytes.data();
    const std::uint16_t version = get_u16(p + 4);
    if (version != kVersion) throw fail(Kind::bad_version, "unsupported version " + std::to_string(version));

    FeatureSequence seq;
    if (p[6] > 1) throw fail(Kind::bad_modality, "unknown modality " + std::to_string(p[6]));
    seq.modality = static_cast<Modality>(p[6]);
    seq.encoder_shaped = (p[7] & 1) != 0;
    const std::uint32_t n = get_u32(p + 8);
    seq.dim = get_u32(p + 12);
    if (n == 0) throw fail(Kind::empty_sequence, "empty sequence");

    const std::uint64_t expected = kHeaderBytes + std::uint64_t{n} * 8 + std::uint64_t{n} * seq.dim * 4;
    if (bytes.size() < expected) {
        throw fail(Kind::truncated, "truncated payload: expected " + std::to_string(expected) + " bytes, got " +
                                        std::to_string(bytes.size()));
    }
    if (bytes.size() > expected) throw fail(Kind::trailing_bytes, "unexpected trailing bytes");

    const std::uint8_t* cur = p + kHeaderBytes;
    seq.intervals.resize(n);
    for (auto& iv : seq.intervals) {
        iv.start_ms = get_u32(cur);
        iv.end_ms = get_u32(cur + 4);
        cur += 8;
    }
    seq.values.resize(std::size_t{n} * seq.dim);
    for (float& v : seq.values) {
        v = std::bit_cast<float>(get_u32(cur));
        cur += 4;
    }
    try {
        validate(seq);
    } catch (const FeatureFileError& e) {
        throw fail(e.kind(), e.what());
    }
    return seq;
}

FeatureSequence read_feature_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FeatureFileError(Kind::io, "cannot open feature file " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_feature_sequence(bytes, path.string());
}

void write_feature_file(const FeatureSequence& seq, const std::filesystem::path& path) {
    const auto bytes = encode_feature_sequence(seq);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FeatureFileError(Kind::io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FeatureFileError(Kind::io, "write failed for " + path.string());
}

std::vector<Interval> uniform_intervals(std::uint32_t clip_ms, std::uint32_t segment_ms) {
    if (segment_ms == 0) throw ConfigError("segment length must be positive");
    std::vector<Interval> out;
    for (std::uint32_t k = 0; k < clip_ms / segment_ms; ++k) out.push_back({k * segment_ms, (k + 1) * segment_ms});
    return out;
}

std::vector<ClipRecord> parse_manifest(const std::string& text, int num_classes,
                                       const std::filesystem::path& base_dir) {
    std::vector<ClipRecord> records;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto fields = split(line, '\t');
        const auto where = "line " + std::to_string(line_no) + ": ";
        if (fields.size() != 4) {
            throw ManifestError(line_no, where + "expected 4 tab-separated fields, got " +
                                             std::to_string(fields.size()));
        }
        ClipRecord rec;
        rec.clip_id = fields[0];
        if (rec.clip_id.empty()) throw ManifestError(line_no, where + "empty clip_id");
        if (fields[1].empty() || fields[2].empty()) throw ManifestError(line_no, where + "empty feature path");
        rec.audio_path = fields[1];
        rec.video_path = fields[2];
        if (!base_dir.empty()) {
            if (rec.audio_path.is_relative()) rec.audio_path = base_dir / rec.audio_path;
            if (rec.video_path.is_relative()) rec.video_path = base_dir / rec.video_path;
        }
        if (!fields[3].empty()) {
            for (const auto& tok : split(fields[3], ',')) {
                std::size_t used = 0;
                long label = -1;
                try {
                    label = std::stol(tok, &used);
                } catch (const std::exception&) {
                    used = 0;
                }
                if (tok.empty() || used != tok.size() || label < 0) {
                    throw ManifestError(line_no, where + "malformed label '" + tok + "'");
                }
                if (label >= num_classes) {
                    throw ManifestError(line_no, where + "label " + tok + " out of range for " +
                                                     std::to_string(num_classes) + " classes");
                }
                rec.labels.push_back(static_cast<int>(label));
            }
            std::sort(rec.labels.begin(), rec.labels.end());
            rec.labels.erase(std::unique(rec.labels.begin(), rec.labels.end()), rec.labels.end());
        }
        if (!seen.insert(rec.clip_id).second) {
            throw ManifestError(line_no, where + "duplicate clip_id '" + rec.clip_id + "'");
        }
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<ClipRecord> load_manifest(const std::filesystem::path& path, int num_classes) {
    std::ifstream in(path);
    if (!in) throw ManifestError(0, "cannot open manifest " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str(), num_classes, path.parent_path());
}

void write_manifest(const std::vector<ClipRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ManifestError(0, "cannot open " + path.string() + " for writing");
    for (const auto& r : records) {
        out << r.clip_id << '\t' << r.audio_path.generic_string() << '\t' << r.video_path.generic_string() << '\t';
        for (std::size_t i = 0; i < r.labels.size(); ++i) out << (i ? "," : "") << r.labels[i];
        out << '\n';
    }
    if (!out) throw ManifestError(0, "write failed for " + path.string());
}

int infer_num_classes(const std::vector<ClipRecord>& records) {
    int c = 0;
    for (const auto& r : records) {
        for (int l : r.labels) c = std::max(c, l + 1);
    }
    return c;
}

Var project(const FeatureSequence& seq, Var weight, Var bias) {
    const Tensor& w = weight.value();
    if (w.ndim() != 2 || w.rows() != seq.dim) {
        throw ShapeError("project: " + modality_name(seq.modality) + " features have dim " +
                         std::to_string(seq.dim) + " but projection weight is " + shape_to_string(w.shape()));
    }
    Var x = weight.tape()->constant(seq.to_tensor());
    return ops::add(ops::matmul(x, weight), bias);
}

}  // namespace thgcl
