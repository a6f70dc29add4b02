#include "thgcl/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

namespace thgcl {

namespace {

std::string layer_name(const char* stack, std::uint32_t l) {
    return std::string(stack) + "." + std::to_string(l) + ".weight";
}

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Shape shape, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = (2.0 * uniform01(rng) - 1.0) * bound;
    return t;
}

Tensor glorot_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    return glorot(rows, cols, {rows, cols}, rng);
}

}  // namespace

void ModelConfig::validate() const {
    if (audio_dim == 0 || video_dim == 0 || d == 0 || hidden == 0 || layers == 0 || num_classes == 0) {
        throw ConfigError("model dimensions must all be positive: " + describe(*this));
    }
}

std::string describe(const ModelConfig& cfg) {
    std::ostringstream os;
    os << "audio_dim=" << cfg.audio_dim << " video_dim=" << cfg.video_dim << " d=" << cfg.d
       << " hidden=" << cfg.hidden << " layers=" << cfg.layers << " num_classes=" << cfg.num_classes;
    return os.str();
}

void ParameterSet::add(std::string name, Tensor value) {
    if (contains(name)) throw Error("duplicate parameter '" + name + "'");
    items_.push_back({std::move(name), std::move(value)});
}

bool ParameterSet::contains(const std::string& name) const {
    return std::any_of(items_.begin(), items_.end(), [&](const auto& p) { return p.name == name; });
}

Tensor& ParameterSet::operator[](const std::string& name) {
    for (auto& p : items_) {
        if (p.name == name) return p.value;
    }
    throw Error("unknown parameter '" + name + "'");
}

const Tensor& ParameterSet::operator[](const std::string& name) const {
    return const_cast<ParameterSet&>(*this)[name];
}

std::size_t param_count(const ParameterSet& params) {
    std::size_t n = 0;
    for (const auto& p : params.items()) n += p.value.numel();
    return n;
}

std::size_t param_count(const ThgnModel& model) { return param_count(model.params); }

std::size_t expected_param_count(const ModelConfig& c) {
    const std::size_t d = c.d, h = c.hidden, L = c.layers;
    const std::size_t projections = (c.audio_dim + 1) * d + (c.video_dim + 1) * d;
    const std::size_t gnn = 2 * (d * h + (L - 1) * h * h);
    const std::size_t attention = 3 * h * h + 2 * h;
    const std::size_t pools = 2 * (h * h + h);
    const std::size_t head = h * c.num_classes + c.num_classes;
    return projections + gnn + attention + pools + head;
}

ThgnModel ThgnModel::initialize(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    ThgnModel m;
    m.config = config;
    const std::size_t d = config.d, h = config.hidden;
    auto& p = m.params;
    p.add("proj.audio.weight", glorot_matrix(config.audio_dim, d, rng));
    p.add("proj.audio.bias", Tensor({d}));
    p.add("proj.video.weight", glorot_matrix(config.video_dim, d, rng));
    p.add("proj.video.bias", Tensor({d}));
    for (const char* stack : {"gnn_a", "gnn_v"}) {
        for (std::uint32_t l = 0; l < config.layers; ++l) {
            p.add(layer_name(stack, l), glorot_matrix(l == 0 ? d : h, h, rng));
        }
    }
    p.add("gat_av.query", glorot_matrix(h, h, rng));
    p.add("gat_av.key", glorot_matrix(h, h, rng));
    p.add("gat_av.value", glorot_matrix(h, h, rng));
    p.add("gat_av.attn", glorot(2 * h, 1, {2 * h, 1}, rng));
    for (const char* pool : {"pool_audio", "pool_video"}) {
        p.add(std::string(pool) + ".weight", glorot_matrix(h, h, rng));
        p.add(std::string(pool) + ".score", glorot(h, 1, {h, 1}, rng));
    }
    p.add("classifier.weight", glorot_matrix(h, config.num_classes, rng));
    p.add("classifier.bias", Tensor({config.num_classes}));
    return m;
}

BoundModel::BoundModel(Tape& tape, const ThgnModel& model, bool trainable) : tape_(&tape), model_(&model) {
    vars_.reserve(model.params.size());
    for (const auto& p : model.params.items()) vars_.push_back(tape.leaf(p.value, trainable));
}

Var BoundModel::operator[](const std::string& name) const {
    const auto& items = model_->params.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].name == name) return vars_[i];
    }
    throw Error("unknown parameter '" + name + "'");
}

Var gnn_layer(Var x, const Tensor& adj, Var weight, Activation activation) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    if (adj.ndim() != 2 || adj.rows() != adj.cols() || adj.cols() != xv.rows()) {
        throw ShapeError("gnn_layer: adjacency " + shape_to_string(adj.shape()) + " does not match node features " +
                         shape_to_string(xv.shape()));
    }
    if (wv.ndim() != 2 || wv.rows() != xv.cols()) {
        throw ShapeError("gnn_layer: weight " + shape_to_string(wv.shape()) + " does not match node features " +
                         shape_to_string(xv.shape()));
    }
    Tape& tape = *x.tape();
    Var a = tape.constant(adj);
    // Aggregate on the narrower side.
    Var z = wv.rows() <= wv.cols() ? ops::matmul(ops::matmul(a, x), weight) : ops::matmul(a, ops::matmul(x, weight));
    switch (activation) {
        case Activation::relu: return ops::relu(z);
        case Activation::leaky_relu: return ops::leaky_relu(z);
        case Activation::identity: return z;
    }
    return z;
}

namespace {

struct AttentionScores {
    Var alpha;
    Var values;
};

AttentionScores cross_attention(Var audio, Var video, const Tensor& inter_adj, const Tensor& inter_mask,
                                const CrossAttentionParams& p) {
    const std::size_t pa = audio.value().rows();
    const std::size_t pv = video.value().rows();
    const std::size_t h = audio.value().cols();
    const Shape adj_shape{pa, pv};
    if (inter_adj.shape() != adj_shape || inter_mask.shape() != adj_shape) {
        throw ShapeError("gat_av: inter adjacency " + shape_to_string(inter_adj.shape()) + " expected " +
                         shape_to_string(adj_shape));
    }
    if (p.attn.value().shape() != Shape{2 * h, 1}) {
        throw ShapeError("gat_av: attention vector " + shape_to_string(p.attn.value().shape()) + " for width " +
                         std::to_string(h));
    }
    Tape& tape = *audio.tape();
    Var q = ops::matmul(audio, p.query);
    Var k = ops::matmul(video, p.key);
    Var v = ops::matmul(video, p.value);
    Var sq = ops::matmul(q, ops::slice_rows(p.attn, 0, h));
    Var sk = ops::matmul(k, ops::slice_rows(p.attn, h, 2 * h));
    Var logits = ops::add(ops::matmul(sq, tape.constant(Tensor::filled({1, pv}, 1.0))),
                          ops::matmul(tape.constant(Tensor::filled({pa, 1}, 1.0)), ops::transpose(sk)));
    Tensor bias(adj_shape);
    for (std::size_t i = 0; i < bias.numel(); ++i) {
        if (inter_mask[i] != 0.0) bias[i] = std::log(std::max(inter_adj[i], 1e-300));
    }
    Var e = ops::add(ops::leaky_relu(logits), tape.constant(std::move(bias)));
    return {ops::masked_softmax_rows(e, inter_mask), v};
}

}  // namespace

Var gat_av(Var audio, Var video, const Tensor& inter_adj, const Tensor& inter_mask, const CrossAttentionParams& p) {
    auto s = cross_attention(audio, video, inter_adj, inter_mask, p);
    return ops::add(audio, ops::matmul(s.alpha, s.values));
}

Tensor gat_av_attention(Var audio, Var video, const Tensor& inter_adj, const Tensor& inter_mask,
                        const CrossAttentionParams& p) {
    return cross_attention(audio, video, inter_adj, inter_mask, p).alpha.value();
}

Var attention_pool(Var x, const PoolParams& p) {
    if (x.value().ndim() != 2 || x.value().rows() == 0) {
        throw ShapeError("attention_pool: need at least one node, got " + shape_to_string(x.value().shape()));
    }
    Var scores = ops::matmul(ops::tanh(ops::matmul(x, p.weight)), p.score);
    Var alpha = ops::softmax_rows(ops::transpose(scores));
    return ops::matmul(alpha, x);
}

ForwardOutput model_forward(const BoundModel& m, std::span<const ClipData* const> batch) {
    if (batch.empty()) throw Error("model_forward: empty batch");
    const ModelConfig& cfg = m.model().config;
    const CrossAttentionParams cross{m["gat_av.query"], m["gat_av.key"], m["gat_av.value"], m["gat_av.attn"]};
    const PoolParams pool_a{m["pool_audio.weight"], m["pool_audio.score"]};
    const PoolParams pool_v{m["pool_video.weight"], m["pool_video.score"]};
    std::vector<Var> gnn_a, gnn_v;
    for (std::uint32_t l = 0; l < cfg.layers; ++l) {
        gnn_a.push_back(m[layer_name("gnn_a", l)]);
        gnn_v.push_back(m[layer_name("gnn_v", l)]);
    }

    std::vector<Var> fused, audio_embed, video_embed;
    for (const ClipData* clip : batch) {
        const auto& g = clip->graph;
        if (g.num_audio != clip->audio.segments() || g.num_video != clip->video.segments()) {
            throw ShapeError("model_forward: graph of clip '" + clip->clip_id + "' does not match its features");
        }
        Var xa = project(clip->audio, m["proj.audio.weight"], m["proj.audio.bias"]);
        Var xv = project(clip->video, m["proj.video.weight"], m["proj.video.bias"]);
        for (std::uint32_t l = 0; l < cfg.layers; ++l) {
            xa = gnn_layer(xa, g.audio_norm, gnn_a[l]);
            xv = gnn_layer(xv, g.video_norm, gnn_v[l]);
        }
        Var fa = gat_av(xa, xv, g.inter_norm, g.inter_mask, cross);
        fused.push_back(attention_pool(fa, pool_a));
        audio_embed.push_back(attention_pool(xa, pool_a));
        video_embed.push_back(attention_pool(xv, pool_v));
    }
    Var pooled = ops::concat_rows(fused);
    ForwardOutput out;
    out.logits = ops::add(ops::matmul(pooled, m["classifier.weight"]), m["classifier.bias"]);
    out.audio_embed = ops::concat_rows(audio_embed);
    out.video_embed = ops::concat_rows(video_embed);
    return out;
}

// Checkpoint layout (little-endian):
//   "THGC" | u32 version | u32 config_len | config text | u32 count
//   | count x (u32 name_len | name | u32 ndim | ndim x u32 | float32 values)

namespace {

constexpr char kCkptMagic[4] = {'T', 'H', 'G', 'C'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

class Reader {
public:
    Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int s = 0; s < 4; ++s) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + s])) << (8 * s);
        pos_ += 4;
        return v;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }
    [[noreturn]] void fail(const std::string& msg) const { throw Error(origin_ + ": " + msg); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) fail("truncated checkpoint");
    }

    const std::string& bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

ModelConfig parse_config_echo(const std::string& text, const Reader& r) {
    ModelConfig cfg;
    std::istringstream in(text);
    std::string tok;
    int seen = 0;
    while (in >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) r.fail("malformed config echo '" + tok + "'");
        const std::string key = tok.substr(0, eq);
        const auto value = static_cast<std::uint32_t>(std::stoul(tok.substr(eq + 1)));
        if (key == "audio_dim") cfg.audio_dim = value;
        else if (key == "video_dim") cfg.video_dim = value;
        else if (key == "d") cfg.d = value;
        else if (key == "hidden") cfg.hidden = value;
        else if (key == "layers") cfg.layers = value;
        else if (key == "num_classes") cfg.num_classes = value;
        else r.fail("unknown config key '" + key + "'");
        ++seen;
    }
    if (seen != 6) r.fail("incomplete config echo");
    return cfg;
}

}  // namespace

void save_checkpoint(const ThgnModel& model, const std::filesystem::path& path) {
    std::string out(kCkptMagic, 4);
    put_u32(out, kCkptVersion);
    const std::string cfg = describe(model.config);
    put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;
    put_u32(out, static_cast<std::uint32_t>(model.params.size()));
    for (const auto& p : model.params.items()) {
        put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out += p.name;
        put_u32(out, static_cast<std::uint32_t>(p.value.ndim()));
        for (auto dim : p.value.shape()) put_u32(out, static_cast<std::uint32_t>(dim));
        for (double v : p.value.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("write failed for " + path.string());
}

ThgnModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r(bytes, path.string());
    if (r.str(4) != std::string(kCkptMagic, 4)) r.fail("bad checkpoint magic");
    if (const auto v = r.u32(); v != kCkptVersion) r.fail("unsupported checkpoint version " + std::to_string(v));
    const std::string cfg_text = r.str(r.u32());
    const ModelConfig cfg = parse_config_echo(cfg_text, r);

    // Shapes and names must agree with a freshly initialised model of the same config.
    ThgnModel model = ThgnModel::initialize(cfg, 0);
    const std::uint32_t count = r.u32();
    if (count != model.params.size()) r.fail("parameter count mismatch");
    for (auto& p : model.params.items()) {
        const std::string name = r.str(r.u32());
        if (name != p.name) r.fail("expected parameter '" + p.name + "', found '" + name + "'");
        Shape shape(r.u32());
        for (auto& dim : shape) dim = r.u32();
        if (shape != p.value.shape()) r.fail("shape mismatch for '" + name + "'");
        for (double& v : p.value.values()) v = static_cast<double>(std::bit_cast<float>(r.u32()));
    }
    if (!r.done()) r.fail("trailing bytes in checkpoint");
    return model;
}

ThgnModel load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
    ThgnModel model = load_checkpoint(path);
    if (!(model.config == expected)) {
        throw ConfigError("checkpoint config mismatch: checkpoint has " + describe(model.config) + ", expected " +
                          describe(expected));
    }
    return model;
}

}  // namespace thgcl
