#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "support.hpp"
#include "thgcl/gradcheck.hpp"
#include "thgcl/model.hpp"

using namespace thgcl;
using namespace thgcl::testing;

namespace {

std::size_t count_by_hand(std::size_t a, std::size_t v, std::size_t d, std::size_t h, std::size_t layers,
                          std::size_t c) {
    const std::size_t proj = a * d + d + v * d + d;
    const std::size_t gnn = 2 * (d * h + (layers - 1) * h * h);
    const std::size_t gat = 3 * h * h + 2 * h;
    const std::size_t pool = 2 * (h * h + h);
    return proj + gnn + gat + pool + h * c + c;
}

CrossAttentionParams random_cross(Tape& t, std::size_t h, std::mt19937_64& rng) {
    return {t.constant(random_tensor({h, h}, rng)), t.constant(random_tensor({h, h}, rng)),
            t.constant(random_tensor({h, h}, rng)), t.constant(random_tensor({2 * h, 1}, rng))};
}

ModelConfig small_config() {
    ModelConfig c;
    c.audio_dim = 6;
    c.video_dim = 10;
    c.d = 5;
    c.hidden = 8;
    c.layers = 2;
    c.num_classes = 3;
    return c;
}

}  // namespace

TEST_CASE("gnn layer examples") {
    Tape t;
    const Var x = t.constant(Tensor::matrix(1, 2, {-1, 2}));
    CHECK(gnn_layer(x, Tensor::identity(1), t.constant(Tensor::identity(2))).value() == Tensor::matrix(1, 2, {0, 2}));
    CHECK(gnn_layer(t.constant(Tensor({3, 2})), Tensor::identity(3), t.constant(Tensor::identity(2))).value() ==
          Tensor({3, 2}));
    const Tensor half = Tensor::matrix(2, 2, {0.5, 0.5, 0.5, 0.5});
    CHECK(gnn_layer(t.constant(Tensor::matrix(2, 2, {2, 0, 0, 2})), half, t.constant(Tensor::identity(2))).value() ==
          Tensor::matrix(2, 2, {1, 1, 1, 1}));
}

TEST_CASE("gnn layer against explicit products") {
    std::mt19937_64 rng(1);
    for (auto [k, kp] : {std::pair<std::size_t, std::size_t>{3, 7}, {7, 3}}) {
        const Tensor a = random_tensor({5, 5}, rng, 0, 1);
        const Tensor x = random_tensor({5, k}, rng);
        const Tensor w = random_tensor({k, kp}, rng);
        Tape t;
        const Tensor y = gnn_layer(t.constant(x), a, t.constant(w), Activation::identity).value();
        CHECK(max_abs_diff(y, naive_matmul(naive_matmul(a, x), w)) < 1e-12);
    }
    Tape t;
    CHECK_THROWS_AS(gnn_layer(t.constant(Tensor({4, 3})), Tensor::identity(5), t.constant(Tensor({3, 3}))), ShapeError);
    CHECK_THROWS_AS(gnn_layer(t.constant(Tensor({4, 3})), Tensor::identity(4), t.constant(Tensor({2, 3}))), ShapeError);
}

TEST_CASE("cross attention with one neighbor adds the projected value") {
    std::mt19937_64 rng(2);
    const std::size_t h = 4;
    Tape t;
    const auto p = random_cross(t, h, rng);
    const Tensor xa = random_tensor({1, h}, rng);
    const Tensor xv = random_tensor({1, h}, rng);
    const Tensor adj = Tensor::matrix(1, 1, {0.3});
    const Tensor mask = Tensor::matrix(1, 1, {1});
    const Tensor out = gat_av(t.constant(xa), t.constant(xv), adj, mask, p).value();
    const Tensor proj = naive_matmul(xv, p.value.value());
    for (std::size_t c = 0; c < h; ++c) CHECK(std::abs(out[c] - (xa[c] + proj[c])) < 1e-12);
}

TEST_CASE("cross attention passes through without inter edges") {
    std::mt19937_64 rng(3);
    Tape t;
    const auto p = random_cross(t, 4, rng);
    const Tensor xa = random_tensor({3, 4}, rng);
    const Tensor none({3, 5});
    CHECK(gat_av(t.constant(xa), t.constant(random_tensor({5, 4}, rng)), none, none, p).value() == xa);
}

TEST_CASE("cross attention splits evenly between identical neighbors") {
    std::mt19937_64 rng(4);
    const std::size_t h = 3;
    Tape t;
    const auto p = random_cross(t, h, rng);
    const Tensor xa = random_tensor({1, h}, rng);
    const Tensor row = random_tensor({1, h}, rng);
    Tensor xv({2, h});
    for (std::size_t c = 0; c < h; ++c) xv.at(0, c) = xv.at(1, c) = row[c];
    const Tensor adj = Tensor::matrix(1, 2, {0.5, 0.5});
    const Tensor mask = Tensor::matrix(1, 2, {1, 1});
    const Tensor alpha = gat_av_attention(t.constant(xa), t.constant(xv), adj, mask, p);
    CHECK(alpha.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(alpha.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
    const Tensor out = gat_av(t.constant(xa), t.constant(xv), adj, mask, p).value();
    const Tensor proj = naive_matmul(row, p.value.value());
    for (std::size_t c = 0; c < h; ++c) CHECK(std::abs(out[c] - (xa[c] + proj[c])) < 1e-12);
}

TEST_CASE("cross attention against a scripted evaluation") {
    std::mt19937_64 rng(5);
    const std::size_t h = 3, pa = 3, pv = 4;
    Tape t;
    const auto p = random_cross(t, h, rng);
    const Tensor xa = random_tensor({pa, h}, rng);
    const Tensor xv = random_tensor({pv, h}, rng);
    const Tensor mask = Tensor::matrix(pa, pv, {1, 1, 0, 0, 0, 1, 1, 1, 0, 0, 0, 0});
    Tensor adj = random_tensor({pa, pv}, rng, 0.1, 1.0);
    for (std::size_t i = 0; i < adj.numel(); ++i) adj[i] *= mask[i];
    adj = Tensor(adj.shape(), std::vector<double>(adj.values().begin(), adj.values().end()));
    const Tensor out = gat_av(t.constant(xa), t.constant(xv), adj, mask, p).value();

    const Tensor q = naive_matmul(xa, p.query.value());
    const Tensor k = naive_matmul(xv, p.key.value());
    const Tensor v = naive_matmul(xv, p.value.value());
    const Tensor& a = p.attn.value();
    for (std::size_t i = 0; i < pa; ++i) {
        std::vector<double> e(pv, 0.0);
        double z = 0.0;
        for (std::size_t j = 0; j < pv; ++j) {
            if (mask.at(i, j) == 0.0) continue;
            double s = 0.0;
            for (std::size_t c = 0; c < h; ++c) s += a[c] * q.at(i, c) + a[h + c] * k.at(j, c);
            s = s > 0 ? s : 0.01 * s;
            e[j] = std::exp(s) * adj.at(i, j);  // exp(s + log w)
            z += e[j];
        }
        double alpha_sum = 0.0;
        for (std::size_t c = 0; c < h; ++c) {
            double want = xa.at(i, c);
            for (std::size_t j = 0; j < pv; ++j) {
                if (z > 0) want += e[j] / z * v.at(j, c);
            }
            CHECK(std::abs(out.at(i, c) - want) < 1e-12);
        }
        const Tensor alpha = gat_av_attention(t.constant(xa), t.constant(xv), adj, mask, p);
        for (std::size_t j = 0; j < pv; ++j) alpha_sum += alpha.at(i, j);
        CHECK(std::abs(alpha_sum - (z > 0 ? 1.0 : 0.0)) < 1e-9);
    }
}

TEST_CASE("attention pool examples") {
    std::mt19937_64 rng(6);
    const std::size_t h = 4;
    Tape t;
    const PoolParams p{t.constant(random_tensor({h, h}, rng)), t.constant(random_tensor({h, 1}, rng))};
    const Tensor one = random_tensor({1, h}, rng);
    CHECK(max_abs_diff(attention_pool(t.constant(one), p).value(), one) < 1e-15);

    Tensor same({5, h});
    for (std::size_t r = 0; r < 5; ++r) {
        for (std::size_t c = 0; c < h; ++c) same.at(r, c) = one[c];
    }
    CHECK(max_abs_diff(attention_pool(t.constant(same), p).value(), one) < 1e-12);

    // Row 0 is all positive, row 1 all negative; a large score vector through tanh saturates toward row 0.
    const Tensor two = Tensor::matrix(2, 2, {1.0, 2.0, -1.0, -2.0});
    const PoolParams favor{t.constant(Tensor::identity(2)), t.constant(Tensor::matrix(2, 1, {20, 20}))};
    const Tensor y = attention_pool(t.constant(two), favor).value();
    CHECK(std::abs(y[0] - 1.0) < 1e-3);
    CHECK(std::abs(y[1] - 2.0) < 1e-3);

    CHECK_THROWS_AS(attention_pool(t.constant(Tensor({0, h})), p), ShapeError);
}

TEST_CASE("attention pool stays in the convex hull") {
    std::mt19937_64 rng(7);
    for (int k = 0; k < 50; ++k) {
        const std::size_t n = 1 + rng() % 8, h = 1 + rng() % 6;
        Tape t;
        const PoolParams p{t.constant(random_tensor({h, h}, rng, -3, 3)), t.constant(random_tensor({h, 1}, rng, -3, 3))};
        const Tensor x = random_tensor({n, h}, rng);
        const Tensor y = attention_pool(t.constant(x), p).value();
        for (std::size_t c = 0; c < h; ++c) {
            double lo = 1e9, hi = -1e9;
            for (std::size_t r = 0; r < n; ++r) {
                lo = std::min(lo, x.at(r, c));
                hi = std::max(hi, x.at(r, c));
            }
            CHECK(y[c] >= lo - 1e-12);
            CHECK(y[c] <= hi + 1e-12);
        }
    }
}

TEST_CASE("parameter counts") {
    ParameterSet head;
    head.add("classifier.weight", Tensor({2, 3}));
    head.add("classifier.bias", Tensor({3}));
    CHECK(param_count(head) == 9);

    const ModelConfig full;
    CHECK(expected_param_count(full) == count_by_hand(128, 1024, 128, 512, 4, 33));
    CHECK(expected_param_count(full) == 3181345);
    CHECK(expected_param_count(full) >= 2400000);
    CHECK(expected_param_count(full) <= 9600000);

    for (const ModelConfig& c : {small_config(), ModelConfig{}}) {
        CHECK(param_count(ThgnModel::initialize(c, 1)) == expected_param_count(c));
    }

    // GNN stacks are dominated by h x h layers, so doubling h roughly quadruples them.
    ModelConfig wide = full;
    wide.hidden = 1024;
    const auto gnn = [](const ModelConfig& c) { return 2.0 * (c.d * c.hidden + (c.layers - 1.0) * c.hidden * c.hidden); };
    CHECK(gnn(wide) / gnn(full) == doctest::Approx(4.0).epsilon(0.1));
    const ThgnModel w = ThgnModel::initialize(wide, 0), n = ThgnModel::initialize(full, 0);
    double gw = 0, gn = 0;
    for (const auto& p : w.params.items()) {
        if (p.name.rfind("gnn_", 0) == 0) gw += static_cast<double>(p.value.numel());
    }
    for (const auto& p : n.params.items()) {
        if (p.name.rfind("gnn_", 0) == 0) gn += static_cast<double>(p.value.numel());
    }
    CHECK(gw / gn == doctest::Approx(gnn(wide) / gnn(full)));
}

TEST_CASE("initialization is seeded, bounded and zero-biased") {
    const ModelConfig c = small_config();
    const ThgnModel a = ThgnModel::initialize(c, 3), b = ThgnModel::initialize(c, 3), z = ThgnModel::initialize(c, 4);
    bool differs = false;
    for (std::size_t k = 0; k < a.params.size(); ++k) {
        const auto& p = a.params.items()[k];
        CHECK(p.value == b.params.items()[k].value);
        differs = differs || !(p.value == z.params.items()[k].value);
        if (p.value.ndim() == 1) {
            for (double v : p.value.values()) CHECK(v == 0.0);
        } else {
            const double bound = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
            for (double v : p.value.values()) CHECK(std::abs(v) <= bound);
        }
    }
    CHECK(differs);
    CHECK(a.params["gnn_a.0.weight"].shape() == Shape{5, 8});
    CHECK(a.params["gnn_v.1.weight"].shape() == Shape{8, 8});
    CHECK(a.params["gat_av.attn"].shape() == Shape{16, 1});
    CHECK(a.params["classifier.weight"].shape() == Shape{8, 3});
}

TEST_CASE("trivial clip with a zero classifier yields the bias") {
    ModelConfig c = small_config();
    ThgnModel m = ThgnModel::initialize(c, 0);
    m.params["classifier.weight"] = Tensor({8, 3});
    m.params["classifier.bias"] = Tensor::vector({0.1, -0.2, 0.3});
    GradcheckSetup s;
    s.audio_segments = 1;
    s.video_segments = 1;
    const auto clips = gradcheck_clips(s);
    Tape t;
    const BoundModel bm(t, m, false);
    const ClipData* batch[] = {&clips[0]};
    const Tensor logits = model_forward(bm, batch).logits.value();
    CHECK(logits == Tensor::matrix(1, 3, {0.1, -0.2, 0.3}));
}

TEST_CASE("batch order permutes outputs and runs are deterministic") {
    const ThgnModel m = ThgnModel::initialize(small_config(), 2);
    GradcheckSetup s;
    const auto clips = gradcheck_clips(s);
    Tape t;
    const BoundModel bm(t, m, false);
    const ClipData* ab[] = {&clips[0], &clips[1]};
    const ClipData* ba[] = {&clips[1], &clips[0]};
    const auto o1 = model_forward(bm, ab);
    const auto o2 = model_forward(bm, ba);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(o1.logits.value().at(0, c) == o2.logits.value().at(1, c));
        CHECK(o1.logits.value().at(1, c) == o2.logits.value().at(0, c));
    }
    Tape t2;
    const BoundModel bm2(t2, m, false);
    const auto o3 = model_forward(bm2, ab);
    CHECK(o1.logits.value() == o3.logits.value());
    CHECK(o1.audio_embed.value() == o3.audio_embed.value());
    CHECK(o1.video_embed.value() == o3.video_embed.value());
    CHECK(o1.logits.value().all_finite());
    CHECK(o1.audio_embed.value().shape() == Shape{2, 8});
    CHECK_THROWS(model_forward(bm, std::span<const ClipData* const>{}));
}

TEST_CASE("without inter edges video reaches only the contrastive embedding") {
    const ThgnModel m = ThgnModel::initialize(small_config(), 5);
    GradcheckSetup s;
    auto clips = gradcheck_clips(s);
    ClipData& c = clips[0];
    c.graph.inter_adj = Tensor(c.graph.inter_adj.shape());
    c.graph.inter_norm = c.graph.inter_adj;
    c.graph.inter_mask = c.graph.inter_adj;
    ClipData changed = c;
    for (float& v : changed.video.values) v = -2.0f * v + 0.5f;

    Tape t;
    const BoundModel bm(t, m, false);
    const ClipData* b1[] = {&c};
    const ClipData* b2[] = {&changed};
    const auto o1 = model_forward(bm, b1);
    const auto o2 = model_forward(bm, b2);
    CHECK(o1.logits.value() == o2.logits.value());
    CHECK_FALSE(o1.video_embed.value() == o2.video_embed.value());
}

TEST_CASE("end-to-end gradients match finite differences") {
    GradcheckSetup s;
    for (auto mode : {TemporalMode::gau_haw, TemporalMode::both_haw, TemporalMode::both_gau}) {
        s.temporal_mode = mode;
        const auto r = end_to_end_gradcheck(s);
        CHECK(r.parameters.size() == 18);
        CHECK(r.max_error < 1e-4);
    }
}

TEST_CASE("checkpoint round trip and config guard") {
    const auto dir = scratch_dir("ckpt");
    const ThgnModel m = ThgnModel::initialize(small_config(), 9);
    save_checkpoint(m, dir / "m.thgc");
    const ThgnModel back = load_checkpoint(dir / "m.thgc");
    CHECK(back.config == m.config);
    for (std::size_t k = 0; k < m.params.size(); ++k) {
        const auto& a = m.params.items()[k];
        const auto& b = back.params.items()[k];
        CHECK(a.name == b.name);
        for (std::size_t i = 0; i < a.value.numel(); ++i) {
            CHECK(b.value[i] == static_cast<double>(static_cast<float>(a.value[i])));
        }
    }
    CHECK_NOTHROW(load_checkpoint(dir / "m.thgc", m.config));
    ModelConfig other = m.config;
    other.num_classes = 4;
    CHECK_THROWS_AS(load_checkpoint(dir / "m.thgc", other), ConfigError);

    std::ofstream(dir / "junk.thgc") << "THGX";
    CHECK_THROWS(load_checkpoint(dir / "junk.thgc"));
}

TEST_CASE("config validation") {
    ModelConfig c;
    c.hidden = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(describe(ModelConfig{}) == "audio_dim=128 video_dim=1024 d=128 hidden=512 layers=4 num_classes=33");
}
