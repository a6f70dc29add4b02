#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "thgcl/losses.hpp"

using namespace thgcl;
using namespace thgcl::testing;

namespace {

double cosine(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t c = 0; c < a.cols(); ++c) {
        ab += a.at(i, c) * b.at(j, c);
        aa += a.at(i, c) * a.at(i, c);
        bb += b.at(j, c) * b.at(j, c);
    }
    return ab / std::max(std::sqrt(aa) * std::sqrt(bb), 1e-12);
}

// Loop-form evaluation of the symmetric loss.
double contrastive_oracle(const Tensor& a, const Tensor& v, double t) {
    const std::size_t b = a.rows();
    double total = 0.0;
    for (int dir = 0; dir < 2; ++dir) {
        const Tensor& anchor = dir == 0 ? v : a;
        const Tensor& other = dir == 0 ? a : v;
        double sum = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            double denom = 0.0;
            for (std::size_t j = 0; j < b; ++j) {
                if (j != i) denom += std::exp(cosine(anchor, i, other, j) / t);
            }
            sum += -(cosine(anchor, i, other, i) / t - std::log(denom));
        }
        total += sum / static_cast<double>(b);
    }
    return total;
}

double contrastive_value(const Tensor& a, const Tensor& v, double t) {
    Tape tape;
    return contrastive_loss(tape.constant(a), tape.constant(v), t).value().item();
}

double bce_oracle(const Tensor& logits, const Tensor& labels) {
    double s = 0.0;
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        const double p = std::clamp(sigmoid(logits[i]), 1e-7, 1 - 1e-7);
        s += labels[i] == 1.0 ? -std::log(p) : -std::log(1 - p);
    }
    return s / static_cast<double>(logits.numel());
}

double focal_value(const Tensor& logits, const Tensor& labels, double gamma, double alpha) {
    Tape tape;
    return focal_loss(tape.constant(logits), labels, gamma, alpha).value().item();
}

Tensor random_labels(Shape s, std::mt19937_64& rng) {
    Tensor t(std::move(s));
    for (double& v : t.values()) v = static_cast<double>(rng() % 2);
    return t;
}

}  // namespace

TEST_CASE("contrastive loss examples") {
    const Tensor eye = Tensor::identity(2);
    CHECK(contrastive_value(eye, eye, 1.0) == doctest::Approx(-2.0).epsilon(1e-14));
    CHECK(contrastive_value(eye, eye, 0.5) == doctest::Approx(-4.0).epsilon(1e-14));
    Tape tape;
    CHECK(contrastive_direction(tape.constant(eye), tape.constant(eye), 1.0).value().item() ==
          doctest::Approx(-1.0).epsilon(1e-14));

    const Tensor same = Tensor::matrix(3, 2, {1, 2, 1, 2, 1, 2});
    CHECK(std::abs(contrastive_value(same, same, 0.1) - 3.0 * 0.0 - 2.0 * std::log(2.0)) < 1e-12);
}

TEST_CASE("contrastive loss with equal cosines in each direction cancels the positive") {
    // Identical rows: every cosine is 1, each term is 1/t - log((B-1) e^{1/t}) = -log(B-1).
    for (std::size_t b : {2u, 3u, 5u}) {
        Tensor x({b, 4});
        for (std::size_t r = 0; r < b; ++r) {
            for (std::size_t c = 0; c < 4; ++c) x.at(r, c) = 0.3 + c;
        }
        CHECK(std::abs(contrastive_value(x, x, 0.2) - 2.0 * std::log(static_cast<double>(b - 1))) < 1e-12);
    }
}

TEST_CASE("contrastive loss matches the loop oracle") {
    std::mt19937_64 rng(11);
    for (int k = 0; k < 50; ++k) {
        const std::size_t b = 2 + rng() % 6, h = 1 + rng() % 9;
        const Tensor a = random_tensor({b, h}, rng), v = random_tensor({b, h}, rng);
        const double t = 0.05 + 0.5 * static_cast<double>(rng() % 100) / 100.0;
        CHECK(std::abs(contrastive_value(a, v, t) - contrastive_oracle(a, v, t)) < 1e-9);
    }
}

TEST_CASE("contrastive loss rejects batches below two") {
    Tape tape;
    const Var one = tape.constant(Tensor::matrix(1, 3, {1, 2, 3}));
    CHECK_THROWS_WITH(contrastive_loss(one, one, 0.1), doctest::Contains("contrastive loss undefined for batch < 2"));
    const Var two = tape.constant(Tensor({2, 3}));
    CHECK_THROWS(contrastive_loss(one, two, 0.1));
}

TEST_CASE("contrastive loss gradients match finite differences") {
    std::mt19937_64 rng(12);
    for (int k = 0; k < 10; ++k) {
        const Tensor a = random_tensor({4, 8}, rng), v = random_tensor({4, 8}, rng);
        const LossOf wrt_a = [&](Tape& t, Var x) { return contrastive_loss(x, t.constant(v), 0.1); };
        const LossOf wrt_v = [&](Tape& t, Var x) { return contrastive_loss(t.constant(a), x, 0.1); };
        CHECK(max_rel_diff(analytic_gradient(wrt_a, a), central_difference(wrt_a, a)) < 1e-6);
        CHECK(max_rel_diff(analytic_gradient(wrt_v, v), central_difference(wrt_v, v)) < 1e-6);
    }
}

TEST_CASE("contrastive loss ignores a common positive scale") {
    std::mt19937_64 rng(13);
    for (double s : {1e-3, 0.5, 7.0, 1e4}) {
        const Tensor a = random_tensor({5, 6}, rng), v = random_tensor({5, 6}, rng);
        Tensor as = a, vs = v;
        for (double& x : as.values()) x *= s;
        for (double& x : vs.values()) x *= s;
        CHECK(std::abs(contrastive_value(a, v, 0.1) - contrastive_value(as, vs, 0.1)) < 1e-9);
    }
}

TEST_CASE("focal loss with gamma 0 and alpha 1 is binary cross-entropy") {
    std::mt19937_64 rng(14);
    for (int k = 0; k < 100; ++k) {
        const std::size_t b = 1 + rng() % 6, c = 1 + rng() % 6;
        const Tensor logits = random_tensor({b, c}, rng, -6, 6);
        const Tensor labels = random_labels({b, c}, rng);
        CHECK(std::abs(focal_value(logits, labels, 0.0, 1.0) - bce_oracle(logits, labels)) < 1e-12);
    }
}

TEST_CASE("focal loss hand values") {
    const Tensor zero({1, 1});
    const Tensor pos = Tensor::matrix(1, 1, {1});
    CHECK(focal_value(zero, pos, 2.0, 0.25) == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-14));
    CHECK(focal_value(zero, pos, 2.0, 0.25) == doctest::Approx(0.043322).epsilon(1e-5));
    // Mean over entries: a second, perfectly classified entry halves the value.
    const Tensor two = Tensor::matrix(1, 2, {0, 50});
    CHECK(focal_value(two, Tensor::matrix(1, 2, {1, 1}), 2.0, 0.25) ==
          doctest::Approx(0.5 * 0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));

    const double big = focal_value(Tensor::matrix(1, 1, {40}), pos, 2.0, 0.25);
    CHECK(big >= 0.0);
    CHECK(big < 1e-15);
    // Clamp keeps confident mistakes finite.
    const double wrong = focal_value(Tensor::matrix(1, 1, {-800}), pos, 0.0, 1.0);
    CHECK(wrong == doctest::Approx(-std::log(1e-7)).epsilon(1e-9));
}

TEST_CASE("focal loss gradients match finite differences") {
    std::mt19937_64 rng(15);
    const Tensor labels = random_labels({4, 5}, rng);
    const Tensor logits = random_tensor({4, 5}, rng, -3, 3);
    const LossOf f = [&](Tape&, Var x) { return focal_loss(x, labels, 2.0, 0.25); };
    CHECK(max_rel_diff(analytic_gradient(f, logits), central_difference(f, logits)) < 1e-6);
}

TEST_CASE("focal loss rejects non-binary labels") {
    Tape tape;
    const Var z = tape.constant(Tensor({2, 2}));
    CHECK_THROWS(focal_loss(z, Tensor::matrix(2, 2, {0, 1, 0.5, 1}), 2.0, 0.25));
    CHECK_THROWS(focal_loss(z, Tensor({2, 3}), 2.0, 0.25));
}

TEST_CASE("joint objective") {
    const LossConfig defaults;
    CHECK(total_loss(1.0, 2.0, defaults) == doctest::Approx(1.2).epsilon(1e-15));
    LossConfig fl_only;
    fl_only.omega_cl = 0.0;
    CHECK(total_loss(0.37, -5.0, fl_only) == 0.37);
    LossConfig cl_only;
    cl_only.omega_fl = 0.0;
    cl_only.omega_cl = 1.0;
    CHECK(total_loss(0.37, -5.0, cl_only) == -5.0);

    Tape tape;
    const Var fl = tape.constant(Tensor::scalar(0.5)), cl = tape.constant(Tensor::scalar(-3.0));
    CHECK(total_loss(fl, cl, defaults).value().item() == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("loss config validation") {
    LossConfig c;
    CHECK_NOTHROW(c.validate());
    c.temperature = 0.0;
    CHECK_THROWS(c.validate());
    c = {};
    c.focal_alpha = 0.0;
    CHECK_THROWS(c.validate());
    c = {};
    c.focal_gamma = -1.0;
    CHECK_THROWS(c.validate());
}
