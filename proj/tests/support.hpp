#pragma once

// Shared helpers for the unit and acceptance tests. Everything here is
// written without the library's own numeric_gradient / grad_check so the
// derivative checks stay independent of the code they verify.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "thgcl/autodiff.hpp"

namespace thgcl::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = u(rng);
    return t;
}

/// Loss built from one input; evaluated on a fresh tape for every probe.
using LossOf = std::function<Var(Tape&, Var)>;

inline double eval_loss(const LossOf& f, const Tensor& x) {
    Tape tape;
    return f(tape, tape.constant(x)).value().item();
}

inline Tensor central_difference(const LossOf& f, const Tensor& x, double h = 1e-5) {
    Tensor g(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        probe[i] = x[i] + h;
        const double up = eval_loss(f, probe);
        probe[i] = x[i] - h;
        const double down = eval_loss(f, probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline Tensor analytic_gradient(const LossOf& f, const Tensor& x) {
    Tape tape;
    const Var v = tape.parameter(x);
    return tape.backward(f(tape, v))[v];
}

/// max_i |a_i - n_i| / max(1, |a_i|, |n_i|)
inline double max_rel_diff(const Tensor& a, const Tensor& n) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = std::abs(a[i] - n[i]) / std::max({1.0, std::abs(a[i]), std::abs(n[i])});
        if (std::isnan(d)) return d;
        worst = std::max(worst, d);
    }
    return worst;
}

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor c({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
            c.at(i, j) = s;
        }
    }
    return c;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("thgcl_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace thgcl::testing
