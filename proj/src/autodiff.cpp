#include "thgcl/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace thgcl {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

ConstMatMap as_matrix(const Tensor& t) {
    return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

MatMap as_matrix(Tensor& t) {
    return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const char* expected) {
    throw ShapeError(std::string(op) + ": expected " + expected + ", got " + shape_to_string(a.shape()));
}

void require_same_tape(Var a, Var b) {
    if (a.tape() != b.tape() || a.tape() == nullptr) throw Error("operands recorded on different tapes");
}

template <typename Fwd, typename Deriv>
Var unary_elementwise(Var a, Fwd fwd, Deriv deriv) {
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = fwd(x[i]);
    return a.tape()->record(std::move(out), {a}, [deriv](const BackwardArgs& args) {
        const Tensor& x = *args.in[0];
        Tensor& g = *args.grad_in[0];
        for (std::size_t i = 0; i < x.numel(); ++i) g[i] += args.grad_out[i] * deriv(x[i], args.out[i]);
    });
}

bool is_bias_for(const Tensor& m, const Tensor& b) {
    if (m.ndim() != 2) return false;
    if (b.ndim() == 1) return b.shape()[0] == m.shape()[1];
    if (b.ndim() == 2) return b.shape()[0] == 1 && b.shape()[1] == m.shape()[1] && m.shape()[0] != 1;
    return false;
}

Var add_impl(Var a, Var b, double sign, const char* name) {
    require_same_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.shape() == y.shape()) {
        Tensor out(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] + sign * y[i];
        return a.tape()->record(std::move(out), {a, b}, [sign](const BackwardArgs& args) {
            if (Tensor* ga = args.grad_in[0]) {
                for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += args.grad_out[i];
            }
            if (Tensor* gb = args.grad_in[1]) {
                for (std::size_t i = 0; i < gb->numel(); ++i) (*gb)[i] += sign * args.grad_out[i];
            }
        });
    }
    if (!is_bias_for(x, y)) shape_fail(name, x, y);
    const std::size_t rows = x.rows();
    const std::size_t cols = x.cols();
    Tensor out(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = x.at(r, c) + sign * y[c];
    }
    return a.tape()->record(std::move(out), {a, b}, [sign, rows, cols](const BackwardArgs& args) {
        if (Tensor* ga = args.grad_in[0]) {
            for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += args.grad_out[i];
        }
        if (Tensor* gb = args.grad_in[1]) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += sign * args.grad_out[r * cols + c];
            }
        }
    });
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, {}, requires_grad});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    node.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
        if (v.tape() != this) throw Error("op input recorded on a different tape");
        node.inputs.push_back(v.id());
        node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) const {
    if (loss.tape() != this) throw Error("backward: loss belongs to a different tape");
    const Tensor& lv = value(loss.id());
    if (lv.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_to_string(lv.shape()));

    std::vector<Tensor> grads(nodes_.size());
    std::vector<bool> live(nodes_.size(), false);
    grads[loss.id()] = Tensor::filled(lv.shape(), 1.0);
    live[loss.id()] = true;

    std::vector<const Tensor*> in_vals;
    std::vector<Tensor*> in_grads;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        const Node& node = nodes_[id];
        if (!live[id] || !node.backward) continue;
        in_vals.clear();
        in_grads.clear();
        for (std::size_t in : node.inputs) {
            in_vals.push_back(&nodes_[in].value);
            if (nodes_[in].requires_grad) {
                if (!live[in]) {
                    grads[in] = Tensor(nodes_[in].value.shape());
                    live[in] = true;
                }
                in_grads.push_back(&grads[in]);
            } else {
                in_grads.push_back(nullptr);
            }
        }
        node.backward(BackwardArgs{node.value, grads[id], in_vals, in_grads});
    }
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        if (!live[id]) grads[id] = Tensor(nodes_[id].value.shape());
    }
    return Gradients(std::move(grads));
}

namespace ops {

Var matmul(Var a, Var b) {
    require_same_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.ndim() != 2 || y.ndim() != 2 || x.shape()[1] != y.shape()[0]) shape_fail("matmul", x, y);
    Tensor out({x.shape()[0], y.shape()[1]});
    as_matrix(out).noalias() = as_matrix(x) * as_matrix(y);
    return a.tape()->record(std::move(out), {a, b}, [](const BackwardArgs& args) {
        auto g = as_matrix(args.grad_out);
        if (Tensor* ga = args.grad_in[0]) as_matrix(*ga).noalias() += g * as_matrix(*args.in[1]).transpose();
        if (Tensor* gb = args.grad_in[1]) as_matrix(*gb).noalias() += as_matrix(*args.in[0]).transpose() * g;
    });
}

Var add(Var a, Var b) { return add_impl(a, b, 1.0, "add"); }
Var sub(Var a, Var b) { return add_impl(a, b, -1.0, "sub"); }

Var mul(Var a, Var b) {
    require_same_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.shape() != y.shape()) shape_fail("mul", x, y);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * y[i];
    return a.tape()->record(std::move(out), {a, b}, [](const BackwardArgs& args) {
        const Tensor& x = *args.in[0];
        const Tensor& y = *args.in[1];
        if (Tensor* ga = args.grad_in[0]) {
            for (std::size_t i = 0; i < x.numel(); ++i) (*ga)[i] += args.grad_out[i] * y[i];
        }
        if (Tensor* gb = args.grad_in[1]) {
            for (std::size_t i = 0; i < x.numel(); ++i) (*gb)[i] += args.grad_out[i] * x[i];
        }
    });
}

Var scale(Var a, double factor) {
    return unary_elementwise(a, [factor](double v) { return factor * v; },
                             [factor](double, double) { return factor; });
}

Var relu(Var a) {
    return unary_elementwise(a, [](double v) { return v > 0.0 ? v : 0.0; },
                             [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
    return unary_elementwise(a, [slope](double v) { return v > 0.0 ? v : slope * v; },
                             [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var sigmoid(Var a) {
    return unary_elementwise(a, stable_sigmoid, [](double, double s) { return s * (1.0 - s); });
}

Var tanh(Var a) {
    return unary_elementwise(a, [](double v) { return std::tanh(v); },
                             [](double, double t) { return 1.0 - t * t; });
}

Var exp(Var a) {
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (!(x[i] < 709.0)) throw DomainError("exp: argument " + std::to_string(x[i]) + " overflows");
    }
    return unary_elementwise(a, [](double v) { return std::exp(v); }, [](double, double e) { return e; });
}

Var log(Var a) {
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (!(x[i] > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(x[i]));
    }
    return unary_elementwise(a, [](double v) { return std::log(v); }, [](double x, double) { return 1.0 / x; });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return a.tape()->record(Tensor::scalar(s), {a}, [](const BackwardArgs& args) {
        const double g = args.grad_out[0];
        for (double& v : args.grad_in[0]->values()) v += g;
    });
}

Var mean(Var a) {
    const std::size_t n = a.value().numel();
    if (n == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_rows(Var a) {
    const Tensor& x = a.value();
    if (x.ndim() != 2) shape_fail("sum_rows", x, "a matrix");
    const std::size_t rows = x.rows();
    const std::size_t cols = x.cols();
    Tensor out({rows, 1});
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += x.at(r, c);
        out[r] = s;
    }
    return a.tape()->record(std::move(out), {a}, [rows, cols](const BackwardArgs& args) {
        Tensor& g = *args.grad_in[0];
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) g.at(r, c) += args.grad_out[r];
        }
    });
}

Var transpose(Var a) {
    const Tensor& x = a.value();
    if (x.ndim() != 2) shape_fail("transpose", x, "a matrix");
    Tensor out({x.shape()[1], x.shape()[0]});
    as_matrix(out) = as_matrix(x).transpose();
    return a.tape()->record(std::move(out), {a}, [](const BackwardArgs& args) {
        as_matrix(*args.grad_in[0]) += as_matrix(args.grad_out).transpose();
    });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
    const Tensor& x = a.value();
    if (x.ndim() != 2 || begin > end || end > x.rows()) shape_fail("slice_rows", x, "a matrix with enough rows");
    const std::size_t cols = x.cols();
    Tensor out({end - begin, cols}, std::vector<double>(x.data() + begin * cols, x.data() + end * cols));
    return a.tape()->record(std::move(out), {a}, [begin, cols](const BackwardArgs& args) {
        double* dst = args.grad_in[0]->data() + begin * cols;
        for (std::size_t i = 0; i < args.grad_out.numel(); ++i) dst[i] += args.grad_out[i];
    });
}

namespace {

Var softmax_impl(Var a, const Tensor* mask, const char* name) {
    const Tensor& x = a.value();
    if (x.ndim() != 2) shape_fail(name, x, "a matrix");
    if (mask && mask->shape() != x.shape()) shape_fail(name, x, *mask);
    const std::size_t rows = x.rows();
    const std::size_t cols = x.cols();
    Tensor out(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < cols; ++c) {
            if (!mask || mask->at(r, c) != 0.0) m = std::max(m, x.at(r, c));
        }
        if (!std::isfinite(m)) continue;
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            if (mask && mask->at(r, c) == 0.0) continue;
            out.at(r, c) = std::exp(x.at(r, c) - m);
            z += out.at(r, c);
        }
        for (std::size_t c = 0; c < cols; ++c) out.at(r, c) /= z;
    }
    return a.tape()->record(std::move(out), {a}, [rows, cols](const BackwardArgs& args) {
        const Tensor& s = args.out;
        Tensor& g = *args.grad_in[0];
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += args.grad_out.at(r, c) * s.at(r, c);
            for (std::size_t c = 0; c < cols; ++c) g.at(r, c) += s.at(r, c) * (args.grad_out.at(r, c) - dot);
        }
    });
}

}  // namespace

Var softmax_rows(Var a) { return softmax_impl(a, nullptr, "softmax_rows"); }

Var masked_softmax_rows(Var a, const Tensor& mask) { return softmax_impl(a, &mask, "masked_softmax_rows"); }

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    Tape* tape = parts[0].tape();
    const std::size_t cols = parts[0].value().cols();
    std::size_t rows = 0;
    std::vector<std::size_t> offsets;
    for (const Var& p : parts) {
        const Tensor& t = p.value();
        if (t.ndim() != 2 || t.cols() != cols) shape_fail("concat_rows", parts[0].value(), t);
        offsets.push_back(rows);
        rows += t.rows();
    }
    Tensor out({rows, cols});
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& t = parts[k].value();
        std::copy(t.data(), t.data() + t.numel(), out.data() + offsets[k] * cols);
    }
    return tape->record(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                        [offsets, cols](const BackwardArgs& args) {
                            for (std::size_t k = 0; k < args.grad_in.size(); ++k) {
                                Tensor* g = args.grad_in[k];
                                if (!g) continue;
                                const double* src = args.grad_out.data() + offsets[k] * cols;
                                for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += src[i];
                            }
                        });
}

Var cosine_similarity(Var a, Var b) {
    require_same_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    const bool vectors = x.ndim() == 1 && y.ndim() == 1;
    if (vectors ? x.numel() != y.numel() : (x.ndim() != 2 || y.ndim() != 2 || x.cols() != y.cols())) {
        shape_fail("cosine_similarity", x, y);
    }
    const std::size_t m = x.rows();
    const std::size_t n = y.rows();
    const std::size_t h = x.cols();
    std::vector<double> nx(m), ny(n);
    for (std::size_t i = 0; i < m; ++i) nx[i] = as_matrix(x).row(static_cast<Eigen::Index>(i)).norm();
    for (std::size_t j = 0; j < n; ++j) ny[j] = as_matrix(y).row(static_cast<Eigen::Index>(j)).norm();

    Tensor dots({m, n});
    as_matrix(dots).noalias() = as_matrix(x) * as_matrix(y).transpose();
    Tensor out = vectors ? Tensor::scalar(0.0) : Tensor({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = dots.at(i, j) / std::max(nx[i] * ny[j], kCosineEps);
        }
    }
    return a.tape()->record(std::move(out), {a, b}, [m, n, h, nx, ny](const BackwardArgs& args) {
        const Tensor& x = *args.in[0];
        const Tensor& y = *args.in[1];
        Tensor* gx = args.grad_in[0];
        Tensor* gy = args.grad_in[1];
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double g = args.grad_out[i * n + j];
                if (g == 0.0) continue;
                const double denom = nx[i] * ny[j];
                const double cos = args.out[i * n + j];
                const double* xi = x.data() + i * h;
                const double* yj = y.data() + j * h;
                if (denom > kCosineEps) {
                    const double ax = cos / (nx[i] * nx[i]);
                    const double ay = cos / (ny[j] * ny[j]);
                    for (std::size_t k = 0; k < h; ++k) {
                        if (gx) gx->data()[i * h + k] += g * (yj[k] / denom - ax * xi[k]);
                        if (gy) gy->data()[j * h + k] += g * (xi[k] / denom - ay * yj[k]);
                    }
                } else {
                    for (std::size_t k = 0; k < h; ++k) {
                        if (gx) gx->data()[i * h + k] += g * yj[k] / kCosineEps;
                        if (gy) gy->data()[j * h + k] += g * xi[k] / kCosineEps;
                    }
                }
            }
        }
    });
}

}  // namespace ops

Tensor numeric_gradient(const ScalarFn& f, const Tensor& x, double step) {
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        double plus;
        {
            Tape tape;
            plus = f(tape, tape.constant(probe)).value().item();
        }
        probe[i] = orig - step;
        double minus;
        {
            Tape tape;
            minus = f(tape, tape.constant(probe)).value().item();
        }
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    return grad;
}

double relative_error(const Tensor& analytic, const Tensor& numeric) {
    if (analytic.shape() != numeric.shape()) {
        throw ShapeError("relative_error: " + shape_to_string(analytic.shape()) + " vs " +
                         shape_to_string(numeric.shape()));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.numel(); ++i) {
        const double a = analytic[i];
        const double n = numeric[i];
        const double err = std::abs(a - n) / std::max({1.0, std::abs(a), std::abs(n)});
        if (std::isnan(err)) return err;
        worst = std::max(worst, err);
    }
    return worst;
}

double grad_check(const ScalarFn& f, const Tensor& x, double step) {
    Tensor analytic;
    {
        Tape tape;
        Var input = tape.parameter(x);
        Var out = f(tape, input);
        analytic = tape.backward(out)[input];
    }
    return relative_error(analytic, numeric_gradient(f, x, step));
}

}  // namespace thgcl
