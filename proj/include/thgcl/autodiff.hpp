#pragma once

// Tape-based reverse-mode differentiation over dense Tensors.
//
// Every op evaluates eagerly and appends a node to the Tape that owns its
// operands. A node stores a backward rule only when at least one input
// requires a gradient; other nodes are plain values.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "thgcl/tensor.hpp"

namespace thgcl {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the Tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    std::size_t id() const { return id_; }
    Tape* tape() const { return tape_; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

struct BackwardArgs {
    const Tensor& out;
    const Tensor& grad_out;
    std::span<const Tensor* const> in;
    // Null for inputs that do not require a gradient.
    std::span<Tensor* const> grad_in;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

class Gradients {
public:
    Gradients() = default;
    explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}

    /// Gradient of the loss with respect to v; all-zero when v is unreachable.
    const Tensor& operator[](Var v) const { return grads_.at(v.id()); }

private:
    std::vector<Tensor> grads_;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    Var parameter(Tensor value) { return leaf(std::move(value), true); }

    /// Appends an op result. The backward rule is dropped when no input requires a gradient.
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse sweep from a scalar loss. Visits each reachable node once, in reverse recording order.
    Gradients backward(Var loss) const;

private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
    };
    // deque keeps references to earlier values stable while recording.
    std::deque<Node> nodes_;
};

inline Gradients backward(const Tape& tape, Var loss) { return tape.backward(loss); }

namespace ops {

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kCosineEps = 1e-12;

/// (m x k) . (k x n) -> (m x n)
Var matmul(Var a, Var b);
/// Same-shape addition, or (m x n) + bias where bias is (n) or (1 x n).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);
Var leaky_relu(Var a, double slope = kLeakySlope);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
/// Throws DomainError on any non-positive entry.
Var log(Var a);
Var sum(Var a);
Var mean(Var a);
/// (m x n) -> (m x 1)
Var sum_rows(Var a);
Var transpose(Var a);
/// Rows [begin, end) of a matrix.
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var softmax_rows(Var a);
/// Softmax restricted to entries where mask != 0; fully masked rows become zero.
Var masked_softmax_rows(Var a, const Tensor& mask);
Var concat_rows(std::span<const Var> parts);
/// Two vectors -> scalar. Two matrices (m x h), (n x h) -> (m x n) pairwise row cosines.
Var cosine_similarity(Var a, Var b);

}  // namespace ops

using ScalarFn = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|),
/// numeric gradients from central differences.
double grad_check(const ScalarFn& f, const Tensor& x, double step = 1e-5);

/// Central-difference gradient of f at x.
Tensor numeric_gradient(const ScalarFn& f, const Tensor& x, double step = 1e-5);

double relative_error(const Tensor& analytic, const Tensor& numeric);

}  // namespace thgcl
