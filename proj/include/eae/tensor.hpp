#pragma once

// Dense 64-bit tensors and a thread-local reverse-mode tape.
//
// A Tensor is a shared handle: copies alias the same storage. Values are
// immutable once an operation has produced them; only leaves may be edited
// in place (parameter updates), and only grad slots change during backward.
//
// Recording happens only inside a live GradTape scope and only for
// operations with at least one tracked input (a leaf with requires_grad, or
// the output of a recorded operation).

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace eae {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {
struct TensorImpl;
}

class Tensor {
public:
    /// Scalar zero.
    Tensor();
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const;
    std::size_t numel() const;

    std::span<const double> data() const;
    /// In-place access; only legal on leaves (not produced by a recorded op).
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t flat_index) const { return data()[flat_index]; }

    bool requires_grad() const;
    void set_requires_grad(bool value);

    /// Marks this leaf as a model parameter. Backward passes that reach a
    /// parameter count as parameter passes, those reaching any other leaf
    /// count as input-gradient passes.
    bool is_parameter() const;
    void set_parameter(bool value);

    bool has_grad() const;
    /// Throws ContractError when no gradient has been accumulated.
    std::span<const double> grad() const;
    /// Releases the gradient slot; the next backward starts from zero.
    void zero_grad();

    /// True when produced by an operation recorded on a tape.
    bool has_node() const;

    /// Fresh leaf with a copy of the values; never tracked.
    Tensor detach() const;

    /// Differentiable reshape (same element order).
    Tensor reshape(Shape shape) const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
    static Tensor from_impl(std::shared_ptr<detail::TensorImpl> impl);

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Backward rule: receives the output gradient and one accumulator per input
/// (nullptr for untracked inputs). Accumulators are zero-initialized with the
/// input's element count and must be added into, not overwritten.
using BackwardFn = std::function<void(std::span<const double> grad_out, std::span<std::vector<double>*> grad_in)>;

/// Builds an operation result and records it on the active tape when any
/// input is tracked. Exposed so that fused operations (loss functions, EAE
/// logit perturbation) can live next to their domain code.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs, BackwardFn backward);

/// RAII scope for the calling thread's tape. Scopes nest; operations record
/// onto the innermost one.
class GradTape {
public:
    GradTape();
    ~GradTape();
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    std::size_t size() const;

    struct State;

private:
    std::unique_ptr<State> state_;
};

/// RAII guard: while alive, parameter leaves on this thread are treated as
/// constants, so backward produces input gradients only.
class ParameterGradsDisabled {
public:
    ParameterGradsDisabled();
    ~ParameterGradsDisabled();
    ParameterGradsDisabled(const ParameterGradsDisabled&) = delete;
    ParameterGradsDisabled& operator=(const ParameterGradsDisabled&) = delete;
};

/// True when a tape scope is open on this thread.
bool tape_active();

/// Reverse sweep from a scalar root. Gradients accumulate (add) into every
/// reachable leaf with requires_grad. Repeated calls add again.
void backward(const Tensor& root);

// Process-wide pass counters. Monotone; never reset.
struct PassCounters {
    std::atomic<std::uint64_t> forward_passes{0};
    std::atomic<std::uint64_t> backward_passes{0};
    std::atomic<std::uint64_t> param_backward_passes{0};
    std::atomic<std::uint64_t> input_grad_passes{0};
};

struct PassSnapshot {
    std::uint64_t forward_passes = 0;
    std::uint64_t backward_passes = 0;
    std::uint64_t param_backward_passes = 0;
    std::uint64_t input_grad_passes = 0;

    PassSnapshot operator-(const PassSnapshot& rhs) const {
        return {forward_passes - rhs.forward_passes, backward_passes - rhs.backward_passes,
                param_backward_passes - rhs.param_backward_passes, input_grad_passes - rhs.input_grad_passes};
    }
};

PassCounters& pass_counters();
PassSnapshot snapshot_passes();

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b);

enum class ElementwiseOp { add, sub, mul, relu, exp, log, neg, scale };

/// Tagged elementwise dispatcher. Binary ops take `rhs`; `scale` uses `factor`.
Tensor elementwise(ElementwiseOp op, const Tensor& lhs, const Tensor* rhs = nullptr, double factor = 1.0);

/// Binary ops accept equal shapes or a one-element operand (scalar broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
/// Throws DomainError on non-positive input.
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);

/// Sum of all elements, shape {}.
Tensor sum(const Tensor& a);

/// x[m, n] + bias[n] per row.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

/// Cross-correlation over NCHW input with an [F, C, kh, kw] kernel via im2col.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);
/// Same, with a per-filter bias [F].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// 2x2 max pooling with stride 2 over NCHW; odd trailing rows/cols dropped.
/// Ties route the gradient to the first maximum in row-major window order.
Tensor maxpool2x2(const Tensor& input);

/// [N, ...] -> [N, prod(...)].
Tensor flatten(const Tensor& input);

}  // namespace eae
