#include "eae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

#include "eae/errors.hpp"
#include "gemm.hpp"

namespace eae {

namespace detail {

constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool parameter = false;
    std::uint64_t tape_id = 0;
    std::size_t node = kNoNode;

    bool is_leaf() const { return node == kNoNode; }
};

}  // namespace detail

using detail::kNoNode;
using detail::TensorImpl;

struct GradTape::State {
    struct Node {
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        std::weak_ptr<TensorImpl> output;
        BackwardFn backward;
    };

    std::uint64_t id = 0;
    std::vector<Node> nodes;
};

namespace {

thread_local std::vector<GradTape::State*> tape_stack;
thread_local int parameter_grads_disabled = 0;
std::atomic<std::uint64_t> next_tape_id{1};

GradTape::State* current_tape() { return tape_stack.empty() ? nullptr : tape_stack.back(); }

bool is_tracked(const TensorImpl& impl, const GradTape::State* tape) {
    if (impl.is_leaf()) return impl.requires_grad && !(impl.parameter && parameter_grads_disabled > 0);
    return tape != nullptr && impl.tape_id == tape->id;
}

void check_finite_shape(const Shape& shape) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
}

bool is_one_element(const Tensor& t) { return t.numel() == 1; }

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) { impl_->data.assign(1, 0.0); }

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) : impl_(std::make_shared<TensorImpl>()) {
    check_finite_shape(shape);
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_to_string(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::from_impl(std::shared_ptr<TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= impl_->shape.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_to_string(impl_->shape));
    }
    return impl_->shape[axis];
}

std::size_t Tensor::rank() const { return impl_->shape.size(); }
std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::mutable_data() {
    if (!impl_->is_leaf()) throw ContractError("mutable_data() on a recorded (non-leaf) tensor");
    return impl_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    if (!impl_->is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
    impl_->requires_grad = value;
}

bool Tensor::is_parameter() const { return impl_->parameter; }
void Tensor::set_parameter(bool value) { impl_->parameter = value; }

bool Tensor::has_grad() const { return impl_->has_grad; }

std::span<const double> Tensor::grad() const {
    if (!impl_->has_grad) throw ContractError("tensor has no accumulated gradient");
    return impl_->grad;
}

void Tensor::zero_grad() {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
    impl_->has_grad = false;
}

bool Tensor::has_node() const { return !impl_->is_leaf(); }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

Tensor Tensor::reshape(Shape shape) const {
    check_finite_shape(shape);
    if (shape_numel(shape) != numel()) {
        throw DimensionError("cannot reshape " + shape_to_string(this->shape()) + " to " + shape_to_string(shape));
    }
    return make_result(std::move(shape), impl_->data, {*this},
                       [](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           if (auto* a = gi[0]) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*a)[i] += g[i];
                           }
                       });
}

// ---------------------------------------------------------------------------
// Tape

GradTape::GradTape() : state_(std::make_unique<State>()) {
    state_->id = next_tape_id.fetch_add(1);
    tape_stack.push_back(state_.get());
}

GradTape::~GradTape() {
    // Scopes are strictly nested on a thread.
    if (!tape_stack.empty() && tape_stack.back() == state_.get()) tape_stack.pop_back();
}

std::size_t GradTape::size() const { return state_->nodes.size(); }

ParameterGradsDisabled::ParameterGradsDisabled() { ++parameter_grads_disabled; }
ParameterGradsDisabled::~ParameterGradsDisabled() { --parameter_grads_disabled; }

bool tape_active() { return current_tape() != nullptr; }

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs, BackwardFn backward) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);

    auto* tape = current_tape();
    if (tape != nullptr) {
        const bool any_tracked = std::any_of(inputs.begin(), inputs.end(),
                                             [&](const Tensor& t) { return is_tracked(*t.impl(), tape); });
        if (any_tracked) {
            GradTape::State::Node node;
            node.inputs.reserve(inputs.size());
            for (auto& t : inputs) node.inputs.push_back(t.impl());
            node.output = impl;
            node.backward = std::move(backward);
            impl->tape_id = tape->id;
            impl->node = tape->nodes.size();
            tape->nodes.push_back(std::move(node));
        }
    }
    return Tensor::from_impl(std::move(impl));
}

PassCounters& pass_counters() {
    static PassCounters counters;
    return counters;
}

PassSnapshot snapshot_passes() {
    auto& c = pass_counters();
    return {c.forward_passes.load(), c.backward_passes.load(), c.param_backward_passes.load(),
            c.input_grad_passes.load()};
}

void backward(const Tensor& root) {
    if (root.numel() != 1) {
        throw ContractError("backward() requires a scalar root, got shape " + shape_to_string(root.shape()));
    }
    auto* tape = current_tape();
    auto& rimpl = *root.impl();
    if (tape == nullptr || rimpl.is_leaf() || rimpl.tape_id != tape->id) {
        throw ContractError("backward() root was not recorded on the active tape");
    }

    rimpl.grad.assign(1, 1.0);
    rimpl.has_grad = true;

    bool reached_parameter = false;
    bool reached_input = false;
    std::vector<std::vector<double>*> slots;

    for (std::size_t i = rimpl.node + 1; i-- > 0;) {
        auto& node = tape->nodes[i];
        auto out = node.output.lock();
        if (!out || !out->has_grad) continue;

        slots.assign(node.inputs.size(), nullptr);
        for (std::size_t j = 0; j < node.inputs.size(); ++j) {
            auto& in = *node.inputs[j];
            if (!is_tracked(in, tape)) continue;
            if (!in.has_grad) {
                in.grad.assign(in.data.size(), 0.0);
                in.has_grad = true;
            }
            if (in.is_leaf()) {
                if (in.parameter) {
                    reached_parameter = true;
                } else {
                    reached_input = true;
                }
            }
            slots[j] = &in.grad;
        }
        node.backward(out->grad, slots);

        // Intermediate gradients are consumed once their node has run.
        out->grad.clear();
        out->has_grad = false;
    }

    auto& c = pass_counters();
    c.backward_passes.fetch_add(1);
    if (reached_parameter) c.param_backward_passes.fetch_add(1);
    if (reached_input) c.input_grad_passes.fetch_add(1);
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

struct Broadcast {
    Shape shape;
    bool lhs_scalar = false;
    bool rhs_scalar = false;
};

Broadcast broadcast_shapes(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return {a.shape(), false, false};
    if (is_one_element(b)) return {a.shape(), false, true};
    if (is_one_element(a)) return {b.shape(), true, false};
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
}

template <typename Fwd>
std::vector<double> binary_forward(const Tensor& a, const Tensor& b, const Broadcast& bc, Fwd f) {
    const auto n = shape_numel(bc.shape);
    std::vector<double> out(n);
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = f(ad[bc.lhs_scalar ? 0 : i], bd[bc.rhs_scalar ? 0 : i]);
    }
    return out;
}

void accumulate(std::vector<double>& dst, bool collapse, std::size_t i, double v) {
    dst[collapse ? 0 : i] += v;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    auto bc = broadcast_shapes(a, b, "add");
    auto out = binary_forward(a, b, bc, [](double x, double y) { return x + y; });
    return make_result(bc.shape, std::move(out), {a, b},
                       [bc](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               if (gi[0]) accumulate(*gi[0], bc.lhs_scalar, i, g[i]);
                               if (gi[1]) accumulate(*gi[1], bc.rhs_scalar, i, g[i]);
                           }
                       });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    auto bc = broadcast_shapes(a, b, "sub");
    auto out = binary_forward(a, b, bc, [](double x, double y) { return x - y; });
    return make_result(bc.shape, std::move(out), {a, b},
                       [bc](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               if (gi[0]) accumulate(*gi[0], bc.lhs_scalar, i, g[i]);
                               if (gi[1]) accumulate(*gi[1], bc.rhs_scalar, i, -g[i]);
                           }
                       });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    auto bc = broadcast_shapes(a, b, "mul");
    auto out = binary_forward(a, b, bc, [](double x, double y) { return x * y; });
    auto ai = a.impl();
    auto bi = b.impl();
    return make_result(bc.shape, std::move(out), {a, b},
                       [bc, ai, bi](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           const auto& ad = ai->data;
                           const auto& bd = bi->data;
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               const double av = ad[bc.lhs_scalar ? 0 : i];
                               const double bv = bd[bc.rhs_scalar ? 0 : i];
                               if (gi[0]) accumulate(*gi[0], bc.lhs_scalar, i, g[i] * bv);
                               if (gi[1]) accumulate(*gi[1], bc.rhs_scalar, i, g[i] * av);
                           }
                       });
}

Tensor relu(const Tensor& a) {
    const auto ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] > 0.0 ? ad[i] : 0.0;
    auto ai = a.impl();
    return make_result(a.shape(), std::move(out), {a},
                       [ai](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           if (!gi[0]) return;
                           auto& dst = *gi[0];
                           const auto& x = ai->data;
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               if (x[i] > 0.0) dst[i] += g[i];
                           }
                       });
}

Tensor exp(const Tensor& a) {
    const auto ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) out[i] = std::exp(ad[i]);
    auto values = std::make_shared<std::vector<double>>(out);
    return make_result(a.shape(), std::move(out), {a},
                       [values](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           if (!gi[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * (*values)[i];
                       });
}

Tensor log(const Tensor& a) {
    const auto ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) {
        if (!(ad[i] > 0.0)) {
            throw DomainError("log of non-positive value " + std::to_string(ad[i]) + " at index " + std::to_string(i));
        }
        out[i] = std::log(ad[i]);
    }
    auto ai = a.impl();
    return make_result(a.shape(), std::move(out), {a},
                       [ai](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           if (!gi[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] / ai->data[i];
                       });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
    const auto ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) out[i] = factor * ad[i];
    return make_result(a.shape(), std::move(out), {a},
                       [factor](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           if (!gi[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += factor * g[i];
                       });
}

Tensor elementwise(ElementwiseOp op, const Tensor& lhs, const Tensor* rhs, double factor) {
    auto need_rhs = [&]() -> const Tensor& {
        if (rhs == nullptr) throw ContractError("binary elementwise op requires a right-hand operand");
        return *rhs;
    };
    switch (op) {
        case ElementwiseOp::add: return add(lhs, need_rhs());
        case ElementwiseOp::sub: return sub(lhs, need_rhs());
        case ElementwiseOp::mul: return mul(lhs, need_rhs());
        case ElementwiseOp::relu: return relu(lhs);
        case ElementwiseOp::exp: return exp(lhs);
        case ElementwiseOp::log: return log(lhs);
        case ElementwiseOp::neg: return neg(lhs);
        case ElementwiseOp::scale: return scale(lhs, factor);
    }
    throw ContractError("unknown elementwise op");
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_result({}, {s}, {a}, [](std::span<const double> g, std::span<std::vector<double>*> gi) {
        if (!gi[0]) return;
        for (auto& v : *gi[0]) v += g[0];
    });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
        throw DimensionError("add_row_bias: expected [m, n] + [n], got " + shape_to_string(x.shape()) + " + " +
                             shape_to_string(bias.shape()));
    }
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> out(x.data().begin(), x.data().end());
    const auto b = bias.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
    }
    return make_result(x.shape(), std::move(out), {x, bias},
                       [m, n](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           if (gi[0]) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                           }
                           if (gi[1]) {
                               auto& db = *gi[1];
                               for (std::size_t i = 0; i < m; ++i) {
                                   for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
                               }
                           }
                       });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " x " +
                             shape_to_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
    auto ai = a.impl();
    auto bi = b.impl();
    return make_result({m, n}, std::move(out), {a, b},
                       [ai, bi, m, n, k](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           if (gi[0]) detail::gemm_nt(m, k, n, g.data(), bi->data.data(), gi[0]->data());
                           if (gi[1]) detail::gemm_tn(k, n, m, ai->data.data(), g.data(), gi[1]->data());
                       });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
    std::size_t batch, channels, height, width;
    std::size_t filters, kh, kw;
    std::size_t stride, padding;
    std::size_t out_h, out_w;

    std::size_t patch() const { return channels * kh * kw; }
    std::size_t positions() const { return out_h * out_w; }
};

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding,
                            const char* axis) {
    const std::size_t padded = in + 2 * padding;
    if (padded < k || (padded - k) % stride != 0) {
        throw DimensionError(std::string("conv2d: non-integral output ") + axis + " for input " + std::to_string(in) +
                             ", kernel " + std::to_string(k) + ", stride " + std::to_string(stride) +
                             ", padding " + std::to_string(padding));
    }
    return (padded - k) / stride + 1;
}

// col[patch, positions] for one image.
void im2col(const double* img, const ConvGeometry& g, double* col) {
    const std::size_t p = g.positions();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                double* row = col + ((c * g.kh + ky) * g.kw + kx) * p;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                    double* dst = row + oy * g.out_w;
                    if (iy < 0 || iy >= static_cast<long>(g.height)) {
                        std::fill(dst, dst + g.out_w, 0.0);
                        continue;
                    }
                    const double* src = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im(const double* col, const ConvGeometry& g, double* img) {
    const std::size_t p = g.positions();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const double* row = col + ((c * g.kh + ky) * g.kw + kx) * p;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                    if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
                    double* dst = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    const double* src = row + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                        if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

Tensor conv2d_impl(const Tensor& input, const Tensor& kernel, const Tensor* bias, std::size_t stride,
                   std::size_t padding) {
    if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(1)) {
        throw DimensionError("conv2d: expected input [N,C,H,W] and kernel [F,C,kh,kw], got " +
                             shape_to_string(input.shape()) + " and " + shape_to_string(kernel.shape()));
    }
    if (stride == 0) throw DimensionError("conv2d: stride must be positive");
    if (bias != nullptr && (bias->rank() != 1 || bias->dim(0) != kernel.dim(0))) {
        throw DimensionError("conv2d: bias shape " + shape_to_string(bias->shape()) + " does not match " +
                             std::to_string(kernel.dim(0)) + " filters");
    }

    ConvGeometry g{};
    g.batch = input.dim(0);
    g.channels = input.dim(1);
    g.height = input.dim(2);
    g.width = input.dim(3);
    g.filters = kernel.dim(0);
    g.kh = kernel.dim(2);
    g.kw = kernel.dim(3);
    g.stride = stride;
    g.padding = padding;
    g.out_h = conv_out_extent(g.height, g.kh, stride, padding, "height");
    g.out_w = conv_out_extent(g.width, g.kw, stride, padding, "width");

    const std::size_t patch = g.patch();
    const std::size_t pos = g.positions();
    const std::size_t img_size = g.channels * g.height * g.width;

    auto cols = std::make_shared<std::vector<double>>(g.batch * patch * pos);
    std::vector<double> out(g.batch * g.filters * pos, 0.0);
    const double* x = input.data().data();
    const double* w = kernel.data().data();
    for (std::size_t n = 0; n < g.batch; ++n) {
        double* col = cols->data() + n * patch * pos;
        im2col(x + n * img_size, g, col);
        double* o = out.data() + n * g.filters * pos;
        if (bias != nullptr) {
            const auto b = bias->data();
            for (std::size_t f = 0; f < g.filters; ++f) std::fill(o + f * pos, o + (f + 1) * pos, b[f]);
        }
        detail::gemm_nn(g.filters, pos, patch, w, col, o);
    }

    std::vector<Tensor> inputs{input, kernel};
    if (bias != nullptr) inputs.push_back(*bias);
    auto kimpl = kernel.impl();
    return make_result(
        {g.batch, g.filters, g.out_h, g.out_w}, std::move(out), std::move(inputs),
        [g, cols, kimpl, img_size](std::span<const double> grad, std::span<std::vector<double>*> gi) {
            const std::size_t patch = g.patch();
            const std::size_t pos = g.positions();
            std::vector<double> dcol;
            if (gi[0]) dcol.resize(patch * pos);
            for (std::size_t n = 0; n < g.batch; ++n) {
                const double* go = grad.data() + n * g.filters * pos;
                const double* col = cols->data() + n * patch * pos;
                if (gi[1]) detail::gemm_nt(g.filters, patch, pos, go, col, gi[1]->data());
                if (gi.size() > 2 && gi[2]) {
                    auto& db = *gi[2];
                    for (std::size_t f = 0; f < g.filters; ++f) {
                        double s = 0.0;
                        for (std::size_t p = 0; p < pos; ++p) s += go[f * pos + p];
                        db[f] += s;
                    }
                }
                if (gi[0]) {
                    std::fill(dcol.begin(), dcol.end(), 0.0);
                    detail::gemm_tn(patch, pos, g.filters, kimpl->data.data(), go, dcol.data());
                    col2im(dcol.data(), g, gi[0]->data() + n * img_size);
                }
            }
        });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
    return conv2d_impl(input, kernel, nullptr, stride, padding);
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
    return conv2d_impl(input, kernel, &bias, stride, padding);
}

// ---------------------------------------------------------------------------
// Pooling / reshaping

Tensor maxpool2x2(const Tensor& input) {
    if (input.rank() != 4) {
        throw DimensionError("maxpool2x2: expected [N,C,H,W], got " + shape_to_string(input.shape()));
    }
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t oh = h / 2, ow = w / 2;
    if (oh == 0 || ow == 0) throw DimensionError("maxpool2x2: spatial extent below 2 in " + shape_to_string(input.shape()));

    std::vector<double> out(n * c * oh * ow);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    const auto x = input.data();
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const std::size_t base = plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
                std::size_t best = base + (2 * oy) * w + 2 * ox;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if (x[idx] > x[best]) best = idx;
                    }
                }
                out[o] = x[best];
                (*argmax)[o] = best;
            }
        }
    }
    return make_result({n, c, oh, ow}, std::move(out), {input},
                       [argmax](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           if (!gi[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[(*argmax)[i]] += g[i];
                       });
}

Tensor flatten(const Tensor& input) {
    if (input.rank() < 1) throw DimensionError("flatten: scalar input");
    const std::size_t n = input.dim(0);
    return input.reshape({n, input.numel() / n});
}

}  // namespace eae
