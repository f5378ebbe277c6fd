#include "patchnet/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace patchnet {

using detail::OpNode;
using detail::TensorImpl;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

size_t shape_numel(const Shape& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

// A finite sum implies every element is finite: NaN propagates, an Inf either
// survives or cancels to NaN.
bool all_finite(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return std::isfinite(s);
}

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<double> data) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return impl;
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from_data(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    return from_data(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("from_data: shape " + shape_str(shape) + " expects " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
    }
    if (!all_finite(data)) {
        throw NumericError("from_data: non-finite value in tensor of shape " + shape_str(shape));
    }
    auto impl = make_impl(std::move(shape), std::move(data));
    impl->requires_grad = requires_grad;
    impl->needs_grad = requires_grad;
    return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const {
    if (!impl_) throw Error("use of undefined tensor");
    return impl_->shape;
}

size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const {
    if (!impl_) throw Error("use of undefined tensor");
    return impl_->data;
}

std::span<double> Tensor::mutable_data() {
    if (!impl_) throw Error("use of undefined tensor");
    return impl_->data;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
    }
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw Error("grad: no gradient buffer present");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

// Builds the output tensor of an op and, when grad mode is on and any input
// participates in a graph, attaches a producer node. The caller fills in the
// node's backward closure afterwards via the returned pointer.
Tensor make_op_output(const char* name, Shape shape, std::vector<double> data,
                      std::vector<Tensor> inputs) {
    if (!all_finite(data)) {
        throw NumericError(std::string(name) + ": non-finite values in output of shape " +
                           shape_str(shape));
    }
    auto impl = make_impl(std::move(shape), std::move(data));
    if (g_grad_enabled) {
        bool track = false;
        for (const auto& in : inputs) {
            if (in.impl() && in.impl()->needs_grad) track = true;
        }
        if (track) {
            auto node = std::make_shared<OpNode>();
            node->name = name;
            for (auto& in : inputs) node->inputs.push_back(in.impl());
            impl->producer = node;
            impl->needs_grad = true;
        }
    }
    return Tensor(impl);
}

namespace {

// Shortcut: node attached to this output, or null when untracked.
std::shared_ptr<OpNode> node_of(const Tensor& t) { return t.impl()->producer; }

}  // namespace

double stable_sigmoid(double x) {
    double v;
    if (x >= 0.0) {
        v = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        v = e / (1.0 + e);
    }
    if (v <= 0.0) v = std::numeric_limits<double>::denorm_min();
    if (v >= 1.0) v = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    return v;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
    const Shape& xs = input.shape();
    const Shape& ws = weight.shape();
    if (xs.size() != 4 || ws.size() != 4) {
        throw ShapeError("conv2d: expected 4-d input/weight, got input " + shape_str(xs) +
                         " weight " + shape_str(ws));
    }
    if (bias.shape() != Shape{ws[0]}) {
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match Cout=" +
                         std::to_string(ws[0]));
    }
    if (xs[1] != ws[1]) {
        throw ShapeError("conv2d: input channels " + std::to_string(xs[1]) +
                         " != weight channels " + std::to_string(ws[1]));
    }
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
    const size_t B = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
    const size_t Cout = ws[0], kh = ws[2], kw = ws[3];
    if (H + 2 * static_cast<size_t>(padding) < kh || W + 2 * static_cast<size_t>(padding) < kw) {
        throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than padded input " + shape_str(xs) + " with padding " +
                         std::to_string(padding));
    }
    const size_t Ho = (H + 2 * padding - kh) / stride + 1;
    const size_t Wo = (W + 2 * padding - kw) / stride + 1;
    const size_t K = Cin * kh * kw;
    const size_t N = B * Ho * Wo;

    // im2col: one column per output position, rows in (ci,ky,kx) order to
    // match the row-major weight layout.
    auto cols = std::make_shared<Eigen::MatrixXd>(K, N);
    {
        const double* xd = input.data().data();
        for (size_t b = 0; b < B; ++b) {
            for (size_t oy = 0; oy < Ho; ++oy) {
                for (size_t ox = 0; ox < Wo; ++ox) {
                    const size_t n = (b * Ho + oy) * Wo + ox;
                    const long y0 = static_cast<long>(oy) * stride - padding;
                    const long x0 = static_cast<long>(ox) * stride - padding;
                    size_t k = 0;
                    for (size_t ci = 0; ci < Cin; ++ci) {
                        for (size_t ky = 0; ky < kh; ++ky) {
                            const long y = y0 + static_cast<long>(ky);
                            for (size_t kx = 0; kx < kw; ++kx, ++k) {
                                const long x = x0 + static_cast<long>(kx);
                                double v = 0.0;
                                if (y >= 0 && y < static_cast<long>(H) && x >= 0 &&
                                    x < static_cast<long>(W)) {
                                    v = xd[((b * Cin + ci) * H + y) * W + x];
                                }
                                (*cols)(k, n) = v;
                            }
                        }
                    }
                }
            }
        }
    }

    Eigen::Map<const RowMat> Wm(weight.data().data(), Cout, K);
    Eigen::MatrixXd outm = Wm * (*cols);  // Cout x N

    std::vector<double> out(B * Cout * Ho * Wo);
    const double* bd = bias.data().data();
    for (size_t n = 0; n < N; ++n) {
        const size_t b = n / (Ho * Wo);
        const size_t rem = n % (Ho * Wo);
        for (size_t co = 0; co < Cout; ++co) {
            out[(b * Cout + co) * Ho * Wo + rem] = outm(co, n) + bd[co];
        }
    }

    Tensor result = make_op_output("conv2d", {B, Cout, Ho, Wo}, std::move(out),
                                   {input, weight, bias});
    if (auto node = node_of(result)) {
        auto xi = input.impl();
        auto wi = weight.impl();
        auto bi = bias.impl();
        node->backward = [=](const std::vector<double>& gout) {
            Eigen::MatrixXd G(Cout, N);
            for (size_t n = 0; n < N; ++n) {
                const size_t b = n / (Ho * Wo);
                const size_t rem = n % (Ho * Wo);
                for (size_t co = 0; co < Cout; ++co) {
                    G(co, n) = gout[(b * Cout + co) * Ho * Wo + rem];
                }
            }
            if (wi->needs_grad) {
                wi->ensure_grad();
                RowMat GW = G * cols->transpose();  // Cout x K
                for (size_t co = 0; co < Cout; ++co)
                    for (size_t k = 0; k < K; ++k) wi->grad[co * K + k] += GW(co, k);
            }
            if (bi->needs_grad) {
                bi->ensure_grad();
                for (size_t co = 0; co < Cout; ++co) {
                    double s = 0.0;
                    for (size_t n = 0; n < N; ++n) s += G(co, n);
                    bi->grad[co] += s;
                }
            }
            if (xi->needs_grad) {
                xi->ensure_grad();
                Eigen::Map<const RowMat> Wmap(wi->data.data(), Cout, K);
                Eigen::MatrixXd Gc = Wmap.transpose() * G;  // K x N
                for (size_t n = 0; n < N; ++n) {
                    const size_t b = n / (Ho * Wo);
                    const size_t oy = (n % (Ho * Wo)) / Wo;
                    const size_t ox = n % Wo;
                    const long y0 = static_cast<long>(oy) * stride - padding;
                    const long x0 = static_cast<long>(ox) * stride - padding;
                    size_t k = 0;
                    for (size_t ci = 0; ci < Cin; ++ci) {
                        for (size_t ky = 0; ky < kh; ++ky) {
                            const long y = y0 + static_cast<long>(ky);
                            for (size_t kx = 0; kx < kw; ++kx, ++k) {
                                const long x = x0 + static_cast<long>(kx);
                                if (y >= 0 && y < static_cast<long>(H) && x >= 0 &&
                                    x < static_cast<long>(W)) {
                                    xi->grad[((b * Cin + ci) * H + y) * W + x] += Gc(k, n);
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return result;
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    Tensor result = make_op_output("relu", x.shape(), std::move(out), {x});
    if (auto node = node_of(result)) {
        auto xi = x.impl();
        node->backward = [=](const std::vector<double>& gout) {
            if (!xi->needs_grad) return;
            xi->ensure_grad();
            for (size_t i = 0; i < gout.size(); ++i) {
                if (xi->data[i] > 0.0) xi->grad[i] += gout[i];
            }
        };
    }
    return result;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (xs.size() != 2 || ws.size() != 2) {
        throw ShapeError("linear: expected 2-d input/weight, got " + shape_str(xs) + " and " +
                         shape_str(ws));
    }
    if (xs[1] != ws[1]) {
        throw ShapeError("linear: inner dimensions disagree: input " + shape_str(xs) +
                         " vs weight " + shape_str(ws));
    }
    if (bias.shape() != Shape{ws[0]}) {
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match O=" +
                         std::to_string(ws[0]));
    }
    const size_t B = xs[0], F = xs[1], O = ws[0];
    std::vector<double> out(B * O);
    {
        Eigen::Map<const RowMat> X(x.data().data(), B, F);
        Eigen::Map<const RowMat> Wm(weight.data().data(), O, F);
        RowMat Y = X * Wm.transpose();
        const double* bd = bias.data().data();
        for (size_t b = 0; b < B; ++b)
            for (size_t o = 0; o < O; ++o) out[b * O + o] = Y(b, o) + bd[o];
    }
    Tensor result = make_op_output("linear", {B, O}, std::move(out), {x, weight, bias});
    if (auto node = node_of(result)) {
        auto xi = x.impl();
        auto wi = weight.impl();
        auto bi = bias.impl();
        node->backward = [=](const std::vector<double>& gout) {
            Eigen::Map<const RowMat> G(gout.data(), B, O);
            if (xi->needs_grad) {
                xi->ensure_grad();
                Eigen::Map<const RowMat> Wm(wi->data.data(), O, F);
                RowMat GX = G * Wm;  // B x F
                for (size_t i = 0; i < B * F; ++i) xi->grad[i] += GX(i / F, i % F);
            }
            if (wi->needs_grad) {
                wi->ensure_grad();
                Eigen::Map<const RowMat> X(xi->data.data(), B, F);
                RowMat GW = G.transpose() * X;  // O x F
                for (size_t i = 0; i < O * F; ++i) wi->grad[i] += GW(i / F, i % F);
            }
            if (bi->needs_grad) {
                bi->ensure_grad();
                for (size_t o = 0; o < O; ++o) {
                    double s = 0.0;
                    for (size_t b = 0; b < B; ++b) s += gout[b * O + o];
                    bi->grad[o] += s;
                }
            }
        };
    }
    return result;
}

Tensor global_avg_pool(const Tensor& x) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) {
        throw ShapeError("global_avg_pool: expected 4-d input, got " + shape_str(xs));
    }
    const size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    if (H < 1 || W < 1) throw ShapeError("global_avg_pool: empty spatial plane " + shape_str(xs));
    const size_t plane = H * W;
    std::vector<double> out(B * C);
    const double* xd = x.data().data();
    for (size_t bc = 0; bc < B * C; ++bc) {
        double s = 0.0;
        for (size_t i = 0; i < plane; ++i) s += xd[bc * plane + i];
        out[bc] = s / static_cast<double>(plane);
    }
    Tensor result = make_op_output("global_avg_pool", {B, C}, std::move(out), {x});
    if (auto node = node_of(result)) {
        auto xi = x.impl();
        node->backward = [=](const std::vector<double>& gout) {
            if (!xi->needs_grad) return;
            xi->ensure_grad();
            const double inv = 1.0 / static_cast<double>(plane);
            for (size_t bc = 0; bc < B * C; ++bc) {
                const double g = gout[bc] * inv;
                for (size_t i = 0; i < plane; ++i) xi->grad[bc * plane + i] += g;
            }
        };
    }
    return result;
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.numel());
    const double* xd = x.data().data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(xd[i]);
    Tensor result = make_op_output("sigmoid", x.shape(), std::move(out), {x});
    if (auto node = node_of(result)) {
        auto xi = x.impl();
        auto yi = result.impl();
        node->backward = [=](const std::vector<double>& gout) {
            if (!xi->needs_grad) return;
            xi->ensure_grad();
            for (size_t i = 0; i < gout.size(); ++i) {
                const double s = yi->data[i];
                xi->grad[i] += gout[i] * s * (1.0 - s);
            }
        };
    }
    return result;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    if (logits.shape() != targets.shape()) {
        throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape()) +
                         " vs targets " + shape_str(targets.shape()));
    }
    const size_t n = logits.numel();
    if (n == 0) throw ShapeError("bce_with_logits: empty input");
    const double* xd = logits.data().data();
    const double* td = targets.data().data();
    for (size_t i = 0; i < n; ++i) {
        if (td[i] != 0.0 && td[i] != 1.0) {
            throw ConfigError("bce_with_logits: target at index " + std::to_string(i) +
                              " is " + std::to_string(td[i]) + ", must be 0 or 1");
        }
    }
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double x = xd[i];
        acc += std::max(x, 0.0) - x * td[i] + std::log1p(std::exp(-std::abs(x)));
    }
    std::vector<double> out{acc / static_cast<double>(n)};
    Tensor result = make_op_output("bce_with_logits", {1}, std::move(out), {logits, targets});
    if (auto node = node_of(result)) {
        auto xi = logits.impl();
        auto ti = targets.impl();
        node->backward = [=](const std::vector<double>& gout) {
            if (!xi->needs_grad) return;
            xi->ensure_grad();
            const double g = gout[0] / static_cast<double>(n);
            for (size_t i = 0; i < n; ++i) {
                xi->grad[i] += g * (stable_sigmoid(xi->data[i]) - ti->data[i]);
            }
        };
    }
    return result;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor result = make_op_output("sum", {1}, {acc}, {x});
    if (auto node = node_of(result)) {
        auto xi = x.impl();
        node->backward = [=](const std::vector<double>& gout) {
            if (!xi->needs_grad) return;
            xi->ensure_grad();
            for (double& g : xi->grad) g += gout[0];
        };
    }
    return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mul: shapes disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(a.numel());
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    Tensor result = make_op_output("mul", a.shape(), std::move(out), {a, b});
    if (auto node = node_of(result)) {
        auto ai = a.impl();
        auto bi = b.impl();
        node->backward = [=](const std::vector<double>& gout) {
            if (ai->needs_grad) {
                ai->ensure_grad();
                for (size_t i = 0; i < gout.size(); ++i) ai->grad[i] += gout[i] * bi->data[i];
            }
            if (bi->needs_grad) {
                bi->ensure_grad();
                for (size_t i = 0; i < gout.size(); ++i) bi->grad[i] += gout[i] * ai->data[i];
            }
        };
    }
    return result;
}

Tensor group_mean_rows(const Tensor& x, size_t group_size) {
    const Shape& xs = x.shape();
    if (xs.size() != 2) throw ShapeError("group_mean_rows: expected 2-d input, got " + shape_str(xs));
    if (group_size < 1 || xs[0] % group_size != 0) {
        throw ShapeError("group_mean_rows: rows " + std::to_string(xs[0]) +
                         " not divisible by group size " + std::to_string(group_size));
    }
    const size_t R = xs[0], C = xs[1], G = R / group_size;
    std::vector<double> out(G * C, 0.0);
    const double* xd = x.data().data();
    for (size_t g = 0; g < G; ++g) {
        for (size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (size_t j = 0; j < group_size; ++j) s += xd[(g * group_size + j) * C + c];
            out[g * C + c] = s / static_cast<double>(group_size);
        }
    }
    Tensor result = make_op_output("group_mean_rows", {G, C}, std::move(out), {x});
    if (auto node = node_of(result)) {
        auto xi = x.impl();
        node->backward = [=](const std::vector<double>& gout) {
            if (!xi->needs_grad) return;
            xi->ensure_grad();
            const double inv = 1.0 / static_cast<double>(group_size);
            for (size_t r = 0; r < R; ++r) {
                const size_t g = r / group_size;
                for (size_t c = 0; c < C; ++c) xi->grad[r * C + c] += gout[g * C + c] * inv;
            }
        };
    }
    return result;
}

Tensor select_scalar(const Tensor& x, size_t flat_index) {
    if (flat_index >= x.numel()) {
        throw ShapeError("select_scalar: index " + std::to_string(flat_index) +
                         " out of range for " + shape_str(x.shape()));
    }
    Tensor result = make_op_output("select_scalar", {1}, {x.data()[flat_index]}, {x});
    if (auto node = node_of(result)) {
        auto xi = x.impl();
        node->backward = [=](const std::vector<double>& gout) {
            if (!xi->needs_grad) return;
            xi->ensure_grad();
            xi->grad[flat_index] += gout[0];
        };
    }
    return result;
}

void backward(Tensor& loss) {
    if (!loss.defined()) throw Error("backward: undefined tensor");
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    auto root = loss.impl();
    if (!root->producer) throw Error("backward: loss is not connected to a graph");
    if (root->backward_done) {
        throw Error("backward: already called on this graph; rebuild the forward pass first");
    }

    // Iterative DFS producing a topological order of impls.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    struct Frame {
        TensorImpl* impl;
        size_t next_input;
    };
    std::vector<Frame> stack{{root.get(), 0}};
    visited.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        OpNode* node = f.impl->producer.get();
        const size_t arity = node ? node->inputs.size() : 0;
        if (f.next_input < arity) {
            TensorImpl* in = node->inputs[f.next_input++].get();
            if (in->producer && !visited.count(in)) {
                visited.insert(in);
                stack.push_back({in, 0});
            }
        } else {
            order.push_back(f.impl);
            stack.pop_back();
        }
    }
    // `order` is children-before-parents; run parents first.
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* impl = *it;
        if (!impl->producer || impl->grad.empty()) continue;
        impl->producer->backward(impl->grad);
    }
    root->backward_done = true;
}

}  // namespace patchnet
