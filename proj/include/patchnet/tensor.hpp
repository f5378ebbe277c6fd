#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "patchnet/error.hpp"

namespace patchnet {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct OpNode;

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;  // explicitly requested on leaves
    bool needs_grad = false;     // requires_grad, or an op output depending on one
    std::vector<double> grad;    // lazily allocated, same length as data
    std::shared_ptr<OpNode> producer;
    bool backward_done = false;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

// One recorded op of the define-by-run graph. `backward` accumulates into the
// grad buffers of `inputs` given the output's gradient.
struct OpNode {
    const char* name;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::function<void(const std::vector<double>& grad_out)> backward;
};

}  // namespace detail

// Dense row-major f64 tensor with reverse-mode autodiff. Values are immutable
// once the tensor participates in a graph; grad buffers and leaf parameters
// (via mutable_data, between steps) are the only mutation points. The graph
// is rebuilt on every forward pass.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    // Validates product(shape) == data.size() and that every value is finite.
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    size_t rank() const { return shape().size(); }
    size_t dim(size_t i) const { return shape().at(i); }
    size_t numel() const;

    std::span<const double> data() const;
    // For leaf parameters only (initialization and optimizer steps).
    std::span<double> mutable_data();
    double item() const;  // scalar tensors

    bool requires_grad() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    // Internal: used by ops and the backward engine.
    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;

    friend Tensor make_op_output(const char*, Shape, std::vector<double>,
                                 std::vector<Tensor>);
};

// RAII switch disabling graph construction on the current thread. Ops run
// under the guard produce plain tensors with no producers.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

// Numerically stable logistic function. Output is clamped into the open
// interval (0, 1) so downstream probability invariants hold even for inputs
// whose true sigmoid underflows f64.
double stable_sigmoid(double x);

// ---- operator set ----

// Cross-correlation: input [B,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride = 1, int padding = 0);
Tensor relu(const Tensor& x);
// x [B,F] . weight [O,F]^T + bias [O] -> [B,O]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
// [B,C,H,W] -> [B,C], arithmetic mean over each HxW plane.
Tensor global_avg_pool(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Mean over B*C of max(x,0) - x*t + log1p(exp(-|x|)). Targets must be 0/1.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
Tensor sum(const Tensor& x);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, equal shapes
// [G*k, C] -> [G, C]; row-major sequential mean over each group of k rows.
Tensor group_mean_rows(const Tensor& x, size_t group_size);
// Scalar pick by flat index (keeps the graph; used by Grad-CAM).
Tensor select_scalar(const Tensor& x, size_t flat_index);

// Reverse-mode sweep from a scalar loss. Gradients accumulate (+=) into every
// reachable tensor with needs_grad; repeated calls on the same graph are
// rejected.
void backward(Tensor& loss);

}  // namespace patchnet
