#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace leakgnn {

class Tensor;
class Tape;

namespace detail {

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;  // same size as values when requires_grad, else empty
    bool requires_grad = false;
};

Tape* active_tape();

}  // namespace detail

// Dense double tensor with value semantics; copies share the underlying node.
// Gradients live on the node and accumulate additively across backward passes
// for leaves; intermediate grads are zeroed at the start of each backward.
class Tensor {
public:
    Tensor();
    Tensor(std::vector<std::size_t> shape, std::vector<double> values,
           bool requires_grad = false);

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value,
                       bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->values.size(); }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t rows() const;  // first dim of a 2-D tensor
    std::size_t cols() const;  // second dim of a 2-D tensor

    const std::vector<double>& values() const { return node_->values; }
    std::vector<double>& values() { return node_->values; }
    const std::vector<double>& grad() const;
    bool requires_grad() const { return node_->requires_grad; }

    double item() const;  // value of a size-1 tensor
    double at(std::size_t i) const;
    double at(std::size_t r, std::size_t c) const;
    double grad_at(std::size_t i) const;

    void zero_grad();

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    std::shared_ptr<detail::TensorNode> node_;
};

// Gradient tape rebuilt on every forward pass.  Constructing a Tape makes it
// the active tape for the current thread; destruction restores the previous
// one, so tapes nest.  Operations record backward closures only while a tape
// is active and at least one input requires gradients.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Seeds d(loss)/d(loss) = 1 and replays recorded steps in reverse.
    // `loss` must be a size-1 tensor.
    void backward(const Tensor& loss);

    std::size_t num_steps() const { return steps_.size(); }

    void add_step(std::shared_ptr<detail::TensorNode> result,
                  std::function<void()> backward_fn);

private:
    std::vector<std::function<void()>> steps_;
    std::vector<std::shared_ptr<detail::TensorNode>> results_;
    Tape* previous_ = nullptr;
};

// Runs backward on the active tape; throws if no tape is active.
void backward(const Tensor& loss);

// --- elementwise and linear algebra ---

// Strict 2-D matrix product [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise ops accept equal shapes, a size-1 operand, or an operand whose
// shape is a trailing suffix of the other's (row-vector bias broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double negative_slope = 0.01);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // DomainError on any element <= 0
Tensor scale(const Tensor& x, double c);

// Same element count, new shape; values copied, gradient flows by identity.
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);

// 2-D concatenation: side by side (equal rows) / stacked (equal cols).
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const std::vector<Tensor>& parts);

// Row selection with duplicates allowed; gradient scatter-adds into x.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices);

// Multiplies row e of x [E,d] by s[e]; s is [E] or [E,1].
Tensor scale_rows(const Tensor& x, const Tensor& s);

// --- segment ops (message aggregation) ---

enum class Reduce { Sum, Mean, Max };

// Reduces rows of x [E,d] into [num_segments,d] by segment id.  Empty
// segments produce zeros; if `any_empty` is non-null it is set accordingly.
// Max ties route the gradient to the lowest contributing row index.
Tensor segment_reduce(const Tensor& x, const std::vector<std::size_t>& segments,
                      std::size_t num_segments, Reduce mode,
                      bool* any_empty = nullptr);

// Per-segment, per-column softmax over rows of x [E,d], max-stabilized.
Tensor segment_softmax(const Tensor& x, const std::vector<std::size_t>& segments,
                       std::size_t num_segments);

// --- fused primitives ---

// Per-row normalization of x [n,d] with population variance:
// (x - mean) / sqrt(var + eps) * gain + bias, gain and bias of shape [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Mean of w * (max(z,0) - z*t + log1p(exp(-|z|))) over all elements; the
// numerically stable binary cross-entropy on logits.  Targets must lie in
// [0,1].  `weight` is optional (empty Tensor), same shape, treated constant.
Tensor bce_from_logits(const Tensor& logits, const Tensor& targets,
                       const Tensor& weight = Tensor());

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Elementwise -x ln x - (1-x) ln(1-x), inputs clamped to [1e-12, 1-1e-12].
Tensor binary_entropy(const Tensor& x);

// --- gradient verification ---

// Compares tape gradients of f(inputs) (a size-1 output) against central
// finite differences with step h.  Per element the discrepancy counts as 0
// when below 1e-7 absolute, otherwise |fd-ad| / max(|fd|,|ad|).  Returns the
// maximum over all elements of all inputs with requires_grad.
double finite_difference_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    std::vector<Tensor> inputs, double h = 1e-5);

namespace detail {
std::string shape_str(const std::vector<std::size_t>& shape);
}

}  // namespace leakgnn
