#include "leakgnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <utility>

#include "leakgnn/errors.hpp"

namespace leakgnn {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

// Returns the tape to record on, or nullptr when recording is unnecessary.
Tape* recording_tape(const Tensor& out) {
    Tape* t = g_active_tape;
    return (t != nullptr && out.requires_grad()) ? t : nullptr;
}

}  // namespace

namespace detail {

Tape* active_tape() { return g_active_tape; }

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

}  // namespace detail

// --- Tensor ---

Tensor::Tensor() : node_(std::make_shared<detail::TensorNode>()) {
    node_->shape = {0};
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values,
               bool requires_grad)
    : node_(std::make_shared<detail::TensorNode>()) {
    const std::size_t expect = shape_product(shape);
    if (values.size() != expect) {
        throw ShapeError("tensor construction: shape " + detail::shape_str(shape) +
                         " implies " + std::to_string(expect) + " values, got " +
                         std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->grad.assign(node_->values.size(), 0.0);
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    std::vector<double> v(shape_product(shape), 0.0);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    std::vector<double> v(shape_product(shape), value);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

std::size_t Tensor::rows() const {
    if (ndim() != 2) {
        throw ShapeError("rows() requires a 2-D tensor, got shape " +
                         detail::shape_str(shape()));
    }
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    if (ndim() != 2) {
        throw ShapeError("cols() requires a 2-D tensor, got shape " +
                         detail::shape_str(shape()));
    }
    return node_->shape[1];
}

const std::vector<double>& Tensor::grad() const {
    if (!node_->requires_grad) {
        throw ValidationError("gradient requested for a tensor that does not require gradients");
    }
    return node_->grad;
}

double Tensor::item() const {
    if (size() != 1) {
        throw ShapeError("item() requires a size-1 tensor, got shape " +
                         detail::shape_str(shape()));
    }
    return node_->values[0];
}

double Tensor::at(std::size_t i) const {
    if (i >= size()) {
        throw IndexError("flat index " + std::to_string(i) + " out of range for size " +
                         std::to_string(size()));
    }
    return node_->values[i];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    if (ndim() != 2) {
        throw ShapeError("at(r,c) requires a 2-D tensor, got shape " +
                         detail::shape_str(shape()));
    }
    if (r >= node_->shape[0] || c >= node_->shape[1]) {
        throw IndexError("index (" + std::to_string(r) + "," + std::to_string(c) +
                         ") out of range for shape " + detail::shape_str(shape()));
    }
    return node_->values[r * node_->shape[1] + c];
}

double Tensor::grad_at(std::size_t i) const {
    const auto& g = grad();
    if (i >= g.size()) {
        throw IndexError("gradient index " + std::to_string(i) + " out of range for size " +
                         std::to_string(g.size()));
    }
    return g[i];
}

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

// --- Tape ---

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

void Tape::add_step(std::shared_ptr<detail::TensorNode> result,
                    std::function<void()> backward_fn) {
    results_.push_back(std::move(result));
    steps_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ShapeError("backward requires a size-1 loss, got shape " +
                         detail::shape_str(loss.shape()));
    }
    // Intermediates recorded on this tape restart from zero; leaves keep
    // accumulating across backward calls.
    for (auto& n : results_) {
        if (n->requires_grad) std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
    auto ln = loss.node();
    if (!ln->requires_grad) return;
    ln->grad[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

void backward(const Tensor& loss) {
    Tape* t = g_active_tape;
    if (t == nullptr) throw ValidationError("backward called with no active tape");
    t->backward(loss);
}

// --- binary elementwise ops ---

namespace {

bool is_shape_suffix(const std::vector<std::size_t>& small,
                     const std::vector<std::size_t>& big) {
    if (small.size() >= big.size()) return false;
    const std::size_t off = big.size() - small.size();
    for (std::size_t i = 0; i < small.size(); ++i) {
        if (small[i] != big[off + i]) return false;
    }
    return true;
}

struct BinPlan {
    std::vector<std::size_t> shape;  // output shape
    std::size_t a_mod = 1;           // operand index = flat index % mod
    std::size_t b_mod = 1;
};

BinPlan plan_binary(const char* op, const Tensor& a, const Tensor& b) {
    const auto mod = [](std::size_t n) { return n == 0 ? std::size_t{1} : n; };
    if (a.shape() == b.shape()) return {a.shape(), mod(a.size()), mod(b.size())};
    if (b.size() == 1 || is_shape_suffix(b.shape(), a.shape()))
        return {a.shape(), mod(a.size()), mod(b.size())};
    if (a.size() == 1 || is_shape_suffix(a.shape(), b.shape()))
        return {b.shape(), mod(a.size()), mod(b.size())};
    throw ShapeError(std::string(op) + ": incompatible shapes " +
                     detail::shape_str(a.shape()) + " and " +
                     detail::shape_str(b.shape()));
}

Tensor binary_op(const char* name, const Tensor& a, const Tensor& b,
                 double (*fwd)(double, double),
                 double (*dfa)(double, double),
                 double (*dfb)(double, double)) {
    BinPlan plan = plan_binary(name, a, b);
    const std::size_t n = shape_product(plan.shape);
    std::vector<double> out(n);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = fwd(av[i % plan.a_mod], bv[i % plan.b_mod]);
    }
    Tensor result(plan.shape, std::move(out), a.requires_grad() || b.requires_grad());
    if (Tape* tape = recording_tape(result)) {
        auto an = a.node();
        auto bn = b.node();
        auto on = result.node();
        tape->add_step(on, [an, bn, on, plan, n, dfa, dfb]() {
            for (std::size_t i = 0; i < n; ++i) {
                const double x = an->values[i % plan.a_mod];
                const double y = bn->values[i % plan.b_mod];
                const double g = on->grad[i];
                if (an->requires_grad) an->grad[i % plan.a_mod] += g * dfa(x, y);
                if (bn->requires_grad) bn->grad[i % plan.b_mod] += g * dfb(x, y);
            }
        });
    }
    return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

// --- matmul ---

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) {
        throw ShapeError("matmul requires 2-D operands, got " +
                         detail::shape_str(a.shape()) + " and " +
                         detail::shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw ShapeError("matmul inner dimensions differ: " + detail::shape_str(a.shape()) +
                         " x " + detail::shape_str(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = bv.data() + p * n;
            double* orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    Tensor result({m, n}, std::move(out), a.requires_grad() || b.requires_grad());
    if (Tape* tape = recording_tape(result)) {
        auto an = a.node();
        auto bn = b.node();
        auto on = result.node();
        tape->add_step(on, [an, bn, on, m, k, n]() {
            if (an->requires_grad) {
                // dA = dOut * B^T
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* gout = on->grad.data() + i * n;
                        const double* brow = bn->values.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) acc += gout[j] * brow[j];
                        an->grad[i * k + p] += acc;
                    }
                }
            }
            if (bn->requires_grad) {
                // dB = A^T * dOut
                for (std::size_t i = 0; i < m; ++i) {
                    const double* gout = on->grad.data() + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = an->values[i * k + p];
                        if (aip == 0.0) continue;
                        double* brow = bn->grad.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) brow[j] += aip * gout[j];
                    }
                }
            }
        });
    }
    return result;
}

// --- unary elementwise ops ---

namespace {

// Unary op whose derivative is expressed in terms of input x and output y.
Tensor unary_op(const Tensor& x, double (*fwd)(double),
                double (*dfn)(double, double)) {
    std::vector<double> out(x.size());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
    Tensor result(x.shape(), std::move(out), x.requires_grad());
    if (Tape* tape = recording_tape(result)) {
        auto xn = x.node();
        auto on = result.node();
        tape->add_step(on, [xn, on, dfn]() {
            for (std::size_t i = 0; i < xn->values.size(); ++i) {
                xn->grad[i] += on->grad[i] * dfn(xn->values[i], on->values[i]);
            }
        });
    }
    return result;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor relu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
    std::vector<double> out(x.size());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = xv[i] > 0.0 ? xv[i] : negative_slope * xv[i];
    }
    Tensor result(x.shape(), std::move(out), x.requires_grad());
    if (Tape* tape = recording_tape(result)) {
        auto xn = x.node();
        auto on = result.node();
        tape->add_step(on, [xn, on, negative_slope]() {
            for (std::size_t i = 0; i < xn->values.size(); ++i) {
                xn->grad[i] += on->grad[i] * (xn->values[i] > 0.0 ? 1.0 : negative_slope);
            }
        });
    }
    return result;
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(x, &stable_sigmoid,
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::exp(v); },
        [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    const auto& xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        if (xv[i] <= 0.0) {
            throw DomainError("log requires strictly positive inputs, element " +
                              std::to_string(i) + " is " + std::to_string(xv[i]));
        }
    }
    return unary_op(
        x, [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.size());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * xv[i];
    Tensor result(x.shape(), std::move(out), x.requires_grad());
    if (Tape* tape = recording_tape(result)) {
        auto xn = x.node();
        auto on = result.node();
        tape->add_step(on, [xn, on, c]() {
            for (std::size_t i = 0; i < xn->values.size(); ++i) {
                xn->grad[i] += c * on->grad[i];
            }
        });
    }
    return result;
}

// --- shape ops ---

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
    if (shape_product(shape) != x.size()) {
        throw ShapeError("reshape from " + detail::shape_str(x.shape()) + " to " +
                         detail::shape_str(shape) + " changes element count");
    }
    Tensor result(std::move(shape), x.values(), x.requires_grad());
    if (Tape* tape = recording_tape(result)) {
        auto xn = x.node();
        auto on = result.node();
        tape->add_step(on, [xn, on]() {
            for (std::size_t i = 0; i < xn->values.size(); ++i) {
                xn->grad[i] += on->grad[i];
            }
        });
    }
    return result;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.rows() != b.rows()) {
        throw ShapeError("concat_cols requires 2-D tensors with equal rows, got " +
                         detail::shape_str(a.shape()) + " and " +
                         detail::shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), ca = a.cols(), cb = b.cols();
    std::vector<double> out(m * (ca + cb));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < ca; ++j) out[i * (ca + cb) + j] = a.values()[i * ca + j];
        for (std::size_t j = 0; j < cb; ++j) out[i * (ca + cb) + ca + j] = b.values()[i * cb + j];
    }
    Tensor result({m, ca + cb}, std::move(out), a.requires_grad() || b.requires_grad());
    if (Tape* tape = recording_tape(result)) {
        auto an = a.node();
        auto bn = b.node();
        auto on = result.node();
        tape->add_step(on, [an, bn, on, m, ca, cb]() {
            for (std::size_t i = 0; i < m; ++i) {
                if (an->requires_grad) {
                    for (std::size_t j = 0; j < ca; ++j) {
                        an->grad[i * ca + j] += on->grad[i * (ca + cb) + j];
                    }
                }
                if (bn->requires_grad) {
                    for (std::size_t j = 0; j < cb; ++j) {
                        bn->grad[i * cb + j] += on->grad[i * (ca + cb) + ca + j];
                    }
                }
            }
        });
    }
    return result;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows requires at least one tensor");
    const std::size_t d = parts[0].ndim() == 2 ? parts[0].cols() : 0;
    std::size_t total_rows = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.cols() != d) {
            throw ShapeError("concat_rows requires 2-D tensors with equal columns");
        }
        total_rows += p.rows();
        rg = rg || p.requires_grad();
    }
    std::vector<double> out;
    out.reserve(total_rows * d);
    for (const auto& p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    Tensor result({total_rows, d}, std::move(out), rg);
    if (Tape* tape = recording_tape(result)) {
        std::vector<std::shared_ptr<detail::TensorNode>> nodes;
        nodes.reserve(parts.size());
        for (const auto& p : parts) nodes.push_back(p.node());
        auto on = result.node();
        tape->add_step(on, [nodes, on]() {
            std::size_t off = 0;
            for (const auto& pn : nodes) {
                if (pn->requires_grad) {
                    for (std::size_t i = 0; i < pn->values.size(); ++i) {
                        pn->grad[i] += on->grad[off + i];
                    }
                }
                off += pn->values.size();
            }
        });
    }
    return result;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices) {
    if (x.ndim() != 1 && x.ndim() != 2) {
        throw ShapeError("gather_rows requires a 1-D or 2-D tensor, got " +
                         detail::shape_str(x.shape()));
    }
    const std::size_t n = x.shape()[0];
    const std::size_t d = x.ndim() == 2 ? x.shape()[1] : 1;
    for (std::size_t idx : indices) {
        if (idx >= n) {
            throw IndexError("gather_rows index " + std::to_string(idx) +
                             " out of range for " + std::to_string(n) + " rows");
        }
    }
    std::vector<double> out(indices.size() * d);
    for (std::size_t e = 0; e < indices.size(); ++e) {
        for (std::size_t j = 0; j < d; ++j) {
            out[e * d + j] = x.values()[indices[e] * d + j];
        }
    }
    std::vector<std::size_t> shape = x.ndim() == 2
        ? std::vector<std::size_t>{indices.size(), d}
        : std::vector<std::size_t>{indices.size()};
    Tensor result(std::move(shape), std::move(out), x.requires_grad());
    if (Tape* tape = recording_tape(result)) {
        auto xn = x.node();
        auto on = result.node();
        tape->add_step(on, [xn, on, indices, d]() {
            for (std::size_t e = 0; e < indices.size(); ++e) {
                for (std::size_t j = 0; j < d; ++j) {
                    xn->grad[indices[e] * d + j] += on->grad[e * d + j];
                }
            }
        });
    }
    return result;
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
    if (x.ndim() != 2) {
        throw ShapeError("scale_rows requires a 2-D tensor, got " +
                         detail::shape_str(x.shape()));
    }
    const std::size_t e_count = x.rows(), d = x.cols();
    if (s.size() != e_count) {
        throw ShapeError("scale_rows: scale has " + std::to_string(s.size()) +
                         " entries for " + std::to_string(e_count) + " rows");
    }
    std::vector<double> out(e_count * d);
    for (std::size_t e = 0; e < e_count; ++e) {
        const double se = s.values()[e];
        for (std::size_t j = 0; j < d; ++j) out[e * d + j] = x.values()[e * d + j] * se;
    }
    Tensor result({e_count, d}, std::move(out), x.requires_grad() || s.requires_grad());
    if (Tape* tape = recording_tape(result)) {
        auto xn = x.node();
        auto sn = s.node();
        auto on = result.node();
        tape->add_step(on, [xn, sn, on, e_count, d]() {
            for (std::size_t e = 0; e < e_count; ++e) {
                const double se = sn->values[e];
                double ds = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double g = on->grad[e * d + j];
                    if (xn->requires_grad) xn->grad[e * d + j] += g * se;
                    ds += g * xn->values[e * d + j];
                }
                if (sn->requires_grad) sn->grad[e] += ds;
            }
        });
    }
    return result;
}

// --- segment ops ---

namespace {

void check_segments(const char* op, const Tensor& x,
                    const std::vector<std::size_t>& segments,
                    std::size_t num_segments) {
    if (x.ndim() != 2) {
        throw ShapeError(std::string(op) + " requires a 2-D tensor, got " +
                         detail::shape_str(x.shape()));
    }
    if (segments.size() != x.rows()) {
        throw ShapeError(std::string(op) + ": " + std::to_string(segments.size()) +
                         " segment ids for " + std::to_string(x.rows()) + " rows");
    }
    for (std::size_t s : segments) {
        if (s >= num_segments) {
            throw IndexError(std::string(op) + ": segment id " + std::to_string(s) +
                             " out of range for " + std::to_string(num_segments) +
                             " segments");
        }
    }
}

}  // namespace

Tensor segment_reduce(const Tensor& x, const std::vector<std::size_t>& segments,
                      std::size_t num_segments, Reduce mode, bool* any_empty) {
    check_segments("segment_reduce", x, segments, num_segments);
    const std::size_t e_count = x.rows(), d = x.cols();
    std::vector<double> counts(num_segments, 0.0);
    for (std::size_t s : segments) counts[s] += 1.0;
    if (any_empty != nullptr) {
        *any_empty = std::any_of(counts.begin(), counts.end(),
                                 [](double c) { return c == 0.0; });
    }

    std::vector<double> out(num_segments * d, 0.0);
    std::vector<std::size_t> argmax;  // row index feeding each output element (Max only)
    if (mode == Reduce::Max) {
        argmax.assign(num_segments * d, std::numeric_limits<std::size_t>::max());
        std::vector<double> best(num_segments * d,
                                 -std::numeric_limits<double>::infinity());
        for (std::size_t e = 0; e < e_count; ++e) {
            const std::size_t s = segments[e];
            for (std::size_t j = 0; j < d; ++j) {
                const double v = x.values()[e * d + j];
                if (v > best[s * d + j]) {  // strict: ties keep the lowest row
                    best[s * d + j] = v;
                    argmax[s * d + j] = e;
                }
            }
        }
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = argmax[i] == std::numeric_limits<std::size_t>::max() ? 0.0 : best[i];
        }
    } else {
        for (std::size_t e = 0; e < e_count; ++e) {
            const std::size_t s = segments[e];
            for (std::size_t j = 0; j < d; ++j) {
                out[s * d + j] += x.values()[e * d + j];
            }
        }
        if (mode == Reduce::Mean) {
            for (std::size_t s = 0; s < num_segments; ++s) {
                if (counts[s] == 0.0) continue;
                for (std::size_t j = 0; j < d; ++j) out[s * d + j] /= counts[s];
            }
        }
    }

    Tensor result({num_segments, d}, std::move(out), x.requires_grad());
    if (Tape* tape = recording_tape(result)) {
        auto xn = x.node();
        auto on = result.node();
        auto segs = segments;
        tape->add_step(on, [xn, on, segs, counts, argmax, mode, e_count, d]() {
            if (mode == Reduce::Max) {
                for (std::size_t i = 0; i < argmax.size(); ++i) {
                    const std::size_t e = argmax[i];
                    if (e == std::numeric_limits<std::size_t>::max()) continue;
                    xn->grad[e * d + (i % d)] += on->grad[i];
                }
            } else {
                for (std::size_t e = 0; e < e_count; ++e) {
                    const std::size_t s = segs[e];
                    const double denom = mode == Reduce::Mean ? counts[s] : 1.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        xn->grad[e * d + j] += on->grad[s * d + j] / denom;
                    }
                }
            }
        });
    }
    return result;
}

Tensor segment_softmax(const Tensor& x, const std::vector<std::size_t>& segments,
                       std::size_t num_segments) {
    check_segments("segment_softmax", x, segments, num_segments);
    const std::size_t e_count = x.rows(), d = x.cols();
    std::vector<std::vector<std::size_t>> members(num_segments);
    for (std::size_t e = 0; e < e_count; ++e) members[segments[e]].push_back(e);

    std::vector<double> out(e_count * d, 0.0);
    for (const auto& rows_in_seg : members) {
        if (rows_in_seg.empty()) continue;
        for (std::size_t j = 0; j < d; ++j) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t e : rows_in_seg) mx = std::max(mx, x.values()[e * d + j]);
            double denom = 0.0;
            for (std::size_t e : rows_in_seg) {
                out[e * d + j] = std::exp(x.values()[e * d + j] - mx);
                denom += out[e * d + j];
            }
            for (std::size_t e : rows_in_seg) out[e * d + j] /= denom;
        }
    }

    Tensor result({e_count, d}, std::move(out), x.requires_grad());
    if (Tape* tape = recording_tape(result)) {
        auto xn = x.node();
        auto on = result.node();
        tape->add_step(on, [xn, on, members, d]() {
            for (const auto& rows_in_seg : members) {
                if (rows_in_seg.empty()) continue;
                for (std::size_t j = 0; j < d; ++j) {
                    double dot = 0.0;
                    for (std::size_t e : rows_in_seg) {
                        dot += on->values[e * d + j] * on->grad[e * d + j];
                    }
                    for (std::size_t e : rows_in_seg) {
                        const double y = on->values[e * d + j];
                        xn->grad[e * d + j] += y * (on->grad[e * d + j] - dot);
                    }
                }
            }
        });
    }
    return result;
}

// --- fused primitives ---

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.ndim() != 2) {
        throw ShapeError("layer_norm requires a 2-D input, got " +
                         detail::shape_str(x.shape()));
    }
    const std::size_t n = x.rows(), d = x.cols();
    if (gain.size() != d || bias.size() != d) {
        throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) +
                         " entries, got " + std::to_string(gain.size()) + " and " +
                         std::to_string(bias.size()));
    }
    if (d == 0) throw ShapeError("layer_norm requires at least one column");

    std::vector<double> xhat(n * d);
    std::vector<double> inv_std(n);
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x.values()[i * d + j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x.values()[i * d + j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[i * d + j] = (x.values()[i * d + j] - mu) * inv_std[i];
            out[i * d + j] = xhat[i * d + j] * gain.values()[j] + bias.values()[j];
        }
    }

    const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    Tensor result({n, d}, std::move(out), rg);
    if (Tape* tape = recording_tape(result)) {
        auto xn = x.node();
        auto gn = gain.node();
        auto bn = bias.node();
        auto on = result.node();
        tape->add_step(on, [xn, gn, bn, on, xhat, inv_std, n, d]() {
            for (std::size_t i = 0; i < n; ++i) {
                double mean_g = 0.0, mean_gx = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double go = on->grad[i * d + j];
                    if (gn->requires_grad) gn->grad[j] += go * xhat[i * d + j];
                    if (bn->requires_grad) bn->grad[j] += go;
                    const double g = go * gn->values[j];
                    mean_g += g;
                    mean_gx += g * xhat[i * d + j];
                }
                if (!xn->requires_grad) continue;
                mean_g /= static_cast<double>(d);
                mean_gx /= static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const double g = on->grad[i * d + j] * gn->values[j];
                    xn->grad[i * d + j] +=
                        (g - mean_g - xhat[i * d + j] * mean_gx) * inv_std[i];
                }
            }
        });
    }
    return result;
}

Tensor bce_from_logits(const Tensor& logits, const Tensor& targets, const Tensor& weight) {
    if (logits.shape() != targets.shape()) {
        throw ShapeError("bce_from_logits: logits " + detail::shape_str(logits.shape()) +
                         " and targets " + detail::shape_str(targets.shape()) + " differ");
    }
    const bool weighted = weight.size() > 0 && !(weight.ndim() == 1 && weight.shape()[0] == 0);
    if (weighted && weight.shape() != logits.shape()) {
        throw ShapeError("bce_from_logits: weight shape " + detail::shape_str(weight.shape()) +
                         " does not match logits " + detail::shape_str(logits.shape()));
    }
    const std::size_t n = logits.size();
    if (n == 0) throw ShapeError("bce_from_logits requires at least one element");
    for (std::size_t i = 0; i < n; ++i) {
        const double t = targets.values()[i];
        if (!(t >= 0.0 && t <= 1.0)) {
            throw DomainError("bce_from_logits: target " + std::to_string(t) +
                              " at element " + std::to_string(i) + " outside [0,1]");
        }
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = logits.values()[i];
        const double t = targets.values()[i];
        const double w = weighted ? weight.values()[i] : 1.0;
        acc += w * (std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::fabs(z))));
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    const bool rg = logits.requires_grad() || targets.requires_grad();
    Tensor result({1}, {acc * inv_n}, rg);
    if (Tape* tape = recording_tape(result)) {
        auto zn = logits.node();
        auto tn = targets.node();
        auto wn = weighted ? weight.node() : nullptr;
        auto on = result.node();
        tape->add_step(on, [zn, tn, wn, on, n, inv_n]() {
            const double go = on->grad[0];
            for (std::size_t i = 0; i < n; ++i) {
                const double z = zn->values[i];
                const double w = wn ? wn->values[i] : 1.0;
                if (zn->requires_grad) {
                    zn->grad[i] += go * w * (stable_sigmoid(z) - tn->values[i]) * inv_n;
                }
                if (tn->requires_grad) {
                    tn->grad[i] += go * w * (-z) * inv_n;
                }
            }
        });
    }
    return result;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    Tensor result({1}, {acc}, x.requires_grad());
    if (Tape* tape = recording_tape(result)) {
        auto xn = x.node();
        auto on = result.node();
        tape->add_step(on, [xn, on]() {
            for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[0];
        });
    }
    return result;
}

Tensor mean(const Tensor& x) {
    if (x.size() == 0) throw ShapeError("mean requires at least one element");
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    const double inv_n = 1.0 / static_cast<double>(x.size());
    Tensor result({1}, {acc * inv_n}, x.requires_grad());
    if (Tape* tape = recording_tape(result)) {
        auto xn = x.node();
        auto on = result.node();
        tape->add_step(on, [xn, on, inv_n]() {
            for (std::size_t i = 0; i < xn->grad.size(); ++i) {
                xn->grad[i] += on->grad[0] * inv_n;
            }
        });
    }
    return result;
}

Tensor binary_entropy(const Tensor& x) {
    constexpr double kEps = 1e-12;
    std::vector<double> out(x.size());
    std::vector<double> clamped(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double c = std::min(std::max(x.values()[i], kEps), 1.0 - kEps);
        clamped[i] = c;
        out[i] = -c * std::log(c) - (1.0 - c) * std::log(1.0 - c);
    }
    Tensor result(x.shape(), std::move(out), x.requires_grad());
    if (Tape* tape = recording_tape(result)) {
        auto xn = x.node();
        auto on = result.node();
        tape->add_step(on, [xn, on, clamped]() {
            for (std::size_t i = 0; i < clamped.size(); ++i) {
                xn->grad[i] += on->grad[i] * std::log((1.0 - clamped[i]) / clamped[i]);
            }
        });
    }
    return result;
}

// --- gradient verification ---

double finite_difference_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    std::vector<Tensor> inputs, double h) {
    // Deep-copy so perturbations never touch the caller's tensors.
    std::vector<Tensor> work;
    work.reserve(inputs.size());
    for (const auto& t : inputs) {
        work.emplace_back(t.shape(), t.values(), t.requires_grad());
    }

    {
        Tape tape;
        Tensor out = f(work);
        if (out.size() != 1) {
            throw ShapeError("finite_difference_check requires a size-1 output, got " +
                             detail::shape_str(out.shape()));
        }
        tape.backward(out);
    }

    double worst = 0.0;
    for (auto& t : work) {
        if (!t.requires_grad()) continue;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = t.values()[i];
            t.values()[i] = orig + h;
            const double fp = f(work).item();
            t.values()[i] = orig - h;
            const double fm = f(work).item();
            t.values()[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = t.grad()[i];
            const double disc = std::fabs(fd - ad);
            if (disc <= 1e-7) continue;
            worst = std::max(worst, disc / std::max(std::fabs(fd), std::fabs(ad)));
        }
    }
    return worst;
}

}  // namespace leakgnn
