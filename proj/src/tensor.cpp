#include "mcan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mcan {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> v, bool rg)
    : shape(std::move(s)), values(std::move(v)), requires_grad(rg) {
    if (numel(shape) != values.size()) {
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                    std::to_string(values.size()) + " values");
    }
    for (std::size_t d : shape) {
        if (d == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_str(shape));
    }
}

TensorPtr Tensor::make(Shape s, std::vector<double> v, bool rg) {
    return std::make_shared<Tensor>(std::move(s), std::move(v), rg);
}

TensorPtr Tensor::zeros(const Shape& s, bool rg) {
    return make(s, std::vector<double>(numel(s), 0.0), rg);
}

TensorPtr Tensor::full(const Shape& s, double value, bool rg) {
    return make(s, std::vector<double>(numel(s), value), rg);
}

TensorPtr Tensor::scalar(double value, bool rg) { return make({1}, {value}, rg); }

TensorPtr Tensor::vec(std::vector<double> v, bool rg) {
    Shape s{v.size()};
    return make(std::move(s), std::move(v), rg);
}

TensorPtr Tensor::row(std::vector<double> v, bool rg) {
    Shape s{1, v.size()};
    return make(std::move(s), std::move(v), rg);
}

TensorPtr Tensor::uniform(const Shape& s, double lo, double hi, Rng& rng, bool rg) {
    std::vector<double> v(numel(s));
    for (double& x : v) x = rng.uniform(lo, hi);
    return make(s, std::move(v), rg);
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw std::invalid_argument("rows(): tensor is not 2-D: " + shape_str(shape));
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw std::invalid_argument("cols(): tensor is not 2-D: " + shape_str(shape));
    return shape[1];
}

double Tensor::item() const {
    if (values.size() != 1) {
        throw std::invalid_argument("item(): tensor has " + std::to_string(values.size()) +
                                    " elements");
    }
    return values[0];
}

std::vector<double>& Tensor::grad_ref() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
}

bool Tensor::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// --- Mask -------------------------------------------------------------------

Mask Mask::ones(const Shape& s) {
    return Mask{s, std::vector<std::uint8_t>(numel(s), 1)};
}

Mask Mask::vec(std::vector<std::uint8_t> flags) {
    Shape s{flags.size()};
    return Mask{std::move(s), std::move(flags)};
}

Mask Mask::expand_rows(const std::vector<std::uint8_t>& row_flags, std::size_t cols) {
    Mask m{{row_flags.size(), cols}, std::vector<std::uint8_t>(row_flags.size() * cols)};
    for (std::size_t i = 0; i < row_flags.size(); ++i) {
        std::fill_n(m.on.begin() + static_cast<std::ptrdiff_t>(i * cols), cols, row_flags[i]);
    }
    return m;
}

Mask Mask::expand_cols(const std::vector<std::uint8_t>& col_flags, std::size_t rows) {
    Mask m{{rows, col_flags.size()}, std::vector<std::uint8_t>(rows * col_flags.size())};
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < col_flags.size(); ++j) {
            m.on[i * col_flags.size() + j] = col_flags[j];
        }
    }
    return m;
}

Mask Mask::outer(const std::vector<std::uint8_t>& row_flags,
                 const std::vector<std::uint8_t>& col_flags) {
    Mask m{{row_flags.size(), col_flags.size()},
           std::vector<std::uint8_t>(row_flags.size() * col_flags.size())};
    for (std::size_t i = 0; i < row_flags.size(); ++i) {
        for (std::size_t j = 0; j < col_flags.size(); ++j) {
            m.on[i * col_flags.size() + j] = static_cast<std::uint8_t>(row_flags[i] && col_flags[j]);
        }
    }
    return m;
}

std::size_t Mask::count_on() const {
    std::size_t n = 0;
    for (std::uint8_t f : on) n += f ? 1 : 0;
    return n;
}

// --- Tape ---------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
    previous_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::vector<TensorPtr> inputs, TensorPtr output, std::function<void()> backward) {
    records_.push_back(Record{std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const TensorPtr& loss) {
    if (loss->size() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss->shape));
    }
    loss->grad_ref()[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        if (it->output->grad.empty()) continue;  // nothing flowed into this op
        it->backward();
    }
}

// --- op helpers -----------------------------------------------------------------

namespace {

bool tracking(std::initializer_list<TensorPtr> inputs) {
    if (Tape::active() == nullptr) return false;
    for (const auto& t : inputs) {
        if (t->requires_grad) return true;
    }
    return false;
}

void check_axis(const TensorPtr& x, int axis) {
    if (axis < 0 || static_cast<std::size_t>(axis) >= x->rank()) {
        throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for " +
                                    shape_str(x->shape));
    }
}

void check_mask(const TensorPtr& x, const Mask* mask, const char* op) {
    if (mask != nullptr && mask->shape != x->shape) {
        throw std::invalid_argument(std::string(op) + ": mask shape " + shape_str(mask->shape) +
                                    " does not match " + shape_str(x->shape));
    }
}

// Views a 1-D or 2-D tensor as a set of slices along `axis`: `count` slices of
// `len` entries, where entry k of slice s lives at s*outer_stride + k*stride.
struct AxisView {
    std::size_t count, len, stride, outer_stride;
};

AxisView axis_view(const TensorPtr& x, int axis) {
    check_axis(x, axis);
    if (x->rank() == 1) return {1, x->shape[0], 1, 0};
    if (x->rank() != 2) {
        throw std::invalid_argument("axis ops support rank 1 or 2, got " + shape_str(x->shape));
    }
    const std::size_t r = x->shape[0], c = x->shape[1];
    if (axis == 0) return {c, r, c, 1};  // slices are columns
    return {r, c, 1, c};                 // slices are rows
}

// Broadcast resolution for elementwise ops: equal shapes, or vector repeated
// along the leading axis of a matrix.
struct Bcast {
    std::size_t m = 0, n = 0;
    int vector_side = 0;  // 0 = none, 1 = a is the vector, 2 = b is the vector
};

bool is_rowlike(const Shape& s, std::size_t n) {
    return (s.size() == 1 && s[0] == n) || (s.size() == 2 && s[0] == 1 && s[1] == n);
}

Bcast resolve_bcast(const TensorPtr& a, const TensorPtr& b, const char* op, bool allow_a_vector) {
    if (a->shape == b->shape) return {0, 0, 0};
    if (b->rank() <= 2 && a->rank() == 2 && is_rowlike(b->shape, a->shape[1])) {
        return {a->shape[0], a->shape[1], 2};
    }
    if (allow_a_vector && a->rank() <= 2 && b->rank() == 2 && is_rowlike(a->shape, b->shape[1])) {
        return {b->shape[0], b->shape[1], 1};
    }
    throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a->shape) + " and " +
                                shape_str(b->shape) + " are not broadcastable");
}

enum class EwKind { Add, Sub, Mul };

TensorPtr elementwise(EwKind kind, const TensorPtr& a, const TensorPtr& b, const char* op) {
    const Bcast bc = resolve_bcast(a, b, op, kind != EwKind::Sub);
    std::vector<double> out;
    Shape out_shape;
    if (bc.vector_side == 0) {
        out_shape = a->shape;
        out.resize(a->size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double x = a->values[i], y = b->values[i];
            out[i] = kind == EwKind::Add ? x + y : kind == EwKind::Sub ? x - y : x * y;
        }
    } else {
        const TensorPtr& mat = bc.vector_side == 1 ? b : a;
        const TensorPtr& vec = bc.vector_side == 1 ? a : b;
        out_shape = mat->shape;
        out.resize(mat->size());
        for (std::size_t i = 0; i < bc.m; ++i) {
            for (std::size_t j = 0; j < bc.n; ++j) {
                const double av = bc.vector_side == 1 ? vec->values[j] : mat->values[i * bc.n + j];
                const double bv = bc.vector_side == 2 ? vec->values[j] : mat->values[i * bc.n + j];
                out[i * bc.n + j] =
                    kind == EwKind::Add ? av + bv : kind == EwKind::Sub ? av - bv : av * bv;
            }
        }
    }
    const bool track = tracking({a, b});
    auto result = Tensor::make(std::move(out_shape), std::move(out), track);
    if (track) {
        Tape::active()->record({a, b}, result, [kind, a, b, result, bc]() {
            const auto& g = result->grad;
            auto accum = [&](const TensorPtr& t, bool is_a) {
                if (!t->requires_grad) return;
                auto& tg = t->grad_ref();
                const bool is_vector = (bc.vector_side == 1 && is_a) || (bc.vector_side == 2 && !is_a);
                const double sign = (!is_a && kind == EwKind::Sub) ? -1.0 : 1.0;
                if (kind != EwKind::Mul) {
                    if (!is_vector) {
                        for (std::size_t i = 0; i < g.size(); ++i) tg[i] += sign * g[i];
                    } else {
                        for (std::size_t i = 0; i < bc.m; ++i) {
                            for (std::size_t j = 0; j < bc.n; ++j) tg[j] += sign * g[i * bc.n + j];
                        }
                    }
                    return;
                }
                const TensorPtr& other = is_a ? b : a;
                if (bc.vector_side == 0) {
                    for (std::size_t i = 0; i < g.size(); ++i) tg[i] += g[i] * other->values[i];
                    return;
                }
                const bool other_is_vector = !is_vector;
                for (std::size_t i = 0; i < bc.m; ++i) {
                    for (std::size_t j = 0; j < bc.n; ++j) {
                        const double ov =
                            other_is_vector ? other->values[j] : other->values[i * bc.n + j];
                        if (is_vector) {
                            tg[j] += g[i * bc.n + j] * ov;
                        } else {
                            tg[i * bc.n + j] += g[i * bc.n + j] * ov;
                        }
                    }
                }
            };
            accum(a, true);
            accum(b, false);
        });
    }
    return result;
}

enum class ActKind { Relu, Sigmoid, Tanh };

TensorPtr activation(ActKind kind, const TensorPtr& x) {
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x->values[i];
        switch (kind) {
            case ActKind::Relu:
                out[i] = v > 0.0 ? v : 0.0;
                break;
            case ActKind::Sigmoid:
                // branch keeps exp() off large positive arguments
                out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                  : std::exp(v) / (1.0 + std::exp(v));
                break;
            case ActKind::Tanh:
                out[i] = std::tanh(v);
                break;
        }
    }
    const bool track = tracking({x});
    auto result = Tensor::make(x->shape, std::move(out), track);
    if (track) {
        Tape::active()->record({x}, result, [kind, x, result]() {
            if (!x->requires_grad) return;
            auto& xg = x->grad_ref();
            const auto& g = result->grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double y = result->values[i];
                switch (kind) {
                    case ActKind::Relu:
                        xg[i] += x->values[i] > 0.0 ? g[i] : 0.0;
                        break;
                    case ActKind::Sigmoid:
                        xg[i] += g[i] * y * (1.0 - y);
                        break;
                    case ActKind::Tanh:
                        xg[i] += g[i] * (1.0 - y * y);
                        break;
                }
            }
        });
    }
    return result;
}

enum class RedKind { Sum, Mean, Max };

TensorPtr reduce(RedKind kind, const TensorPtr& x, int axis, const Mask* mask, const char* op) {
    check_mask(x, mask, op);
    const AxisView v = axis_view(x, axis);
    Shape out_shape = x->rank() == 1 ? Shape{1} : Shape{v.count};
    std::vector<double> out(v.count, 0.0);
    std::vector<std::size_t> argmax(kind == RedKind::Max ? v.count : 0, 0);
    std::vector<std::size_t> counts(v.count, 0);
    for (std::size_t s = 0; s < v.count; ++s) {
        double acc = 0.0;
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_k = 0, cnt = 0;
        for (std::size_t k = 0; k < v.len; ++k) {
            const std::size_t idx = s * v.outer_stride + k * v.stride;
            if (mask != nullptr && !mask->on[idx]) continue;
            const double val = x->values[idx];
            acc += val;
            if (val > best) {
                best = val;
                best_k = k;
            }
            ++cnt;
        }
        if (cnt == 0) {
            throw std::invalid_argument(std::string(op) + ": fully masked slice " +
                                        std::to_string(s));
        }
        counts[s] = cnt;
        switch (kind) {
            case RedKind::Sum:
                out[s] = acc;
                break;
            case RedKind::Mean:
                out[s] = acc / static_cast<double>(cnt);
                break;
            case RedKind::Max:
                out[s] = best;
                argmax[s] = best_k;
                break;
        }
    }
    const bool track = tracking({x});
    Mask mask_copy;
    const bool has_mask = mask != nullptr;
    if (track && has_mask) mask_copy = *mask;
    auto result = Tensor::make(std::move(out_shape), std::move(out), track);
    if (track) {
        Tape::active()->record(
            {x}, result,
            [kind, x, result, v, has_mask, mask_copy, argmax, counts]() {
                if (!x->requires_grad) return;
                auto& xg = x->grad_ref();
                const auto& g = result->grad;
                for (std::size_t s = 0; s < v.count; ++s) {
                    if (kind == RedKind::Max) {
                        xg[s * v.outer_stride + argmax[s] * v.stride] += g[s];
                        continue;
                    }
                    const double share =
                        kind == RedKind::Mean ? g[s] / static_cast<double>(counts[s]) : g[s];
                    for (std::size_t k = 0; k < v.len; ++k) {
                        const std::size_t idx = s * v.outer_stride + k * v.stride;
                        if (has_mask && !mask_copy.on[idx]) continue;
                        xg[idx] += share;
                    }
                }
            });
    }
    return result;
}

}  // namespace

// --- ops -----------------------------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->rank() != 2 || b->rank() != 2 || a->shape[1] != b->shape[0]) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a->shape) + " x " +
                                    shape_str(b->shape));
    }
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
            const double av = a->values[i * k + t];
            for (std::size_t j = 0; j < n; ++j) {
                out[i * n + j] += av * b->values[t * n + j];
            }
        }
    }
    const bool track = tracking({a, b});
    auto result = Tensor::make({m, n}, std::move(out), track);
    if (track) {
        Tape::active()->record({a, b}, result, [a, b, result, m, k, n]() {
            const auto& g = result->grad;
            if (a->requires_grad) {
                auto& ag = a->grad_ref();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gv = g[i * n + j];
                        for (std::size_t t = 0; t < k; ++t) {
                            ag[i * k + t] += gv * b->values[t * n + j];
                        }
                    }
                }
            }
            if (b->requires_grad) {
                auto& bg = b->grad_ref();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t t = 0; t < k; ++t) {
                        const double av = a->values[i * k + t];
                        for (std::size_t j = 0; j < n; ++j) {
                            bg[t * n + j] += av * g[i * n + j];
                        }
                    }
                }
            }
        });
    }
    return result;
}

TensorPtr transpose(const TensorPtr& x) {
    if (x->rank() != 2) {
        throw std::invalid_argument("transpose: expected 2-D, got " + shape_str(x->shape));
    }
    const std::size_t r = x->shape[0], c = x->shape[1];
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x->values[i * c + j];
    }
    const bool track = tracking({x});
    auto result = Tensor::make({c, r}, std::move(out), track);
    if (track) {
        Tape::active()->record({x}, result, [x, result, r, c]() {
            if (!x->requires_grad) return;
            auto& xg = x->grad_ref();
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) xg[i * c + j] += result->grad[j * r + i];
            }
        });
    }
    return result;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) { return elementwise(EwKind::Add, a, b, "add"); }
TensorPtr sub(const TensorPtr& a, const TensorPtr& b) { return elementwise(EwKind::Sub, a, b, "sub"); }
TensorPtr mul(const TensorPtr& a, const TensorPtr& b) { return elementwise(EwKind::Mul, a, b, "mul"); }

TensorPtr relu(const TensorPtr& x) { return activation(ActKind::Relu, x); }
TensorPtr sigmoid(const TensorPtr& x) { return activation(ActKind::Sigmoid, x); }
TensorPtr tanh(const TensorPtr& x) { return activation(ActKind::Tanh, x); }

TensorPtr softmax(const TensorPtr& x, int axis, const Mask* mask) {
    check_mask(x, mask, "softmax");
    const AxisView v = axis_view(x, axis);
    std::vector<double> out(x->size(), 0.0);
    for (std::size_t s = 0; s < v.count; ++s) {
        double hi = -std::numeric_limits<double>::infinity();
        std::size_t cnt = 0;
        for (std::size_t k = 0; k < v.len; ++k) {
            const std::size_t idx = s * v.outer_stride + k * v.stride;
            if (mask != nullptr && !mask->on[idx]) continue;
            hi = std::max(hi, x->values[idx]);
            ++cnt;
        }
        if (cnt == 0) {
            throw std::invalid_argument("softmax: fully masked slice " + std::to_string(s));
        }
        double z = 0.0;
        for (std::size_t k = 0; k < v.len; ++k) {
            const std::size_t idx = s * v.outer_stride + k * v.stride;
            if (mask != nullptr && !mask->on[idx]) continue;
            out[idx] = std::exp(x->values[idx] - hi);
            z += out[idx];
        }
        for (std::size_t k = 0; k < v.len; ++k) {
            const std::size_t idx = s * v.outer_stride + k * v.stride;
            if (mask != nullptr && !mask->on[idx]) continue;
            out[idx] /= z;
        }
    }
    const bool track = tracking({x});
    Mask mask_copy;
    const bool has_mask = mask != nullptr;
    if (track && has_mask) mask_copy = *mask;
    auto result = Tensor::make(x->shape, std::move(out), track);
    if (track) {
        Tape::active()->record({x}, result, [x, result, v, has_mask, mask_copy]() {
            if (!x->requires_grad) return;
            auto& xg = x->grad_ref();
            const auto& g = result->grad;
            const auto& y = result->values;
            for (std::size_t s = 0; s < v.count; ++s) {
                double dot = 0.0;
                for (std::size_t k = 0; k < v.len; ++k) {
                    const std::size_t idx = s * v.outer_stride + k * v.stride;
                    if (has_mask && !mask_copy.on[idx]) continue;
                    dot += y[idx] * g[idx];
                }
                for (std::size_t k = 0; k < v.len; ++k) {
                    const std::size_t idx = s * v.outer_stride + k * v.stride;
                    if (has_mask && !mask_copy.on[idx]) continue;
                    xg[idx] += y[idx] * (g[idx] - dot);
                }
            }
        });
    }
    return result;
}

TensorPtr reduce_sum(const TensorPtr& x, int axis, const Mask* mask) {
    return reduce(RedKind::Sum, x, axis, mask, "reduce_sum");
}
TensorPtr reduce_mean(const TensorPtr& x, int axis, const Mask* mask) {
    return reduce(RedKind::Mean, x, axis, mask, "reduce_mean");
}
TensorPtr reduce_max(const TensorPtr& x, int axis, const Mask* mask) {
    return reduce(RedKind::Max, x, axis, mask, "reduce_max");
}

TensorPtr sum_all(const TensorPtr& x) {
    double acc = 0.0;
    for (double v : x->values) acc += v;
    const bool track = tracking({x});
    auto result = Tensor::make({1}, {acc}, track);
    if (track) {
        Tape::active()->record({x}, result, [x, result]() {
            if (!x->requires_grad) return;
            auto& xg = x->grad_ref();
            const double g = result->grad[0];
            for (double& gv : xg) gv += g;
        });
    }
    return result;
}

TensorPtr concat(const std::vector<TensorPtr>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const std::size_t rank = parts[0]->rank();
    if (axis < 0 || static_cast<std::size_t>(axis) >= rank) {
        throw std::invalid_argument("concat: axis " + std::to_string(axis) + " out of range");
    }
    for (const auto& p : parts) {
        if (p->rank() != rank) throw std::invalid_argument("concat: mixed ranks");
        for (std::size_t d = 0; d < rank; ++d) {
            if (d != static_cast<std::size_t>(axis) && p->shape[d] != parts[0]->shape[d]) {
                throw std::invalid_argument("concat: extent mismatch at axis " + std::to_string(d) +
                                            ": " + shape_str(p->shape) + " vs " +
                                            shape_str(parts[0]->shape));
            }
        }
    }
    if (rank > 2) throw std::invalid_argument("concat: rank > 2 unsupported");

    Shape out_shape = parts[0]->shape;
    std::size_t total = 0;
    for (const auto& p : parts) total += p->shape[static_cast<std::size_t>(axis)];
    out_shape[static_cast<std::size_t>(axis)] = total;

    std::vector<double> out(numel(out_shape));
    std::vector<std::size_t> offsets(parts.size(), 0);
    if (rank == 1 || axis == 0) {
        // rows (or the whole vectors) stack back to back
        std::size_t pos = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            offsets[p] = pos;
            std::copy(parts[p]->values.begin(), parts[p]->values.end(), out.begin() + static_cast<std::ptrdiff_t>(pos));
            pos += parts[p]->size();
        }
    } else {
        const std::size_t r = out_shape[0];
        std::size_t col = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            offsets[p] = col;
            const std::size_t c = parts[p]->shape[1];
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    out[i * total + col + j] = parts[p]->values[i * c + j];
                }
            }
            col += c;
        }
    }
    bool track = false;
    if (Tape::active() != nullptr) {
        for (const auto& p : parts) track = track || p->requires_grad;
    }
    auto result = Tensor::make(std::move(out_shape), std::move(out), track);
    if (track) {
        Tape::active()->record(parts, result, [parts, result, axis, rank, offsets, total]() {
            const auto& g = result->grad;
            for (std::size_t p = 0; p < parts.size(); ++p) {
                if (!parts[p]->requires_grad) continue;
                auto& pg = parts[p]->grad_ref();
                if (rank == 1 || axis == 0) {
                    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g[offsets[p] + i];
                } else {
                    const std::size_t r = parts[p]->shape[0], c = parts[p]->shape[1];
                    for (std::size_t i = 0; i < r; ++i) {
                        for (std::size_t j = 0; j < c; ++j) {
                            pg[i * c + j] += g[i * total + offsets[p] + j];
                        }
                    }
                }
            }
        });
    }
    return result;
}

TensorPtr slice(const TensorPtr& x, int axis, std::size_t start, std::size_t len) {
    check_axis(x, axis);
    if (x->rank() > 2) throw std::invalid_argument("slice: rank > 2 unsupported");
    const std::size_t extent = x->shape[static_cast<std::size_t>(axis)];
    if (len == 0 || start + len > extent) {
        throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + len) + ") exceeds extent " +
                                    std::to_string(extent));
    }
    Shape out_shape = x->shape;
    out_shape[static_cast<std::size_t>(axis)] = len;
    std::vector<double> out(numel(out_shape));
    const std::size_t c = x->rank() == 2 ? x->shape[1] : 1;
    if (x->rank() == 1 || axis == 0) {
        std::copy(x->values.begin() + static_cast<std::ptrdiff_t>(start * c),
                  x->values.begin() + static_cast<std::ptrdiff_t>((start + len) * c), out.begin());
    } else {
        const std::size_t r = x->shape[0];
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < len; ++j) out[i * len + j] = x->values[i * c + start + j];
        }
    }
    const bool track = tracking({x});
    auto result = Tensor::make(std::move(out_shape), std::move(out), track);
    if (track) {
        Tape::active()->record({x}, result, [x, result, axis, start, len, c]() {
            if (!x->requires_grad) return;
            auto& xg = x->grad_ref();
            const auto& g = result->grad;
            if (x->rank() == 1 || axis == 0) {
                for (std::size_t i = 0; i < g.size(); ++i) xg[start * c + i] += g[i];
            } else {
                const std::size_t r = x->shape[0];
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < len; ++j) xg[i * c + start + j] += g[i * len + j];
                }
            }
        });
    }
    return result;
}

TensorPtr reshape(const TensorPtr& x, const Shape& s) {
    if (numel(s) != x->size()) {
        throw std::invalid_argument("reshape: " + shape_str(x->shape) + " to " + shape_str(s) +
                                    " changes element count");
    }
    const bool track = tracking({x});
    auto result = Tensor::make(s, x->values, track);
    if (track) {
        Tape::active()->record({x}, result, [x, result]() {
            if (!x->requires_grad) return;
            auto& xg = x->grad_ref();
            for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += result->grad[i];
        });
    }
    return result;
}

TensorPtr repeat_rows(const TensorPtr& x, std::size_t n) {
    if (!(x->rank() == 1 || (x->rank() == 2 && x->shape[0] == 1))) {
        throw std::invalid_argument("repeat_rows: expected [n] or [1,n], got " +
                                    shape_str(x->shape));
    }
    const std::size_t c = x->size();
    std::vector<double> out(n * c);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(x->values.begin(), x->values.end(), out.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    const bool track = tracking({x});
    auto result = Tensor::make({n, c}, std::move(out), track);
    if (track) {
        Tape::active()->record({x}, result, [x, result, n, c]() {
            if (!x->requires_grad) return;
            auto& xg = x->grad_ref();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < c; ++j) xg[j] += result->grad[i * c + j];
            }
        });
    }
    return result;
}

TensorPtr scale_rows(const TensorPtr& x, const std::vector<double>& weights) {
    if (x->rank() != 2 || x->shape[0] != weights.size()) {
        throw std::invalid_argument("scale_rows: need [" + std::to_string(weights.size()) +
                                    " x n], got " + shape_str(x->shape));
    }
    const std::size_t r = x->shape[0], c = x->shape[1];
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x->values[i * c + j] * weights[i];
    }
    const bool track = tracking({x});
    auto result = Tensor::make(x->shape, std::move(out), track);
    if (track) {
        Tape::active()->record({x}, result, [x, result, weights, r, c]() {
            if (!x->requires_grad) return;
            auto& xg = x->grad_ref();
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) xg[i * c + j] += result->grad[i * c + j] * weights[i];
            }
        });
    }
    return result;
}

TensorPtr dropout(const TensorPtr& x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw std::invalid_argument("dropout: rate " + std::to_string(rate) + " outside [0, 1)");
    }
    if (!training || rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x->size());
    for (double& m : mask) m = rng.uniform01() < rate ? 0.0 : keep_scale;
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->values[i] * mask[i];
    const bool track = tracking({x});
    auto result = Tensor::make(x->shape, std::move(out), track);
    if (track) {
        Tape::active()->record({x}, result, [x, result, mask]() {
            if (!x->requires_grad) return;
            auto& xg = x->grad_ref();
            for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += result->grad[i] * mask[i];
        });
    }
    return result;
}

TensorPtr scale(const TensorPtr& x, double c) {
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->values[i] * c;
    const bool track = tracking({x});
    auto result = Tensor::make(x->shape, std::move(out), track);
    if (track) {
        Tape::active()->record({x}, result, [x, result, c]() {
            if (!x->requires_grad) return;
            auto& xg = x->grad_ref();
            for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += result->grad[i] * c;
        });
    }
    return result;
}

TensorPtr add_const(const TensorPtr& x, double c) {
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->values[i] + c;
    const bool track = tracking({x});
    auto result = Tensor::make(x->shape, std::move(out), track);
    if (track) {
        Tape::active()->record({x}, result, [x, result]() {
            if (!x->requires_grad) return;
            auto& xg = x->grad_ref();
            for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += result->grad[i];
        });
    }
    return result;
}

TensorPtr log_clamped(const TensorPtr& x, double floor) {
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(x->values[i], floor));
    const bool track = tracking({x});
    auto result = Tensor::make(x->shape, std::move(out), track);
    if (track) {
        Tape::active()->record({x}, result, [x, result, floor]() {
            if (!x->requires_grad) return;
            auto& xg = x->grad_ref();
            for (std::size_t i = 0; i < xg.size(); ++i) {
                if (x->values[i] > floor) xg[i] += result->grad[i] / x->values[i];
            }
        });
    }
    return result;
}

TensorPtr embedding_lookup(const TensorPtr& table, const std::vector<std::size_t>& ids) {
    if (table->rank() != 2) {
        throw std::invalid_argument("embedding_lookup: table must be 2-D, got " +
                                    shape_str(table->shape));
    }
    if (ids.empty()) throw std::invalid_argument("embedding_lookup: empty id list");
    const std::size_t v = table->shape[0], d = table->shape[1];
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= v) {
            throw std::invalid_argument("embedding_lookup: id " + std::to_string(ids[i]) +
                                        " out of range " + std::to_string(v));
        }
        std::copy_n(table->values.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                    out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    const bool track = tracking({table});
    auto result = Tensor::make({ids.size(), d}, std::move(out), track);
    if (track) {
        Tape::active()->record({table}, result, [table, result, ids, d]() {
            if (!table->requires_grad) return;
            auto& tg = table->grad_ref();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                for (std::size_t j = 0; j < d; ++j) tg[ids[i] * d + j] += result->grad[i * d + j];
            }
        });
    }
    return result;
}

}  // namespace mcan
