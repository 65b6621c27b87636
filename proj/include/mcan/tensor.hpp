#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mcan/rng.hpp"

namespace mcan {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major tensor of doubles. Gradient storage stays empty until a
// backward pass first touches it; empty grad means "all zeros so far".
class Tensor {
public:
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor(Shape s, std::vector<double> v, bool rg);

    static TensorPtr make(Shape s, std::vector<double> v, bool rg = false);
    static TensorPtr zeros(const Shape& s, bool rg = false);
    static TensorPtr full(const Shape& s, double value, bool rg = false);
    static TensorPtr scalar(double value, bool rg = false);
    static TensorPtr vec(std::vector<double> v, bool rg = false);          // shape [n]
    static TensorPtr row(std::vector<double> v, bool rg = false);          // shape [1, n]
    static TensorPtr uniform(const Shape& s, double lo, double hi, Rng& rng, bool rg = true);

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const;  // 2-D only
    std::size_t cols() const;  // 2-D only
    double item() const;       // single-element tensors only

    // Grad vector, allocated as zeros on first use.
    std::vector<double>& grad_ref();
    void zero_grad() { grad.clear(); }
    bool all_finite() const;
};

// Boolean mask with the same row-major layout as the tensor it applies to.
struct Mask {
    Shape shape;
    std::vector<std::uint8_t> on;

    static Mask ones(const Shape& s);
    static Mask vec(std::vector<std::uint8_t> flags);
    // [rows x cols] mask where row i is fully on iff row_flags[i]
    static Mask expand_rows(const std::vector<std::uint8_t>& row_flags, std::size_t cols);
    // [rows x cols] mask where column j is fully on iff col_flags[j]
    static Mask expand_cols(const std::vector<std::uint8_t>& col_flags, std::size_t rows);
    // [rows x cols] mask, on where both the row and the column flag are on
    static Mask outer(const std::vector<std::uint8_t>& row_flags,
                      const std::vector<std::uint8_t>& col_flags);

    std::size_t count_on() const;
    bool any_on() const { return count_on() > 0; }
};

// Records every differentiable op executed while the tape is the active one
// on this thread. Creation order is a topological order of the graph, so one
// reverse sweep in backward() computes all reachable gradients.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(std::vector<TensorPtr> inputs, TensorPtr output, std::function<void()> backward);

    // Seeds d(loss)/d(loss) = 1 and sweeps the records in reverse.
    void backward(const TensorPtr& loss);

    std::size_t size() const { return records_.size(); }
    void clear() { records_.clear(); }

private:
    struct Record {
        std::vector<TensorPtr> inputs;
        TensorPtr output;
        std::function<void()> backward;
    };
    std::vector<Record> records_;
    Tape* previous_ = nullptr;
};

// --- ops ------------------------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(const TensorPtr& x);

// Elementwise ops accept equal shapes, or a [n] / [1,n] vector against an
// [m,n] matrix, repeated along the leading axis. add/mul broadcast either
// side, sub broadcasts only its right operand.
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);

TensorPtr relu(const TensorPtr& x);
TensorPtr sigmoid(const TensorPtr& x);
TensorPtr tanh(const TensorPtr& x);

// Max-stabilized softmax along `axis`. Masked positions get exactly zero
// weight; a slice with no unmasked entry is an error.
TensorPtr softmax(const TensorPtr& x, int axis, const Mask* mask = nullptr);

TensorPtr reduce_sum(const TensorPtr& x, int axis, const Mask* mask = nullptr);
TensorPtr reduce_mean(const TensorPtr& x, int axis, const Mask* mask = nullptr);
// Ties route the gradient to the lowest unmasked index.
TensorPtr reduce_max(const TensorPtr& x, int axis, const Mask* mask = nullptr);

TensorPtr sum_all(const TensorPtr& x);

TensorPtr concat(const std::vector<TensorPtr>& parts, int axis);
TensorPtr slice(const TensorPtr& x, int axis, std::size_t start, std::size_t len);
TensorPtr reshape(const TensorPtr& x, const Shape& s);
TensorPtr repeat_rows(const TensorPtr& x, std::size_t n);
// Multiplies row i of x by the constant weights[i].
TensorPtr scale_rows(const TensorPtr& x, const std::vector<double>& weights);

// Inverted dropout: zero with probability `rate`, scale survivors by
// 1/(1-rate); identity when not training.
TensorPtr dropout(const TensorPtr& x, double rate, bool training, Rng& rng);

TensorPtr scale(const TensorPtr& x, double c);
TensorPtr add_const(const TensorPtr& x, double c);
TensorPtr log_clamped(const TensorPtr& x, double floor = 1e-12);

// Gathers rows of `table` at `ids`; scatter-adds gradients back when the
// table is trainable.
TensorPtr embedding_lookup(const TensorPtr& table, const std::vector<std::size_t>& ids);

}  // namespace mcan
