#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mcan/params.hpp"
#include "mcan/tensor.hpp"

namespace mcan {

enum class Compression { Sum, NN, FM };
enum class AffinityKind { Factored, Bilinear, MlpConcat };

// Canonical cast order; feature slots follow it.
enum class CastKind { Align = 0, MaxPool = 1, MeanPool = 2, Intra = 3 };

const char* cast_name(CastKind kind);
const char* compression_name(Compression kind);
const char* affinity_name(AffinityKind kind);

struct CastSet {
    bool align = true;
    bool max_pool = true;
    bool mean_pool = true;
    bool intra = true;

    bool enabled(CastKind kind) const;
    void set(CastKind kind, bool on);
    std::size_t count() const;
    static const std::array<CastKind, 4>& order();
};

// Word-pair scorer shared by both sequences within one cast.
struct AffinityParams {
    AffinityKind kind = AffinityKind::Factored;
    TensorPtr w, b;             // factored: relu(x W + b) projections
    TensorPtr m;                // bilinear: q M d^T
    TensorPtr w1, b1, w2, b2;   // mlp over [q_i; d_j]
};

// Scalar reducer for one comparison vector; one per cast x composition.
struct CompressionParams {
    Compression kind = Compression::Sum;
    TensorPtr w, b;              // nn
    TensorPtr fm_w0, fm_w, fm_v; // fm
};

struct CastParams {
    CastKind kind = CastKind::Align;
    AffinityParams affinity;
    CompressionParams concat_comp, mul_comp, sub_comp;
};

struct AttentionConfig {
    std::size_t width = 0;           // encoded word width
    AffinityKind affinity = AffinityKind::Factored;
    std::size_t affinity_width = 0;  // 0 -> width
    Compression compression = Compression::FM;
    std::size_t fm_factors = 10;
    CastSet casts;
};

// Parameters for the enabled casts, in canonical order.
struct MultiCastParams {
    std::vector<CastParams> casts;
};

MultiCastParams make_cast_params(const AttentionConfig& config, ParamStore& store, Rng& rng);

using PosMask = std::vector<std::uint8_t>;

// s[i][j] scores word i of q against word j of d; [lq x ld].
TensorPtr affinity(const TensorPtr& q, const PosMask& qmask, const TensorPtr& d,
                   const PosMask& dmask, const AffinityParams& f);

// Extractive pooling: one [1 x width] vector per side, weighted by the
// softmax of each word's max (resp. mean) affinity over the other sequence.
std::pair<TensorPtr, TensorPtr> max_pool_coattention(const TensorPtr& s, const TensorPtr& q,
                                                     const PosMask& qmask, const TensorPtr& d,
                                                     const PosMask& dmask);
std::pair<TensorPtr, TensorPtr> mean_pool_coattention(const TensorPtr& s, const TensorPtr& q,
                                                      const PosMask& qmask, const TensorPtr& d,
                                                      const PosMask& dmask);

// Alignment pooling: first element holds, per q position, the d sub-phrase
// aligned to it ([lq x width]); second the q sub-phrase per d position.
std::pair<TensorPtr, TensorPtr> alignment_coattention(const TensorPtr& s, const TensorPtr& q,
                                                      const PosMask& qmask, const TensorPtr& d,
                                                      const PosMask& dmask);

TensorPtr intra_attention(const TensorPtr& x, const PosMask& mask, const AffinityParams& f);

struct Composed {
    TensorPtr cat;   // [xbar; x], width doubles
    TensorPtr had;   // xbar ⊙ x
    TensorPtr diff;  // xbar - x
};

Composed compose(const TensorPtr& x, const TensorPtr& xbar);

// All compressions map each row of [l x n] to one scalar, giving [l x 1].
TensorPtr compress_sum(const TensorPtr& rows);
TensorPtr compress_nn(const TensorPtr& rows, const CompressionParams& p);
TensorPtr compress_fm(const TensorPtr& rows, const CompressionParams& p);
TensorPtr compress(const TensorPtr& rows, const CompressionParams& p);

// Runs every enabled cast and assembles the per-word feature matrices
// ([lq x 3*casts], [ld x 3*casts]); columns follow the canonical cast order
// with concat, multiply, subtract inside each cast. Padded rows are zero.
// Returns {nullptr, nullptr} when no cast is enabled.
std::pair<TensorPtr, TensorPtr> multi_cast(const TensorPtr& q, const PosMask& qmask,
                                           const TensorPtr& d, const PosMask& dmask,
                                           const MultiCastParams& params);

}  // namespace mcan
