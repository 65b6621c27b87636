#include "mcan/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace mcan {

namespace {

std::size_t mask_count(const PosMask& m) {
    std::size_t n = 0;
    for (auto f : m) n += f ? 1 : 0;
    return n;
}

void check_sequence(const TensorPtr& x, const PosMask& mask, const char* side) {
    if (x->rank() != 2 || x->shape[0] != mask.size()) {
        throw std::invalid_argument(std::string("attention: ") + side + " shape " +
                                    shape_str(x->shape) + " does not match mask length " +
                                    std::to_string(mask.size()));
    }
    if (mask_count(mask) == 0) {
        throw std::invalid_argument(std::string("attention: empty ") + side + " sequence");
    }
}

// F(x) for the factored form; rows of x map to rows of the projection
TensorPtr project(const TensorPtr& x, const AffinityParams& f) {
    return relu(add(matmul(x, f.w), f.b));
}

std::vector<double> mask_to_weights(const PosMask& m) {
    std::vector<double> w(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) w[i] = m[i] ? 1.0 : 0.0;
    return w;
}

}  // namespace

const char* cast_name(CastKind kind) {
    switch (kind) {
        case CastKind::Align: return "align";
        case CastKind::MaxPool: return "max";
        case CastKind::MeanPool: return "mean";
        case CastKind::Intra: return "intra";
    }
    return "?";
}

const char* compression_name(Compression kind) {
    switch (kind) {
        case Compression::Sum: return "sm";
        case Compression::NN: return "nn";
        case Compression::FM: return "fm";
    }
    return "?";
}

const char* affinity_name(AffinityKind kind) {
    switch (kind) {
        case AffinityKind::Factored: return "factored";
        case AffinityKind::Bilinear: return "bilinear";
        case AffinityKind::MlpConcat: return "mlp";
    }
    return "?";
}

bool CastSet::enabled(CastKind kind) const {
    switch (kind) {
        case CastKind::Align: return align;
        case CastKind::MaxPool: return max_pool;
        case CastKind::MeanPool: return mean_pool;
        case CastKind::Intra: return intra;
    }
    return false;
}

void CastSet::set(CastKind kind, bool on) {
    switch (kind) {
        case CastKind::Align: align = on; break;
        case CastKind::MaxPool: max_pool = on; break;
        case CastKind::MeanPool: mean_pool = on; break;
        case CastKind::Intra: intra = on; break;
    }
}

std::size_t CastSet::count() const {
    std::size_t n = 0;
    for (CastKind k : order()) n += enabled(k) ? 1 : 0;
    return n;
}

const std::array<CastKind, 4>& CastSet::order() {
    static const std::array<CastKind, 4> kOrder{CastKind::Align, CastKind::MaxPool,
                                                CastKind::MeanPool, CastKind::Intra};
    return kOrder;
}

MultiCastParams make_cast_params(const AttentionConfig& config, ParamStore& store, Rng& rng) {
    if (config.width == 0) throw std::invalid_argument("make_cast_params: width must be positive");
    const std::size_t w = config.width;
    const std::size_t aw = config.affinity_width == 0 ? w : config.affinity_width;
    const double aff_bound = 1.0 / std::sqrt(static_cast<double>(w));

    MultiCastParams out;
    for (CastKind kind : CastSet::order()) {
        if (!config.casts.enabled(kind)) continue;
        CastParams cast;
        cast.kind = kind;
        const std::string base = std::string("cast.") + cast_name(kind);

        cast.affinity.kind = config.affinity;
        switch (config.affinity) {
            case AffinityKind::Factored:
                cast.affinity.w = store.create(base + ".affinity.w", {w, aw}, -aff_bound, aff_bound, rng);
                cast.affinity.b = store.create_zeros(base + ".affinity.b", {aw});
                break;
            case AffinityKind::Bilinear:
                cast.affinity.m = store.create(base + ".affinity.m", {w, w}, -aff_bound, aff_bound, rng);
                break;
            case AffinityKind::MlpConcat: {
                const double bound2 = 1.0 / std::sqrt(static_cast<double>(2 * w));
                cast.affinity.w1 = store.create(base + ".affinity.w1", {2 * w, aw}, -bound2, bound2, rng);
                cast.affinity.b1 = store.create_zeros(base + ".affinity.b1", {aw});
                cast.affinity.w2 = store.create(base + ".affinity.w2", {aw, 1},
                                                -1.0 / std::sqrt(static_cast<double>(aw)),
                                                1.0 / std::sqrt(static_cast<double>(aw)), rng);
                cast.affinity.b2 = store.create_zeros(base + ".affinity.b2", {1});
                break;
            }
        }

        auto make_comp = [&](const char* comp, std::size_t n) {
            CompressionParams p;
            p.kind = config.compression;
            const std::string cbase = base + ".fc." + comp;
            switch (config.compression) {
                case Compression::Sum:
                    break;
                case Compression::NN:
                    p.w = store.create(cbase + ".w", {n, 1}, -0.05, 0.05, rng);
                    p.b = store.create_zeros(cbase + ".b", {1});
                    break;
                case Compression::FM:
                    p.fm_w0 = store.create_zeros(cbase + ".w0", {1});
                    p.fm_w = store.create(cbase + ".w", {n, 1}, -0.05, 0.05, rng);
                    p.fm_v = store.create(cbase + ".v", {n, config.fm_factors}, -0.05, 0.05, rng);
                    break;
            }
            return p;
        };
        cast.concat_comp = make_comp("concat", 2 * w);
        cast.mul_comp = make_comp("mul", w);
        cast.sub_comp = make_comp("sub", w);
        out.casts.push_back(std::move(cast));
    }
    return out;
}

TensorPtr affinity(const TensorPtr& q, const PosMask& qmask, const TensorPtr& d,
                   const PosMask& dmask, const AffinityParams& f) {
    check_sequence(q, qmask, "query");
    check_sequence(d, dmask, "document");
    switch (f.kind) {
        case AffinityKind::Factored:
            return matmul(project(q, f), transpose(project(d, f)));
        case AffinityKind::Bilinear:
            return matmul(matmul(q, f.m), transpose(d));
        case AffinityKind::MlpConcat: {
            // one row of s per q position: score q_i paired with every d word
            const std::size_t lq = q->shape[0], ld = d->shape[0];
            std::vector<TensorPtr> rows;
            rows.reserve(lq);
            for (std::size_t i = 0; i < lq; ++i) {
                auto qi = repeat_rows(slice(q, 0, i, 1), ld);
                auto hidden = relu(add(matmul(concat({qi, d}, 1), f.w1), f.b1));
                rows.push_back(transpose(add(matmul(hidden, f.w2), f.b2)));
            }
            return concat(rows, 0);
        }
    }
    throw std::invalid_argument("affinity: unknown kind");
}

namespace {

std::pair<TensorPtr, TensorPtr> extractive_pool(bool use_max, const TensorPtr& s,
                                                const TensorPtr& q, const PosMask& qmask,
                                                const TensorPtr& d, const PosMask& dmask) {
    const std::size_t lq = q->shape[0], ld = d->shape[0];
    if (s->rank() != 2 || s->shape[0] != lq || s->shape[1] != ld) {
        throw std::invalid_argument("coattention: affinity shape " + shape_str(s->shape) +
                                    " does not match sequences");
    }
    // reductions mask only the opposite side, so padded rows stay reducible;
    // their weights are zeroed by the softmax mask afterwards
    Mask cols = Mask::expand_cols(dmask, lq);
    Mask rows = Mask::expand_rows(qmask, ld);
    Mask qvalid = Mask::vec(qmask);
    Mask dvalid = Mask::vec(dmask);

    auto per_q = use_max ? reduce_max(s, 1, &cols) : reduce_mean(s, 1, &cols);
    auto per_d = use_max ? reduce_max(s, 0, &rows) : reduce_mean(s, 0, &rows);
    auto qw = softmax(per_q, 0, &qvalid);
    auto dw = softmax(per_d, 0, &dvalid);
    auto pooled_q = matmul(reshape(qw, {1, lq}), q);
    auto pooled_d = matmul(reshape(dw, {1, ld}), d);
    return {pooled_q, pooled_d};
}

}  // namespace

std::pair<TensorPtr, TensorPtr> max_pool_coattention(const TensorPtr& s, const TensorPtr& q,
                                                     const PosMask& qmask, const TensorPtr& d,
                                                     const PosMask& dmask) {
    return extractive_pool(true, s, q, qmask, d, dmask);
}

std::pair<TensorPtr, TensorPtr> mean_pool_coattention(const TensorPtr& s, const TensorPtr& q,
                                                      const PosMask& qmask, const TensorPtr& d,
                                                      const PosMask& dmask) {
    return extractive_pool(false, s, q, qmask, d, dmask);
}

std::pair<TensorPtr, TensorPtr> alignment_coattention(const TensorPtr& s, const TensorPtr& q,
                                                      const PosMask& qmask, const TensorPtr& d,
                                                      const PosMask& dmask) {
    const std::size_t lq = q->shape[0], ld = d->shape[0];
    if (s->rank() != 2 || s->shape[0] != lq || s->shape[1] != ld) {
        throw std::invalid_argument("coattention: affinity shape " + shape_str(s->shape) +
                                    " does not match sequences");
    }
    Mask cols = Mask::expand_cols(dmask, lq);
    Mask rows = Mask::expand_rows(qmask, ld);
    // per q word: blend of d words; per d word: blend of q words
    auto aligned_q = matmul(softmax(s, 1, &cols), d);
    auto aligned_d = matmul(transpose(softmax(s, 0, &rows)), q);
    return {aligned_q, aligned_d};
}

TensorPtr intra_attention(const TensorPtr& x, const PosMask& mask, const AffinityParams& f) {
    auto s = affinity(x, mask, x, mask, f);
    Mask cols = Mask::expand_cols(mask, x->shape[0]);
    return matmul(softmax(s, 1, &cols), x);
}

Composed compose(const TensorPtr& x, const TensorPtr& xbar) {
    if (x->rank() != 2 || xbar->rank() != 2 || x->shape != xbar->shape) {
        throw std::invalid_argument("compose: widths differ, " + shape_str(xbar->shape) + " vs " +
                                    shape_str(x->shape));
    }
    return Composed{concat({xbar, x}, 1), mul(xbar, x), sub(xbar, x)};
}

TensorPtr compress_sum(const TensorPtr& rows) {
    return reshape(reduce_sum(rows, 1), {rows->shape[0], 1});
}

TensorPtr compress_nn(const TensorPtr& rows, const CompressionParams& p) {
    if (p.w->shape[0] != rows->shape[1]) {
        throw std::invalid_argument("compress_nn: expected width " + std::to_string(p.w->shape[0]) +
                                    ", got " + shape_str(rows->shape));
    }
    return relu(add(matmul(rows, p.w), p.b));
}

TensorPtr compress_fm(const TensorPtr& rows, const CompressionParams& p) {
    if (p.fm_w->shape[0] != rows->shape[1]) {
        throw std::invalid_argument("compress_fm: expected width " +
                                    std::to_string(p.fm_w->shape[0]) + ", got " +
                                    shape_str(rows->shape));
    }
    auto linear = matmul(rows, p.fm_w);
    // O(nk) identity: sum_{i<j} <v_i, v_j> x_i x_j
    //   = 1/2 * sum_f [ (sum_i v_if x_i)^2 - sum_i v_if^2 x_i^2 ]
    auto xv = matmul(rows, p.fm_v);
    auto x2v2 = matmul(mul(rows, rows), mul(p.fm_v, p.fm_v));
    auto pairwise = scale(reduce_sum(sub(mul(xv, xv), x2v2), 1), 0.5);
    return add(add(linear, reshape(pairwise, {rows->shape[0], 1})), p.fm_w0);
}

TensorPtr compress(const TensorPtr& rows, const CompressionParams& p) {
    switch (p.kind) {
        case Compression::Sum: return compress_sum(rows);
        case Compression::NN: return compress_nn(rows, p);
        case Compression::FM: return compress_fm(rows, p);
    }
    throw std::invalid_argument("compress: unknown kind");
}

std::pair<TensorPtr, TensorPtr> multi_cast(const TensorPtr& q, const PosMask& qmask,
                                           const TensorPtr& d, const PosMask& dmask,
                                           const MultiCastParams& params) {
    if (params.casts.empty()) return {nullptr, nullptr};
    check_sequence(q, qmask, "query");
    check_sequence(d, dmask, "document");
    const std::size_t lq = q->shape[0], ld = d->shape[0];

    std::vector<TensorPtr> q_cols, d_cols;
    for (const CastParams& cast : params.casts) {
        TensorPtr xbar_q, xbar_d;
        switch (cast.kind) {
            case CastKind::Align: {
                auto s = affinity(q, qmask, d, dmask, cast.affinity);
                std::tie(xbar_q, xbar_d) = alignment_coattention(s, q, qmask, d, dmask);
                break;
            }
            case CastKind::MaxPool:
            case CastKind::MeanPool: {
                auto s = affinity(q, qmask, d, dmask, cast.affinity);
                auto pooled = cast.kind == CastKind::MaxPool
                                  ? max_pool_coattention(s, q, qmask, d, dmask)
                                  : mean_pool_coattention(s, q, qmask, d, dmask);
                xbar_q = repeat_rows(pooled.first, lq);
                xbar_d = repeat_rows(pooled.second, ld);
                break;
            }
            case CastKind::Intra:
                xbar_q = intra_attention(q, qmask, cast.affinity);
                xbar_d = intra_attention(d, dmask, cast.affinity);
                break;
        }
        Composed cq = compose(q, xbar_q);
        Composed cd = compose(d, xbar_d);
        q_cols.push_back(compress(cq.cat, cast.concat_comp));
        q_cols.push_back(compress(cq.had, cast.mul_comp));
        q_cols.push_back(compress(cq.diff, cast.sub_comp));
        d_cols.push_back(compress(cd.cat, cast.concat_comp));
        d_cols.push_back(compress(cd.had, cast.mul_comp));
        d_cols.push_back(compress(cd.diff, cast.sub_comp));
    }
    auto zq = scale_rows(concat(q_cols, 1), mask_to_weights(qmask));
    auto zd = scale_rows(concat(d_cols, 1), mask_to_weights(dmask));
    return {zq, zd};
}

}  // namespace mcan
