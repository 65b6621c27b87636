#include "mcan/model.hpp"

#include <cmath>
#include <stdexcept>

namespace mcan {

namespace {

HighwayParams make_highway(const std::string& base, std::size_t in, std::size_t out,
                           ParamStore& store, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    HighwayParams p;
    p.h_w = store.create(base + ".h_w", {in, out}, -bound, bound, rng);
    p.h_b = store.create_zeros(base + ".h_b", {out});
    p.t_w = store.create(base + ".t_w", {in, out}, -bound, bound, rng);
    p.t_b = store.create_zeros(base + ".t_b", {out});
    if (in != out) {
        p.p_w = store.create(base + ".p_w", {in, out}, -bound, bound, rng);
        p.p_b = store.create_zeros(base + ".p_b", {out});
    }
    return p;
}

}  // namespace

TensorPtr highway_layer(const TensorPtr& x, const HighwayParams& p) {
    auto transform = relu(add(matmul(x, p.h_w), p.h_b));
    auto gate = sigmoid(add(matmul(x, p.t_w), p.t_b));
    auto carry = p.p_w ? relu(add(matmul(x, p.p_w), p.p_b)) : x;
    if (!p.p_w && x->shape[1] != static_cast<std::size_t>(p.h_w->shape[1])) {
        throw std::invalid_argument("highway_layer: width change needs a carry projection");
    }
    auto keep = sub(Tensor::full(gate->shape, 1.0), gate);
    return add(mul(transform, gate), mul(keep, carry));
}

TensorPtr lstm_encode(const TensorPtr& x, const PosMask& mask, const LstmParams& p) {
    if (x->rank() != 2 || x->shape[0] != mask.size()) {
        throw std::invalid_argument("lstm_encode: input " + shape_str(x->shape) +
                                    " does not match mask length " + std::to_string(mask.size()));
    }
    if (x->shape[1] != p.w_ih->shape[0]) {
        throw std::invalid_argument("lstm_encode: input width " + std::to_string(x->shape[1]) +
                                    " does not match weights " + shape_str(p.w_ih->shape));
    }
    const std::size_t len = x->shape[0];
    const std::size_t hidden = p.hidden;
    TensorPtr h = Tensor::zeros({1, hidden});
    TensorPtr c = Tensor::zeros({1, hidden});
    std::vector<TensorPtr> states;
    states.reserve(len);
    for (std::size_t t = 0; t < len; ++t) {
        if (!mask[t]) {
            states.push_back(h);  // padded step: state carries over
            continue;
        }
        auto xt = slice(x, 0, t, 1);
        auto gates = add(add(matmul(xt, p.w_ih), matmul(h, p.w_hh)), p.b);
        auto in_gate = sigmoid(slice(gates, 1, 0, hidden));
        auto forget_gate = sigmoid(slice(gates, 1, hidden, hidden));
        auto candidate = mcan::tanh(slice(gates, 1, 2 * hidden, hidden));
        auto out_gate = sigmoid(slice(gates, 1, 3 * hidden, hidden));
        c = add(mul(forget_gate, c), mul(in_gate, candidate));
        h = mul(out_gate, mcan::tanh(c));
        states.push_back(h);
    }
    return concat(states, 0);
}

TensorPtr meanmax_pool(const TensorPtr& h, const PosMask& mask) {
    if (h->rank() != 2 || h->shape[0] != mask.size()) {
        throw std::invalid_argument("meanmax_pool: input " + shape_str(h->shape) +
                                    " does not match mask length " + std::to_string(mask.size()));
    }
    Mask rows = Mask::expand_rows(mask, h->shape[1]);
    auto mean = reduce_mean(h, 0, &rows);
    auto peak = reduce_max(h, 0, &rows);
    return reshape(concat({mean, peak}, 0), {1, 2 * h->shape[1]});
}

Model::Model(ModelConfig config, EmbeddingTable embeddings, Rng& init_rng)
    : config_(std::move(config)), embeddings_(std::move(embeddings)) {
    if (config_.embed_dim == 0) config_.embed_dim = embeddings_.dim;
    if (config_.embed_dim != embeddings_.dim) {
        throw std::invalid_argument("model: embed_dim " + std::to_string(config_.embed_dim) +
                                    " does not match embedding table width " +
                                    std::to_string(embeddings_.dim));
    }
    if (config_.lstm_hidden == 0 || config_.head_width == 0) {
        throw std::invalid_argument("model: widths must be positive");
    }
    if (config_.dropout < 0.0 || config_.dropout >= 1.0) {
        throw std::invalid_argument("model: dropout must lie in [0, 1)");
    }

    if (config_.use_highway) {
        encoder_ = make_highway("enc.hw", config_.embed_dim, config_.encoded_width(), store_,
                                init_rng);
    }

    AttentionConfig att;
    att.width = config_.encoded_width();
    att.affinity = config_.affinity;
    att.affinity_width = config_.affinity_width;
    att.compression = config_.compression;
    att.fm_factors = config_.fm_factors;
    att.casts = config_.casts;
    casts_ = make_cast_params(att, store_, init_rng);

    if (config_.use_lstm) {
        const std::size_t in = config_.lstm_input_width();
        const std::size_t hidden = config_.lstm_hidden;
        const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
        lstm_.w_ih = store_.create("lstm.w_ih", {in, 4 * hidden}, -bound, bound, init_rng);
        lstm_.w_hh = store_.create("lstm.w_hh", {hidden, 4 * hidden}, -bound, bound, init_rng);
        lstm_.b = store_.create_zeros("lstm.b", {4 * hidden});
        lstm_.hidden = hidden;
    }

    const std::size_t cmp = 4 * config_.pooled_width();
    head1_ = make_highway("head.h1", cmp, config_.head_width, store_, init_rng);
    head2_ = make_highway("head.h2", config_.head_width, config_.head_width, store_, init_rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(config_.head_width));
    out_w_ = store_.create("out.w", {config_.head_width, 2}, -bound, bound, init_rng);
    out_b_ = store_.create_zeros("out.b", {2});

    if (embeddings_.trainable) {
        // registered so the optimizer and regularizer see it
        store_.adopt("embedding.table", embeddings_.matrix);
    }
}

TensorPtr Model::encode_sequence(const TokenSequence& seq, bool training, Rng* dropout_rng) const {
    auto rows = embedding_lookup(embeddings_.matrix, seq.ids);
    if (!config_.use_highway) return rows;
    auto encoded = highway_layer(rows, encoder_);
    if (training && config_.dropout > 0.0 && dropout_rng != nullptr) {
        encoded = dropout(encoded, config_.dropout, true, *dropout_rng);
    }
    return encoded;
}

TensorPtr Model::prediction_head(const TensorPtr& pooled_q, const TensorPtr& pooled_d,
                                 bool training, Rng* dropout_rng) const {
    if (pooled_q->shape != pooled_d->shape) {
        throw std::invalid_argument("prediction_head: pooled widths differ: " +
                                    shape_str(pooled_q->shape) + " vs " +
                                    shape_str(pooled_d->shape));
    }
    auto cmp = concat({pooled_q, pooled_d, mul(pooled_q, pooled_d), sub(pooled_q, pooled_d)}, 1);
    auto h1 = highway_layer(cmp, head1_);
    if (training && config_.dropout > 0.0 && dropout_rng != nullptr) {
        h1 = dropout(h1, config_.dropout, true, *dropout_rng);
    }
    auto h2 = highway_layer(h1, head2_);
    if (training && config_.dropout > 0.0 && dropout_rng != nullptr) {
        h2 = dropout(h2, config_.dropout, true, *dropout_rng);
    }
    return softmax(add(matmul(h2, out_w_), out_b_), 1);
}

TensorPtr Model::forward(const TokenSequence& q, const TokenSequence& d, bool training,
                         Rng* dropout_rng, CastTrace* trace) const {
    const PosMask qmask = q.mask();
    const PosMask dmask = d.mask();
    auto enc_q = encode_sequence(q, training, dropout_rng);
    auto enc_d = encode_sequence(d, training, dropout_rng);

    auto [zq, zd] = multi_cast(enc_q, qmask, enc_d, dmask, casts_);
    if (trace != nullptr) {
        trace->z_width = config_.z_width();
        trace->q_features = zq ? zq->values : std::vector<double>{};
        trace->d_features = zd ? zd->values : std::vector<double>{};
    }
    auto aug_q = zq ? concat({enc_q, zq}, 1) : enc_q;
    auto aug_d = zd ? concat({enc_d, zd}, 1) : enc_d;

    TensorPtr hid_q = aug_q, hid_d = aug_d;
    if (config_.use_lstm) {
        hid_q = lstm_encode(aug_q, qmask, lstm_);
        hid_d = lstm_encode(aug_d, dmask, lstm_);
        if (training && config_.dropout > 0.0 && dropout_rng != nullptr) {
            hid_q = dropout(hid_q, config_.dropout, true, *dropout_rng);
            hid_d = dropout(hid_d, config_.dropout, true, *dropout_rng);
        }
    }
    auto pooled_q = meanmax_pool(hid_q, qmask);
    auto pooled_d = meanmax_pool(hid_d, dmask);
    return prediction_head(pooled_q, pooled_d, training, dropout_rng);
}

PairPrediction Model::predict(const TokenSequence& q, const TokenSequence& d) const {
    auto y = forward(q, d);
    return PairPrediction{y->values[0], y->values[1]};
}

double Model::score(const TokenSequence& q, const TokenSequence& d) const {
    return predict(q, d).prob_positive;
}

LossParts cross_entropy_loss(const std::vector<TensorPtr>& predictions,
                             const std::vector<int>& labels, const ParamStore& params,
                             double l2_weight) {
    if (predictions.size() != labels.size() || predictions.empty()) {
        throw std::invalid_argument("loss: predictions and labels must align and be non-empty");
    }
    if (l2_weight < 0.0) throw std::invalid_argument("loss: negative l2 weight");
    TensorPtr data;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) {
            throw std::invalid_argument("loss: label " + std::to_string(labels[i]) +
                                        " outside {0,1}");
        }
        auto pos = slice(predictions[i], 1, 1, 1);
        auto term = labels[i] == 1
                        ? scale(log_clamped(pos), -1.0)
                        : scale(log_clamped(sub(Tensor::full({1, 1}, 1.0), pos)), -1.0);
        auto flat = reshape(term, {1});
        data = data ? add(data, flat) : flat;
    }
    TensorPtr reg;
    for (const auto& [name, t] : params.all()) {
        (void)name;
        auto sq = sum_all(mul(t, t));
        reg = reg ? add(reg, sq) : sq;
    }
    if (!reg) reg = Tensor::scalar(0.0);
    LossParts parts;
    parts.data = data;
    parts.reg = reg;
    parts.total = l2_weight > 0.0 ? add(data, scale(reg, l2_weight)) : data;
    return parts;
}

}  // namespace mcan
