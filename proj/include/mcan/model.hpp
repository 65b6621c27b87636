#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mcan/attention.hpp"
#include "mcan/params.hpp"
#include "mcan/tensor.hpp"
#include "mcan/text.hpp"

namespace mcan {

// Gated transform: y = H(x)·T(x) + (1-T(x))·carry, with H a ReLU affine and
// T a sigmoid affine. When the output width differs from the input, the
// carry path first goes through a ReLU affine projection.
struct HighwayParams {
    TensorPtr h_w, h_b;
    TensorPtr t_w, t_b;
    TensorPtr p_w, p_b;  // null when widths match
};

TensorPtr highway_layer(const TensorPtr& x, const HighwayParams& p);

struct LstmParams {
    TensorPtr w_ih;  // [in x 4H], gate order i, f, g, o
    TensorPtr w_hh;  // [H x 4H]
    TensorPtr b;     // [4H]
    std::size_t hidden = 0;
};

// Unidirectional recurrence with zero initial state; masked steps carry the
// previous state forward unchanged.
TensorPtr lstm_encode(const TensorPtr& x, const PosMask& mask, const LstmParams& p);

// [masked mean; masked max] over the rows of h -> [1 x 2*width]
TensorPtr meanmax_pool(const TensorPtr& h, const PosMask& mask);

struct PairPrediction {
    double prob_negative = 0.0;
    double prob_positive = 0.0;
    double score() const { return prob_positive; }
};

struct ModelConfig {
    std::size_t embed_dim = 0;      // 0: take the embedding table's width
    std::size_t encoder_width = 0;  // 0: same as embed_dim
    bool use_highway = true;
    bool use_lstm = true;
    std::size_t lstm_hidden = 100;
    std::size_t head_width = 100;
    Compression compression = Compression::FM;
    std::size_t fm_factors = 10;
    AffinityKind affinity = AffinityKind::Factored;
    std::size_t affinity_width = 0;
    double dropout = 0.2;
    double l2 = 1e-6;
    CastSet casts;
    std::size_t max_len = 50;

    std::size_t z_width() const { return 3 * casts.count(); }
    std::size_t encoded_width() const {
        if (!use_highway) return embed_dim;
        return encoder_width == 0 ? embed_dim : encoder_width;
    }
    std::size_t lstm_input_width() const { return encoded_width() + z_width(); }
    std::size_t pooled_width() const {
        return 2 * (use_lstm ? lstm_hidden : lstm_input_width());
    }
};

// Per-word casted features captured during one forward pass, for inspection.
struct CastTrace {
    std::vector<double> q_features, d_features;  // row-major [padded_len x z_width]
    std::size_t z_width = 0;
};

class Model {
public:
    Model(ModelConfig config, EmbeddingTable embeddings, Rng& init_rng);

    // y_pred [1 x 2]; dropout draws from `dropout_rng` only when training.
    TensorPtr forward(const TokenSequence& q, const TokenSequence& d, bool training = false,
                      Rng* dropout_rng = nullptr, CastTrace* trace = nullptr) const;

    PairPrediction predict(const TokenSequence& q, const TokenSequence& d) const;
    double score(const TokenSequence& q, const TokenSequence& d) const;

    // Embedding rows passed through the (shared) highway encoder, or raw
    // rows when the encoder is ablated away.
    TensorPtr encode_sequence(const TokenSequence& seq, bool training = false,
                              Rng* dropout_rng = nullptr) const;

    // Comparison vector + two highway layers + linear softmax over 2 classes.
    TensorPtr prediction_head(const TensorPtr& pooled_q, const TensorPtr& pooled_d,
                              bool training = false, Rng* dropout_rng = nullptr) const;

    const ModelConfig& config() const { return config_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const EmbeddingTable& embeddings() const { return embeddings_; }
    const LstmParams& lstm() const { return lstm_; }
    const MultiCastParams& cast_params() const { return casts_; }

private:
    ModelConfig config_;
    EmbeddingTable embeddings_;
    ParamStore store_;
    HighwayParams encoder_;
    MultiCastParams casts_;
    LstmParams lstm_;
    HighwayParams head1_, head2_;
    TensorPtr out_w_, out_b_;
};

struct LossParts {
    TensorPtr total;  // data + l2_weight * reg
    TensorPtr data;   // summed binary cross entropy
    TensorPtr reg;    // sum of squared trainable parameters
};

// Cross entropy over positive-class probabilities with the log clamped at
// 1e-12, plus l2_weight * sum(theta^2) over every trainable parameter.
LossParts cross_entropy_loss(const std::vector<TensorPtr>& predictions,
                             const std::vector<int>& labels, const ParamStore& params,
                             double l2_weight);

}  // namespace mcan
