#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mcan/checkpoint.hpp"
#include "mcan/errors.hpp"
#include "mcan/model.hpp"
#include "support/gradcheck.hpp"

using namespace mcan;

namespace {

EmbeddingTable random_embeddings(std::size_t vocab_size, std::size_t dim, Rng& rng) {
    EmbeddingTable emb;
    emb.dim = dim;
    emb.matrix = Tensor::uniform({vocab_size, dim}, -0.5, 0.5, rng, false);
    // PAD row stays zero
    for (std::size_t j = 0; j < dim; ++j) emb.matrix->values[j] = 0.0;
    return emb;
}

TokenSequence seq(std::vector<std::size_t> ids, std::size_t true_len) {
    TokenSequence s;
    s.ids = std::move(ids);
    s.true_length = true_len;
    return s;
}

ModelConfig toy_config() {
    ModelConfig cfg;
    cfg.embed_dim = 6;
    cfg.encoder_width = 6;
    cfg.lstm_hidden = 4;
    cfg.head_width = 4;
    cfg.compression = Compression::Sum;
    cfg.fm_factors = 2;
    cfg.dropout = 0.0;
    cfg.l2 = 0.0;
    return cfg;
}

Model toy_model(const ModelConfig& cfg, std::uint64_t seed = 1) {
    Rng emb_rng(seed);
    auto emb = random_embeddings(12, cfg.embed_dim, emb_rng);
    Rng init_rng(seed + 100);
    return Model(cfg, std::move(emb), init_rng);
}

std::size_t highway_count(std::size_t in, std::size_t out) {
    std::size_t n = 2 * (in * out + out);
    if (in != out) n += in * out + out;
    return n;
}

// analytic parameter count, kept independent of the implementation
std::size_t expected_param_count(const ModelConfig& c) {
    std::size_t n = 0;
    const std::size_t d = c.embed_dim;
    const std::size_t w = c.encoded_width();
    if (c.use_highway) n += highway_count(d, w);
    const std::size_t aw = c.affinity_width == 0 ? w : c.affinity_width;
    auto comp = [&](std::size_t width) -> std::size_t {
        switch (c.compression) {
            case Compression::Sum: return 0;
            case Compression::NN: return width + 1;
            case Compression::FM: return 1 + width + width * c.fm_factors;
        }
        return 0;
    };
    std::size_t aff = 0;
    switch (c.affinity) {
        case AffinityKind::Factored: aff = w * aw + aw; break;
        case AffinityKind::Bilinear: aff = w * w; break;
        case AffinityKind::MlpConcat: aff = 2 * w * aw + aw + aw + 1; break;
    }
    n += c.casts.count() * (aff + comp(2 * w) + comp(w) + comp(w));
    const std::size_t lstm_in = w + c.z_width();
    if (c.use_lstm) n += lstm_in * 4 * c.lstm_hidden + c.lstm_hidden * 4 * c.lstm_hidden + 4 * c.lstm_hidden;
    const std::size_t cmp_width = 4 * c.pooled_width();
    n += highway_count(cmp_width, c.head_width);
    n += highway_count(c.head_width, c.head_width);
    n += c.head_width * 2 + 2;
    return n;
}

}  // namespace

TEST_CASE("highway layer gating") {
    Rng rng(3);
    ParamStore store;
    const std::size_t d = 4;
    const double bound = 0.5;
    HighwayParams p;
    p.h_w = Tensor::uniform({d, d}, -bound, bound, rng, false);
    p.h_b = Tensor::zeros({d});
    p.t_w = Tensor::zeros({d, d});
    p.t_b = Tensor::full({d}, 100.0);  // saturate the gate open
    auto x = Tensor::uniform({2, d}, -1, 1, rng, false);

    auto open = highway_layer(x, p);
    auto transform = relu(add(matmul(x, p.h_w), p.h_b));
    for (std::size_t i = 0; i < open->size(); ++i) {
        CHECK(open->values[i] == doctest::Approx(transform->values[i]).epsilon(1e-12));
    }

    p.t_b = Tensor::full({d}, -100.0);  // saturate the gate shut: pure carry
    auto shut = highway_layer(x, p);
    for (std::size_t i = 0; i < shut->size(); ++i) {
        CHECK(shut->values[i] == doctest::Approx(x->values[i]).epsilon(1e-12));
    }

    // direct formula evaluation at random parameters
    p.t_w = Tensor::uniform({d, d}, -bound, bound, rng, false);
    p.t_b = Tensor::uniform({d}, -1, 1, rng, false);
    auto y = highway_layer(x, p);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            double h = p.h_b->values[j], t = p.t_b->values[j];
            for (std::size_t k = 0; k < d; ++k) {
                h += x->values[i * d + k] * p.h_w->values[k * d + j];
                t += x->values[i * d + k] * p.t_w->values[k * d + j];
            }
            h = std::max(h, 0.0);
            t = 1.0 / (1.0 + std::exp(-t));
            const double expect = h * t + (1.0 - t) * x->values[i * d + j];
            CHECK(y->values[i * d + j] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("encode_sequence") {
    auto cfg = toy_config();
    cfg.use_highway = false;
    auto model = toy_model(cfg);

    auto s = seq({2, 3, 2, 0}, 3);
    auto enc = model.encode_sequence(s);
    const auto& table = model.embeddings().matrix->values;
    const std::size_t d = cfg.embed_dim;
    // raw embedding rows pass through; PAD position embeds to zero
    for (std::size_t j = 0; j < d; ++j) {
        CHECK(enc->values[j] == table[2 * d + j]);
        CHECK(enc->values[3 * d + j] == 0.0);
    }
    // same word at two positions encodes identically
    for (std::size_t j = 0; j < d; ++j) CHECK(enc->values[j] == enc->values[2 * d + j]);

    auto cfg_hw = toy_config();
    auto model_hw = toy_model(cfg_hw);
    auto enc_hw = model_hw.encode_sequence(s);
    for (std::size_t j = 0; j < d; ++j) CHECK(enc_hw->values[j] == enc_hw->values[2 * d + j]);
}

TEST_CASE("lstm_encode") {
    const std::size_t hidden = 3;
    LstmParams p;
    p.hidden = hidden;
    p.w_ih = Tensor::zeros({2, 4 * hidden});
    p.w_hh = Tensor::zeros({hidden, 4 * hidden});
    p.b = Tensor::zeros({4 * hidden});

    auto x = Tensor::zeros({4, 2});
    auto h = lstm_encode(x, PosMask(4, 1), p);
    for (double v : h->values) CHECK(v == 0.0);

    // one step with small constant weights against hand-computed gates
    for (double& v : p.w_ih->values) v = 0.1;
    auto x1 = Tensor::make({1, 2}, {1.0, -0.5});
    auto h1 = lstm_encode(x1, PosMask(1, 1), p);
    const double pre = 0.1 * (1.0 - 0.5);
    const double sig = 1.0 / (1.0 + std::exp(-pre));
    const double cand = std::tanh(pre);
    const double c1 = sig * cand;
    const double expect = sig * std::tanh(c1);
    for (std::size_t j = 0; j < hidden; ++j) {
        CHECK(h1->values[j] == doctest::Approx(expect).epsilon(1e-12));
    }

    // trailing padded steps leave the last unmasked state untouched
    Rng rng(7);
    LstmParams pr;
    pr.hidden = hidden;
    pr.w_ih = Tensor::uniform({2, 4 * hidden}, -0.5, 0.5, rng, false);
    pr.w_hh = Tensor::uniform({hidden, 4 * hidden}, -0.5, 0.5, rng, false);
    pr.b = Tensor::uniform({4 * hidden}, -0.1, 0.1, rng, false);
    auto xs = Tensor::uniform({3, 2}, -1, 1, rng, false);
    auto base = lstm_encode(xs, PosMask(3, 1), pr);

    auto padded = Tensor::zeros({5, 2});
    std::copy(xs->values.begin(), xs->values.end(), padded->values.begin());
    PosMask m(5, 1);
    m[3] = m[4] = 0;
    auto hp = lstm_encode(padded, m, pr);
    for (std::size_t j = 0; j < hidden; ++j) {
        CHECK(hp->values[2 * hidden + j] == base->values[2 * hidden + j]);
        CHECK(hp->values[3 * hidden + j] == base->values[2 * hidden + j]);
        CHECK(hp->values[4 * hidden + j] == base->values[2 * hidden + j]);
    }

    CHECK_THROWS_AS(lstm_encode(Tensor::zeros({2, 5}), PosMask(2, 1), pr), std::invalid_argument);
}

TEST_CASE("meanmax_pool") {
    Rng rng(9);
    auto h1 = Tensor::uniform({1, 3}, -1, 1, rng, false);
    auto pooled1 = meanmax_pool(h1, PosMask(1, 1));
    CHECK(pooled1->shape == Shape{1, 6});
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(pooled1->values[j] == h1->values[j]);
        CHECK(pooled1->values[3 + j] == h1->values[j]);
    }

    auto h2 = Tensor::make({2, 2}, {1.0, -3.0, 2.0, -4.0});
    auto pooled2 = meanmax_pool(h2, PosMask(2, 1));
    CHECK(pooled2->values == std::vector<double>{1.5, -3.5, 2.0, -3.0});
}

TEST_CASE("prediction head") {
    auto model = toy_model(toy_config());
    Rng rng(11);
    auto x = Tensor::uniform({1, model.config().pooled_width()}, -1, 1, rng, false);
    auto y = model.prediction_head(x, x);
    CHECK(y->shape == Shape{1, 2});
    CHECK(std::abs(y->values[0] + y->values[1] - 1.0) <= 1e-12);
    CHECK(y->values[0] >= 0.0);
    CHECK(y->values[1] >= 0.0);

    // comparison vector spans [xq; xd; prod; diff]
    CHECK(model.params().at("head.h1.h_w")->shape[0] == 4 * model.config().pooled_width());

    CHECK_THROWS_AS(model.prediction_head(x, Tensor::zeros({1, 2})), std::invalid_argument);
}

TEST_CASE("loss") {
    ParamStore empty;
    auto exact = Tensor::make({1, 2}, {0.0, 1.0});
    auto parts = cross_entropy_loss({exact}, {1}, empty, 0.0);
    CHECK(parts.total->item() == 0.0);

    auto half = Tensor::make({1, 2}, {0.5, 0.5});
    auto ln2 = cross_entropy_loss({half}, {0}, empty, 0.0);
    CHECK(ln2.total->item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    ParamStore zeros;
    zeros.create_zeros("a", {3, 3});
    auto with_reg = cross_entropy_loss({half}, {1}, zeros, 0.5);
    CHECK(with_reg.reg->item() == 0.0);
    CHECK(with_reg.total->item() == with_reg.data->item());

    CHECK_THROWS_AS(cross_entropy_loss({half}, {2}, empty, 0.0), std::invalid_argument);
}

TEST_CASE("forward determinism and asymmetry") {
    auto model = toy_model(toy_config());
    auto q = seq({2, 3, 4}, 3);
    auto d = seq({5, 6, 7, 8}, 4);

    auto a = model.forward(q, d);
    auto b = model.forward(q, d);
    CHECK(a->values == b->values);
    CHECK(a->all_finite());

    auto swapped = model.forward(d, q);
    CHECK(a->values != swapped->values);

    auto pred = model.predict(q, d);
    CHECK(pred.prob_positive >= 0.0);
    CHECK(pred.prob_positive <= 1.0);
    CHECK(std::abs(pred.prob_negative + pred.prob_positive - 1.0) <= 1e-12);
}

TEST_CASE("forward padding invariance") {
    for (auto comp : {Compression::Sum, Compression::FM}) {
        auto cfg = toy_config();
        cfg.compression = comp;
        auto model = toy_model(cfg, 21);
        auto q = seq({2, 3, 4}, 3);
        auto d = seq({5, 6}, 2);
        auto base = model.forward(q, d);

        auto qp = seq({2, 3, 4, 0, 0}, 3);
        auto dp = seq({5, 6, 0}, 2);
        auto padded = model.forward(qp, dp);
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(std::abs(padded->values[i] - base->values[i]) <= 1e-10);
        }
    }
}

TEST_CASE("ablation to a plain siamese ranker") {
    auto cfg = toy_config();
    cfg.use_highway = false;
    cfg.casts = CastSet{false, false, false, false};
    auto model = toy_model(cfg);
    CHECK(cfg.z_width() == 0);
    for (const auto& [name, t] : model.params().all()) {
        (void)t;
        CHECK(name.rfind("enc.hw.", 0) != 0);
        CHECK(name.rfind("cast.", 0) != 0);
    }
    CHECK(model.params().has("lstm.w_ih"));
    CHECK(model.lstm().w_ih->shape[0] == cfg.embed_dim);

    auto q = seq({2, 3}, 2);
    auto d = seq({4, 5, 6}, 3);
    CHECK(model.forward(q, d)->all_finite());
}

TEST_CASE("each structural switch changes exactly the documented tensors") {
    auto names_of = [](const ModelConfig& cfg) {
        Rng rng(31);
        auto emb = random_embeddings(12, cfg.embed_dim, rng);
        Rng init(32);
        Model m(cfg, std::move(emb), init);
        std::vector<std::string> names;
        for (const auto& [name, t] : m.params().all()) {
            (void)t;
            names.push_back(name);
        }
        return names;
    };
    auto base_cfg = toy_config();
    auto base = names_of(base_cfg);

    auto removed_prefixes = [&](const ModelConfig& cfg, const std::string& prefix) {
        auto got = names_of(cfg);
        for (const auto& n : got) {
            CHECK(n.rfind(prefix, 0) != 0);  // removed family is gone
        }
        // everything else survives
        for (const auto& n : base) {
            if (n.rfind(prefix, 0) == 0) continue;
            bool found = std::find(got.begin(), got.end(), n) != got.end();
            CHECK(found);
        }
    };

    auto no_hw = base_cfg;
    no_hw.use_highway = false;
    removed_prefixes(no_hw, "enc.hw.");

    auto no_lstm = base_cfg;
    no_lstm.use_lstm = false;
    removed_prefixes(no_lstm, "lstm.");

    auto no_align = base_cfg;
    no_align.casts.align = false;
    removed_prefixes(no_align, "cast.align.");

    auto no_mca = base_cfg;
    no_mca.casts = CastSet{false, false, false, false};
    removed_prefixes(no_mca, "cast.");
}

TEST_CASE("parameter count matches the analytic formula") {
    Rng rng(41);
    for (int trial = 0; trial < 5; ++trial) {
        ModelConfig cfg;
        cfg.embed_dim = 3 + rng.next_below(5);
        cfg.encoder_width = 3 + rng.next_below(5);
        cfg.use_highway = rng.next_below(2) == 0;
        cfg.use_lstm = rng.next_below(2) == 0;
        cfg.lstm_hidden = 2 + rng.next_below(4);
        cfg.head_width = 2 + rng.next_below(4);
        cfg.compression = std::array{Compression::Sum, Compression::NN,
                                     Compression::FM}[rng.next_below(3)];
        cfg.fm_factors = 1 + rng.next_below(4);
        cfg.affinity = std::array{AffinityKind::Factored, AffinityKind::Bilinear,
                                  AffinityKind::MlpConcat}[rng.next_below(3)];
        cfg.casts.align = rng.next_below(2) == 0;
        cfg.casts.max_pool = rng.next_below(2) == 0;
        cfg.casts.mean_pool = rng.next_below(2) == 0;
        cfg.casts.intra = rng.next_below(2) == 0;
        cfg.dropout = 0.0;

        Rng erng(trial + 50);
        auto emb = random_embeddings(10, cfg.embed_dim, erng);
        Rng init(trial + 60);
        Model m(cfg, std::move(emb), init);
        CHECK(m.params().value_count() == expected_param_count(m.config()));
    }
}

TEST_CASE("end-to-end gradients match finite differences") {
    auto cfg = toy_config();
    cfg.compression = Compression::NN;
    cfg.l2 = 1e-3;
    auto model = toy_model(cfg, 77);
    auto q = seq({2, 3, 4}, 3);
    auto d = seq({5, 6}, 2);
    auto q2 = seq({7, 8}, 2);
    auto d2 = seq({9, 2, 3}, 3);

    std::vector<std::pair<std::string, TensorPtr>> leaves;
    for (const auto& [name, t] : model.params().all()) leaves.emplace_back(name, t);
    auto res = gradcheck::check(
        leaves,
        [&] {
            auto p1 = model.forward(q, d);
            auto p2 = model.forward(q2, d2);
            return cross_entropy_loss({p1, p2}, {1, 0}, model.params(), cfg.l2).total;
        },
        1e-5);
    INFO("worst: " << res.worst);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("checkpoint round trip restores bit-identical scores") {
    auto cfg = toy_config();
    cfg.compression = Compression::FM;
    auto model = toy_model(cfg, 91);
    auto vocab = build_vocab({{"alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta",
                               "theta", "iota", "kappa"}},
                             1);

    auto path = (std::filesystem::temp_directory_path() / "mcan_ckpt_test.bin").string();
    save_checkpoint(path, model, vocab);
    auto loaded = load_checkpoint(path);

    CHECK(loaded.vocab.size() == vocab.size());
    CHECK(loaded.vocab.id_of("gamma") == vocab.id_of("gamma"));
    CHECK(loaded.config.compression == Compression::FM);

    for (const auto& [name, t] : model.params().all()) {
        CHECK(loaded.model->params().at(name)->values == t->values);
    }
    CHECK(loaded.model->embeddings().matrix->values == model.embeddings().matrix->values);

    auto q = seq({2, 3, 4}, 3);
    auto d = seq({5, 6}, 2);
    CHECK(loaded.model->score(q, d) == model.score(q, d));  // zero ulps apart

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), DataError);
}
