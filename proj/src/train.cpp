#include "mcan/train.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "mcan/errors.hpp"

namespace mcan {

void AdamOptimizer::step(ParamStore& params) {
    ++t_;
    const double bias1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (const auto& [name, p] : params.all()) {
        if (p->grad.empty()) {
            throw std::invalid_argument("adam: missing gradient for parameter " + name);
        }
        auto& m = first_[name];
        auto& v = second_[name];
        if (m.empty()) {
            m.assign(p->size(), 0.0);
            v.assign(p->size(), 0.0);
        }
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double g = p->grad[i];
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            const double m_hat = m[i] / bias1;
            const double v_hat = v[i] / bias2;
            p->values[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        }
    }
}

std::vector<Batch> make_batches(const std::vector<RankPair>& pairs, const Vocabulary& vocab,
                                std::size_t batch_size, std::size_t max_len, Rng& rng) {
    if (pairs.empty()) throw std::invalid_argument("make_batches: empty dataset");
    if (batch_size == 0) throw std::invalid_argument("make_batches: batch size must be >= 1");
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        std::vector<std::vector<std::string>> qtoks, dtoks;
        Batch batch;
        for (std::size_t i = start; i < end; ++i) {
            const RankPair& p = pairs[order[i]];
            qtoks.push_back(tokenize(p.query_text));
            dtoks.push_back(tokenize(p.doc_text));
            batch.labels.push_back(p.label);
        }
        batch.queries = encode_batch(qtoks, vocab, max_len);
        batch.docs = encode_batch(dtoks, vocab, max_len);
        batches.push_back(std::move(batch));
    }
    return batches;
}

std::vector<QueryGroup> score_pairs(const Model& model, const std::vector<RankPair>& pairs,
                                    const Vocabulary& vocab) {
    std::vector<double> scores;
    scores.reserve(pairs.size());
    for (const auto& p : pairs) {
        auto q = encode_batch({tokenize(p.query_text)}, vocab, model.config().max_len);
        auto d = encode_batch({tokenize(p.doc_text)}, vocab, model.config().max_len);
        scores.push_back(model.score(q[0], d[0]));
    }
    return group_pairs(pairs, scores);
}

std::string format_epoch(const EpochRecord& rec) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "epoch\t" << rec.epoch << "\tloss\t" << rec.mean_loss << "\tdev_map\t" << rec.dev.map
       << "\tdev_mrr\t" << rec.dev.mrr << "\tdev_p@1\t" << rec.dev.p_at_1;
    for (const auto& [spec, value] : rec.dev.recall) {
        os << "\tdev_r" << spec.n << "@" << spec.k << "\t" << value;
    }
    os << "\tbest\t" << (rec.best ? 1 : 0);
    return os.str();
}

TrainResult train_model(Model& model, const std::vector<RankPair>& train_pairs,
                        const std::vector<RankPair>& dev_pairs, const Vocabulary& vocab,
                        const TrainConfig& config) {
    if (config.patience == 0) throw std::invalid_argument("train: patience must be >= 1");
    TrainResult result;
    AdamOptimizer adam(config.adam);
    Rng dropout_rng(config.seed + 0x9e3779b97f4a7c15ull);

    std::map<std::string, std::vector<double>> best_values;
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        Rng shuffle_rng(config.seed + epoch);
        auto batches = make_batches(train_pairs, vocab, config.batch_size, model.config().max_len,
                                    shuffle_rng);
        double loss_sum = 0.0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const Batch& batch = batches[bi];
            model.params().zero_grads();
            Tape tape;
            std::vector<TensorPtr> predictions;
            predictions.reserve(batch.labels.size());
            for (std::size_t i = 0; i < batch.labels.size(); ++i) {
                predictions.push_back(
                    model.forward(batch.queries[i], batch.docs[i], true, &dropout_rng));
            }
            auto loss = cross_entropy_loss(predictions, batch.labels, model.params(),
                                           model.config().l2);
            const double value = loss.total->item();
            if (!std::isfinite(value)) {
                throw NumericError("non-finite loss in epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(bi + 1));
            }
            loss_sum += value;
            tape.backward(loss.total);
            adam.step(model.params());
        }
        model.params().zero_grads();

        EpochRecord rec;
        rec.epoch = epoch;
        rec.mean_loss = loss_sum / static_cast<double>(train_pairs.size());
        rec.dev = mean_metrics(score_pairs(model, dev_pairs, vocab), config.recall_specs);
        const double metric = rec.dev.metric(config.dev_metric);
        if (best_values.empty() || metric > result.best_metric) {
            result.best_metric = metric;
            result.best_epoch = epoch;
            since_best = 0;
            rec.best = true;
            best_values.clear();
            for (const auto& [name, t] : model.params().all()) best_values[name] = t->values;
        } else {
            ++since_best;
        }
        result.log.push_back(std::move(rec));
        if (since_best >= config.patience) break;
    }

    // leave the model at its best dev epoch
    for (const auto& [name, values] : best_values) {
        model.params().at(name)->values = values;
    }
    return result;
}

}  // namespace mcan
