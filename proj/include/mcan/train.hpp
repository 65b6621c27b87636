#pragma once

#include <map>
#include <string>
#include <vector>

#include "mcan/eval.hpp"
#include "mcan/model.hpp"
#include "mcan/params.hpp"
#include "mcan/text.hpp"

namespace mcan {

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard bias-corrected Adam over a ParamStore, in name order.
class AdamOptimizer {
public:
    explicit AdamOptimizer(AdamConfig config) : config_(config) {}

    // Applies one update from the accumulated gradients; every parameter
    // must carry a gradient.
    void step(ParamStore& params);

    std::size_t steps_taken() const { return t_; }

private:
    AdamConfig config_;
    std::size_t t_ = 0;
    std::map<std::string, std::vector<double>> first_, second_;
};

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t max_epochs = 50;
    std::uint64_t seed = 0;
    std::string dev_metric = "map";
    std::size_t patience = 5;
    AdamConfig adam;
    std::vector<RecallSpec> recall_specs;  // extra dev metrics to report
};

struct Batch {
    std::vector<TokenSequence> queries;
    std::vector<TokenSequence> docs;
    std::vector<int> labels;
};

// Shuffles, slices, then pads each batch to its own maxima.
std::vector<Batch> make_batches(const std::vector<RankPair>& pairs, const Vocabulary& vocab,
                                std::size_t batch_size, std::size_t max_len, Rng& rng);

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_loss = 0.0;       // total loss per pair
    MetricsReport dev;
    bool best = false;
};

struct TrainResult {
    std::vector<EpochRecord> log;
    double best_metric = 0.0;
    std::size_t best_epoch = 0;  // 0 when training ran for zero epochs
};

// Epoch loop with dev-metric model selection and early stopping; on return
// the model holds the best epoch's parameters.
TrainResult train_model(Model& model, const std::vector<RankPair>& train_pairs,
                        const std::vector<RankPair>& dev_pairs, const Vocabulary& vocab,
                        const TrainConfig& config);

// Scores every pair at inference settings and groups them for evaluation.
std::vector<QueryGroup> score_pairs(const Model& model, const std::vector<RankPair>& pairs,
                                    const Vocabulary& vocab);

std::string format_epoch(const EpochRecord& rec);

}  // namespace mcan
