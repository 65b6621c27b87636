#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mcan/text.hpp"

namespace mcan {

struct Candidate {
    std::string doc_id;
    int label = 0;  // binary relevance
    double score = 0.0;
};

// One query with its scored candidates; the unit of ranking evaluation.
struct QueryGroup {
    std::string query_id;
    std::vector<Candidate> candidates;

    std::size_t relevant_count() const;
};

// Indices into the group's candidates, best score first; ties keep input
// order (stable), so results are reproducible.
std::vector<std::size_t> rank_order(const QueryGroup& group);

// Mean precision at the rank of each relevant document.
double average_precision(const QueryGroup& group);

struct RecallSpec {
    std::size_t n = 0;  // group size the spec applies to
    std::size_t k = 0;  // cutoff
};

struct MetricsReport {
    double map = 0.0;
    double mrr = 0.0;
    double p_at_1 = 0.0;
    std::vector<std::pair<RecallSpec, double>> recall;  // R_n@K rows
    std::size_t evaluated = 0;
    std::size_t dropped = 0;  // groups without any relevant candidate

    double metric(const std::string& name) const;  // "map", "mrr", "p@1", "r10@1"
    std::string to_text() const;                   // one "name<TAB>value" per line
};

MetricsReport mean_metrics(const std::vector<QueryGroup>& groups,
                           const std::vector<RecallSpec>& recall_specs = {});

// Groups pairs by query id in first-appearance order, attaching scores.
std::vector<QueryGroup> group_pairs(const std::vector<RankPair>& pairs,
                                    const std::vector<double>& scores);

}  // namespace mcan
