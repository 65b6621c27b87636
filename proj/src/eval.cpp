#include "mcan/eval.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace mcan {

std::size_t QueryGroup::relevant_count() const {
    std::size_t n = 0;
    for (const auto& c : candidates) n += c.label == 1 ? 1 : 0;
    return n;
}

std::vector<std::size_t> rank_order(const QueryGroup& group) {
    std::vector<std::size_t> order(group.candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return group.candidates[a].score > group.candidates[b].score;
    });
    return order;
}

double average_precision(const QueryGroup& group) {
    if (group.relevant_count() == 0) {
        throw std::invalid_argument("average_precision: group '" + group.query_id +
                                    "' has no relevant candidate");
    }
    const auto order = rank_order(group);
    double sum = 0.0;
    std::size_t seen_relevant = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (group.candidates[order[rank]].label != 1) continue;
        ++seen_relevant;
        sum += static_cast<double>(seen_relevant) / static_cast<double>(rank + 1);
    }
    return sum / static_cast<double>(seen_relevant);
}

double MetricsReport::metric(const std::string& name) const {
    if (name == "map") return map;
    if (name == "mrr") return mrr;
    if (name == "p@1") return p_at_1;
    for (const auto& [spec, value] : recall) {
        if (name == "r" + std::to_string(spec.n) + "@" + std::to_string(spec.k)) return value;
    }
    throw std::invalid_argument("unknown metric: " + name);
}

std::string MetricsReport::to_text() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "map\t" << map << "\n";
    os << "mrr\t" << mrr << "\n";
    os << "p@1\t" << p_at_1 << "\n";
    for (const auto& [spec, value] : recall) {
        os << "r" << spec.n << "@" << spec.k << "\t" << value << "\n";
    }
    os << "groups_evaluated\t" << evaluated << "\n";
    os << "groups_dropped\t" << dropped << "\n";
    return os.str();
}

MetricsReport mean_metrics(const std::vector<QueryGroup>& groups,
                           const std::vector<RecallSpec>& recall_specs) {
    MetricsReport report;
    std::vector<double> recall_sums(recall_specs.size(), 0.0);
    std::vector<std::size_t> recall_counts(recall_specs.size(), 0);

    for (const auto& group : groups) {
        if (group.candidates.empty()) throw std::invalid_argument("mean_metrics: empty group");
        if (group.relevant_count() == 0) {
            ++report.dropped;
            continue;
        }
        ++report.evaluated;
        const auto order = rank_order(group);
        report.map += average_precision(group);
        for (std::size_t rank = 0; rank < order.size(); ++rank) {
            if (group.candidates[order[rank]].label == 1) {
                report.mrr += 1.0 / static_cast<double>(rank + 1);
                break;
            }
        }
        report.p_at_1 += group.candidates[order[0]].label == 1 ? 1.0 : 0.0;

        for (std::size_t si = 0; si < recall_specs.size(); ++si) {
            if (group.candidates.size() != recall_specs[si].n) continue;
            ++recall_counts[si];
            const std::size_t cutoff = std::min(recall_specs[si].k, order.size());
            for (std::size_t rank = 0; rank < cutoff; ++rank) {
                if (group.candidates[order[rank]].label == 1) {
                    recall_sums[si] += 1.0;
                    break;
                }
            }
        }
    }
    if (report.evaluated == 0) {
        throw std::invalid_argument("mean_metrics: no group has a relevant candidate");
    }
    const double n = static_cast<double>(report.evaluated);
    report.map /= n;
    report.mrr /= n;
    report.p_at_1 /= n;
    for (std::size_t si = 0; si < recall_specs.size(); ++si) {
        report.recall.emplace_back(recall_specs[si],
                                   recall_counts[si] == 0
                                       ? 0.0
                                       : recall_sums[si] / static_cast<double>(recall_counts[si]));
    }
    return report;
}

std::vector<QueryGroup> group_pairs(const std::vector<RankPair>& pairs,
                                    const std::vector<double>& scores) {
    if (pairs.size() != scores.size()) {
        throw std::invalid_argument("group_pairs: " + std::to_string(pairs.size()) + " pairs vs " +
                                    std::to_string(scores.size()) + " scores");
    }
    std::vector<QueryGroup> groups;
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        auto [it, fresh] = index.emplace(pairs[i].query_id, groups.size());
        if (fresh) groups.push_back(QueryGroup{pairs[i].query_id, {}});
        auto& group = groups[it->second];
        group.candidates.push_back(Candidate{
            pairs[i].query_id + "#" + std::to_string(group.candidates.size()), pairs[i].label,
            scores[i]});
    }
    return groups;
}

}  // namespace mcan
