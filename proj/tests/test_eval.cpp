#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mcan/eval.hpp"
#include "mcan/rng.hpp"

using namespace mcan;

namespace {

QueryGroup group(std::vector<std::pair<int, double>> rows, std::string id = "q") {
    QueryGroup g;
    g.query_id = std::move(id);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        g.candidates.push_back(Candidate{"d" + std::to_string(i), rows[i].first, rows[i].second});
    }
    return g;
}

QueryGroup random_group(Rng& rng, std::size_t size) {
    QueryGroup g;
    g.query_id = "r";
    bool any_rel = false;
    for (std::size_t i = 0; i < size; ++i) {
        const int label = rng.uniform01() < 0.4 ? 1 : 0;
        any_rel = any_rel || label == 1;
        g.candidates.push_back(Candidate{"d" + std::to_string(i), label, rng.uniform(-3, 3)});
    }
    if (!any_rel) g.candidates[rng.next_below(size)].label = 1;
    return g;
}

}  // namespace

TEST_CASE("rank_order") {
    auto g = group({{0, 0.1}, {1, 0.9}});
    CHECK(rank_order(g) == std::vector<std::size_t>{1, 0});

    auto tied = group({{0, 0.5}, {1, 0.5}, {0, 0.5}});
    CHECK(rank_order(tied) == std::vector<std::size_t>{0, 1, 2});

    auto single = group({{1, 0.3}});
    CHECK(rank_order(single) == std::vector<std::size_t>{0});
}

TEST_CASE("average_precision") {
    CHECK(average_precision(group({{1, 5}, {0, 4}, {0, 3}, {0, 2}, {0, 1}})) == 1.0);
    CHECK(average_precision(group({{0, 5}, {1, 4}, {0, 3}})) == 0.5);
    // relevant at ranks 1 and 3: (1 + 2/3) / 2
    CHECK(average_precision(group({{1, 5}, {0, 4}, {1, 3}})) ==
          doctest::Approx(5.0 / 6.0).epsilon(1e-15));
    CHECK_THROWS_AS(average_precision(group({{0, 1}, {0, 2}})), std::invalid_argument);
}

TEST_CASE("mean_metrics fixtures") {
    std::vector<QueryGroup> two{group({{1, 5}, {0, 4}, {0, 3}, {0, 2}, {0, 1}}, "a"),
                               group({{0, 5}, {1, 4}, {0, 3}}, "b")};
    auto report = mean_metrics(two);
    CHECK(report.map == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(report.evaluated == 2);
    CHECK(report.dropped == 0);

    std::vector<QueryGroup> perfect{group({{1, 9}, {0, 1}}, "a"), group({{1, 7}, {0, 2}}, "b")};
    auto p = mean_metrics(perfect);
    CHECK(p.mrr == 1.0);
    CHECK(p.p_at_1 == 1.0);
    CHECK(p.map == 1.0);

    // R_2@1 over two-candidate groups with the truth ranked first
    auto r = mean_metrics(perfect, {{2, 1}});
    REQUIRE(r.recall.size() == 1);
    CHECK(r.recall[0].second == 1.0);
    CHECK(r.metric("r2@1") == 1.0);

    // groups without any relevant are dropped and counted
    std::vector<QueryGroup> with_dropped{group({{1, 2}, {0, 1}}, "a"), group({{0, 2}, {0, 1}}, "b")};
    auto d = mean_metrics(with_dropped);
    CHECK(d.evaluated == 1);
    CHECK(d.dropped == 1);

    CHECK_THROWS_AS(mean_metrics({group({{0, 1}}, "only")}), std::invalid_argument);
    CHECK_THROWS_AS(mean_metrics({}), std::invalid_argument);
}

TEST_CASE("score-monotone invariance over random groups") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<QueryGroup> groups;
        const std::size_t count = 1 + rng.next_below(4);
        for (std::size_t i = 0; i < count; ++i) groups.push_back(random_group(rng, 2 + rng.next_below(9)));
        auto base = mean_metrics(groups, {{10, 1}});

        // strictly increasing transform of every score
        const double a = 0.5 + rng.uniform01();
        const double b = rng.uniform(-2, 2);
        auto mapped = groups;
        for (auto& g : mapped) {
            for (auto& c : g.candidates) c.score = std::exp(a * c.score) + b;
        }
        auto transformed = mean_metrics(mapped, {{10, 1}});
        CHECK(transformed.map == base.map);
        CHECK(transformed.mrr == base.mrr);
        CHECK(transformed.p_at_1 == base.p_at_1);
        CHECK(transformed.recall[0].second == base.recall[0].second);

        for (double m : {base.map, base.mrr, base.p_at_1}) {
            CHECK(m >= 0.0);
            CHECK(m <= 1.0);
        }
    }
}

TEST_CASE("permuting candidates with distinct scores changes nothing") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        QueryGroup g;
        g.query_id = "p";
        const std::size_t size = 3 + rng.next_below(6);
        for (std::size_t i = 0; i < size; ++i) {
            g.candidates.push_back(Candidate{"d" + std::to_string(i),
                                             rng.uniform01() < 0.5 ? 1 : 0,
                                             static_cast<double>(i) + rng.uniform01() * 0.5});
        }
        g.candidates[0].label = 1;
        auto shuffled = g;
        rng.shuffle(shuffled.candidates);
        CHECK(mean_metrics({g}).map == mean_metrics({shuffled}).map);
        CHECK(mean_metrics({g}).mrr == mean_metrics({shuffled}).mrr);
        CHECK(mean_metrics({g}).p_at_1 == mean_metrics({shuffled}).p_at_1);
    }
}

TEST_CASE("map, mrr and p@1 coincide for single-relevant groups ranked first") {
    std::vector<QueryGroup> groups{group({{1, 3}, {0, 2}, {0, 1}}, "a"),
                                   group({{1, 8}, {0, 7}}, "b")};
    auto r = mean_metrics(groups);
    CHECK(r.map == r.mrr);
    CHECK(r.mrr == r.p_at_1);
    CHECK(r.p_at_1 == 1.0);
}

TEST_CASE("label-as-score oracle ranks perfectly, negated labels rank worst") {
    std::vector<RankPair> pairs;
    for (int g = 0; g < 3; ++g) {
        for (int c = 0; c < 4; ++c) {
            pairs.push_back(RankPair{"q" + std::to_string(g), "q", "d", c == 2 ? 1 : 0, 0});
        }
    }
    std::vector<double> oracle, anti;
    for (const auto& p : pairs) {
        oracle.push_back(static_cast<double>(p.label));
        anti.push_back(-static_cast<double>(p.label));
    }
    auto perfect = mean_metrics(group_pairs(pairs, oracle));
    CHECK(perfect.map == 1.0);
    CHECK(perfect.mrr == 1.0);
    auto worst = mean_metrics(group_pairs(pairs, anti));
    CHECK(worst.p_at_1 == 0.0);
}

TEST_CASE("group_pairs groups by query id in first-appearance order") {
    std::vector<RankPair> pairs{
        {"q2", "x", "a", 1, 1}, {"q1", "y", "b", 0, 2}, {"q2", "x", "c", 0, 3}};
    auto groups = group_pairs(pairs, {0.9, 0.5, 0.1});
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].query_id == "q2");
    CHECK(groups[0].candidates.size() == 2);
    CHECK(groups[1].query_id == "q1");
    CHECK(groups[0].candidates[0].score == 0.9);

    CHECK_THROWS_AS(group_pairs(pairs, {0.1}), std::invalid_argument);
}

TEST_CASE("report text lists one metric per line") {
    auto r = mean_metrics({group({{1, 2}, {0, 1}}, "a")}, {{2, 1}});
    auto text = r.to_text();
    CHECK(text.find("map\t1") != std::string::npos);
    CHECK(text.find("r2@1\t1") != std::string::npos);
    CHECK(text.find("groups_evaluated\t1") != std::string::npos);
}
