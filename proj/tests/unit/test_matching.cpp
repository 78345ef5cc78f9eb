#include <doctest.h>

#include <cmath>

#include "promptseg/matching.hpp"
#include "promptseg/rng.hpp"

using namespace promptseg;

namespace {

QueryPrediction pred_with(double class_logit, NormBox box) {
    QueryPrediction p;
    p.class_logit = class_logit;
    p.presence_logit = 0.0;
    p.box = box;
    return p;
}

InstanceTarget target_with(NormBox box) {
    InstanceTarget t;
    t.box = box;
    return t;
}

double logit_of(double p) { return std::log(p / (1.0 - p)); }

CostMatrix random_cost(SplitMix64& rng, int n, int m, bool integer) {
    CostMatrix c(n, std::vector<double>(m));
    for (auto& row : c)
        for (double& v : row)
            v = integer ? static_cast<double>(rng.next_below(100)) : rng.next_double(-5.0, 5.0);
    return c;
}

} // namespace

TEST_SUITE("matching") {

TEST_CASE("focal cost at p=0.5 and the assembled pair cost") {
    const double c_focal = focal_match_cost(0.5, 0.25, 2.0);
    CHECK(c_focal == doctest::Approx(-0.086643397570).epsilon(1e-9));

    const NormBox box{0.5, 0.5, 0.2, 0.2};
    const auto cost = pairwise_cost({pred_with(logit_of(0.5), box)}, {target_with(box)},
                                    MatcherWeights{});
    CHECK(cost[0][0] == doctest::Approx(-2.173286795140).epsilon(1e-9));
}

TEST_CASE("as p -> 1 the positive focal part vanishes and cost stays below -w_giou") {
    const NormBox box{0.5, 0.5, 0.2, 0.2};
    const MatcherWeights w;
    double prev_cost = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double p = 1.0 - std::pow(10.0, -(i + 2));    // 0.99, 0.999, 0.9999
        const double pos_part = w.alpha_match * std::pow(1.0 - p, w.gamma_match) * -std::log(p);
        CHECK(pos_part < 1e-5);
        const auto cost = pairwise_cost({pred_with(logit_of(p), box)}, {target_with(box)}, w);
        CHECK(cost[0][0] < -2.0);    // giou term plus a negative classification term
        if (i > 0) CHECK(cost[0][0] < prev_cost);
        prev_cost = cost[0][0];
    }
}

TEST_CASE("w_box scales only the l1 contribution") {
    const NormBox a{0.5, 0.5, 0.2, 0.2};
    const NormBox b{0.6, 0.5, 0.2, 0.4};
    MatcherWeights w;
    const auto c1 = pairwise_cost({pred_with(0.3, a)}, {target_with(b)}, w);
    w.w_box *= 2.0;
    const auto c2 = pairwise_cost({pred_with(0.3, a)}, {target_with(b)}, w);
    CHECK(c2[0][0] - c1[0][0] == doctest::Approx(5.0 * l1_box(a, b)));
}

TEST_CASE("cost is strictly decreasing in p for fixed boxes") {
    const NormBox box{0.5, 0.5, 0.2, 0.2};
    const MatcherWeights w;
    double prev = pairwise_cost({pred_with(-6.0, box)}, {target_with(box)}, w)[0][0];
    for (double logit = -5.0; logit <= 6.0; logit += 0.5) {
        const double cur = pairwise_cost({pred_with(logit, box)}, {target_with(box)}, w)[0][0];
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("non-finite logits are rejected") {
    const NormBox box{0.5, 0.5, 0.2, 0.2};
    CHECK_THROWS_AS(
        pairwise_cost({pred_with(std::nan(""), box)}, {target_with(box)}, MatcherWeights{}),
        ValidationError);
}

TEST_CASE("hungarian on singleton and hand-enumerable matrices") {
    const Assignment single = hungarian_assign({{0.0}});
    CHECK(single.pairs == std::vector<std::pair<int, int>>{{0, 0}});
    CHECK(single.total_cost == doctest::Approx(0.0));

    const Assignment swap = hungarian_assign({{1, 2}, {2, 1}});
    CHECK(swap.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
    CHECK(swap.total_cost == doctest::Approx(2.0));
}

TEST_CASE("hungarian rejects more targets than queries") {
    CHECK_THROWS_WITH_AS(hungarian_assign({{1.0, 2.0}}), "more targets than queries",
                         ValidationError);
}

TEST_CASE("brute force tie-break prefers the lowest query index") {
    const Assignment tie = brute_force_assign({{1, 1}, {1, 1}});
    CHECK(tie.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
    const Assignment tie_h = hungarian_assign({{1, 1}, {1, 1}});
    CHECK(tie_h.pairs == tie.pairs);
}

TEST_CASE("brute force guards the combinatorial explosion") {
    CostMatrix big(9, std::vector<double>(9, 1.0));
    CHECK_THROWS_AS(brute_force_assign(big), ValidationError);
}

TEST_CASE("hungarian equals brute force on random matrices") {
    SplitMix64 rng(123);
    for (int trial = 0; trial < 300; ++trial) {
        const int m = 1 + static_cast<int>(rng.next_below(7));
        const int n = m + static_cast<int>(rng.next_below(3));
        const bool integer = trial % 2 == 0;
        const CostMatrix cost = random_cost(rng, n, m, integer);
        const Assignment h = hungarian_assign(cost);
        const Assignment b = brute_force_assign(cost);
        if (integer)
            CHECK(h.total_cost == b.total_cost);
        else
            CHECK(std::abs(h.total_cost - b.total_cost) <= 1e-9);
        CHECK(h.pairs.size() == static_cast<size_t>(m));
        CHECK(h.unmatched_queries.size() == static_cast<size_t>(n - m));
    }
}

TEST_CASE("assignment is invariant to a constant cost shift") {
    SplitMix64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int m = 2 + static_cast<int>(rng.next_below(5));
        const int n = m + static_cast<int>(rng.next_below(3));
        CostMatrix cost = random_cost(rng, n, m, false);
        const Assignment base = hungarian_assign(cost);
        const double shift = rng.next_double(-10.0, 10.0);
        for (auto& row : cost)
            for (double& v : row) v += shift;
        const Assignment shifted = hungarian_assign(cost);
        CHECK(shifted.pairs == base.pairs);
        CHECK(shifted.total_cost == doctest::Approx(base.total_cost + shift * m));
    }
}

TEST_CASE("o2m always includes the o2o partner, even below threshold") {
    const NormBox tbox{0.5, 0.5, 0.2, 0.2};
    const NormBox far{0.1, 0.1, 0.05, 0.05};    // zero iou with tbox
    std::vector<QueryPrediction> preds{pred_with(logit_of(0.01), far)};
    std::vector<InstanceTarget> targets{target_with(tbox)};
    const auto cost = pairwise_cost(preds, targets, MatcherWeights{});
    const Assignment o2o = hungarian_assign(cost);
    const MultiAssignment o2m = one_to_many_assign(preds, targets, cost, o2o, O2MConfig{});
    CHECK(o2m.pairs == o2o.pairs);
}

TEST_CASE("o2m caps admissions at top_k") {
    const NormBox box{0.5, 0.5, 0.2, 0.2};
    std::vector<QueryPrediction> preds;
    for (int i = 0; i < 6; ++i) preds.push_back(pred_with(logit_of(0.9 - 0.01 * i), box));
    std::vector<InstanceTarget> targets{target_with(box)};
    const auto cost = pairwise_cost(preds, targets, MatcherWeights{});
    const Assignment o2o = hungarian_assign(cost);
    const MultiAssignment o2m = one_to_many_assign(preds, targets, cost, o2o, O2MConfig{});
    CHECK(o2m.pairs.size() == 4);    // all six score >= threshold, top_k admits 4
}

TEST_CASE("o2m score formula admits a perfect candidate") {
    // s = 0.3 * 1 + 0.7 * 1 = 1.0 >= 0.4
    const NormBox box{0.5, 0.5, 0.2, 0.2};
    std::vector<QueryPrediction> preds{pred_with(16.0, box), pred_with(16.0, box)};
    std::vector<InstanceTarget> targets{target_with(box)};
    const auto cost = pairwise_cost(preds, targets, MatcherWeights{});
    const Assignment o2o = hungarian_assign(cost);
    const MultiAssignment o2m = one_to_many_assign(preds, targets, cost, o2o, O2MConfig{});
    CHECK(o2m.pairs.size() == 2);
}

TEST_CASE("o2m properties on random instances") {
    SplitMix64 rng(77);
    const O2MConfig cfg;
    for (int trial = 0; trial < 50; ++trial) {
        const int m = 1 + static_cast<int>(rng.next_below(4));
        const int n = m + 2 + static_cast<int>(rng.next_below(8));
        std::vector<QueryPrediction> preds;
        std::vector<InstanceTarget> targets;
        for (int i = 0; i < n; ++i) {
            NormBox b;
            b.w = rng.next_double(0.1, 0.4);
            b.h = rng.next_double(0.1, 0.4);
            b.cx = rng.next_double(0.25, 0.75);
            b.cy = rng.next_double(0.25, 0.75);
            preds.push_back(pred_with(rng.next_double(-3, 3), b));
            if (i < m) targets.push_back(target_with(b));
        }
        const auto cost = pairwise_cost(preds, targets, MatcherWeights{});
        const Assignment o2o = hungarian_assign(cost);
        const MultiAssignment o2m = one_to_many_assign(preds, targets, cost, o2o, cfg);

        // every o2o pair appears in o2m
        for (const auto& pr : o2o.pairs)
            CHECK(std::find(o2m.pairs.begin(), o2m.pairs.end(), pr) != o2m.pairs.end());
        // per-target multiplicity <= top_k, queries serve at most one target
        std::vector<int> per_target(m, 0), per_query(n, 0);
        for (auto [q, t] : o2m.pairs) {
            ++per_target[t];
            ++per_query[q];
        }
        for (int t = 0; t < m; ++t) CHECK(per_target[t] <= cfg.top_k);
        for (int q = 0; q < n; ++q) CHECK(per_query[q] <= 1);
    }
}

} // TEST_SUITE
