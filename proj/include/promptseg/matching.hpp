#pragma once

#include <utility>
#include <vector>

#include "promptseg/predictions.hpp"

namespace promptseg {

// One-to-one matcher weights. Defaults are the training configuration and
// are mirrored by the golden-config test.
struct MatcherWeights {
    double w_cls = 2.0;
    double w_box = 5.0;
    double w_giou = 2.0;
    double alpha_match = 0.25;
    double gamma_match = 2.0;
    bool stable = false;    // no tie-stabilizing perturbation; ties break on lowest query index
};

// One-to-many auxiliary matcher configuration.
struct O2MConfig {
    int top_k = 4;
    double threshold = 0.4;
    double alpha_o2m = 0.3;
};

// One-to-one assignment of targets to queries.
struct Assignment {
    std::vector<std::pair<int, int>> pairs;    // (query index, target index)
    std::vector<int> unmatched_queries;
    double total_cost = 0.0;
};

// One-to-many assignment; a query serves at most one target, a target may be
// served by up to top_k queries (its O2O partner always included).
struct MultiAssignment {
    std::vector<std::pair<int, int>> pairs;    // (query index, target index)
};

using CostMatrix = std::vector<std::vector<double>>;    // N queries x M targets

// Focal classification cost, positive-minus-negative form:
//   C(p) = alpha * (1-p)^gamma * (-log p) - (1-alpha) * p^gamma * (-log(1-p))
double focal_match_cost(double p, double alpha, double gamma);

CostMatrix pairwise_cost(const std::vector<QueryPrediction>& preds,
                         const std::vector<InstanceTarget>& targets, const MatcherWeights& w);

// Minimum-cost injection of targets into queries (Kuhn-Munkres / shortest
// augmenting path). Requires N >= M and finite costs.
Assignment hungarian_assign(const CostMatrix& cost);

// Exhaustive oracle over all injections, M <= 8. Ties broken by preferring
// lower query indices in target order.
Assignment brute_force_assign(const CostMatrix& cost);

// Auxiliary one-to-many assignment around an existing O2O assignment.
// Candidates for target j are queries not O2O-assigned to another target,
// ranked by s(i,j) = alpha*p_i + (1-alpha)*iou(b_i, b_j) and admitted when
// s >= threshold, up to top_k per target; the O2O partner is always admitted
// and counts toward top_k. A query admitted for several targets keeps only
// its best-scoring one.
MultiAssignment one_to_many_assign(const std::vector<QueryPrediction>& preds,
                                   const std::vector<InstanceTarget>& targets,
                                   const CostMatrix& cost, const Assignment& o2o,
                                   const O2MConfig& cfg);

} // namespace promptseg
