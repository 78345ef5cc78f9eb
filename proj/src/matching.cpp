#include "promptseg/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "promptseg/errors.hpp"

namespace promptseg {

double focal_match_cost(double p, double alpha, double gamma) {
    const double pos = alpha * std::pow(1.0 - p, gamma) * (-std::log(p));
    const double neg = (1.0 - alpha) * std::pow(p, gamma) * (-std::log(1.0 - p));
    return pos - neg;
}

CostMatrix pairwise_cost(const std::vector<QueryPrediction>& preds,
                         const std::vector<InstanceTarget>& targets, const MatcherWeights& w) {
    if (preds.empty() || targets.empty())
        throw ValidationError("pairwise_cost: need at least one query and one target");
    CostMatrix cost(preds.size(), std::vector<double>(targets.size()));
    for (size_t i = 0; i < preds.size(); ++i) {
        if (!std::isfinite(preds[i].class_logit))
            throw ValidationError("pairwise_cost: non-finite class logit");
        const double p = sigmoid_clamped(preds[i].class_logit);
        const double cls = w.w_cls * focal_match_cost(p, w.alpha_match, w.gamma_match);
        for (size_t j = 0; j < targets.size(); ++j) {
            cost[i][j] = cls + w.w_box * l1_box(preds[i].box, targets[j].box) -
                         w.w_giou * box_giou(preds[i].box, targets[j].box);
            if (!std::isfinite(cost[i][j]))
                throw ValidationError("pairwise_cost: non-finite cost entry");
        }
    }
    return cost;
}

namespace {

Assignment finalize(const CostMatrix& cost, std::vector<int> query_of_target) {
    Assignment out;
    const int n = static_cast<int>(cost.size());
    std::vector<char> used(n, 0);
    for (int j = 0; j < static_cast<int>(query_of_target.size()); ++j) {
        const int q = query_of_target[j];
        out.pairs.emplace_back(q, j);
        out.total_cost += cost[q][j];
        used[q] = 1;
    }
    std::sort(out.pairs.begin(), out.pairs.end());
    for (int i = 0; i < n; ++i)
        if (!used[i]) out.unmatched_queries.push_back(i);
    return out;
}

} // namespace

Assignment hungarian_assign(const CostMatrix& cost) {
    const int n = static_cast<int>(cost.size());             // queries
    const int m = n ? static_cast<int>(cost[0].size()) : 0;  // targets
    if (n == 0 || m == 0) throw ValidationError("hungarian_assign: empty cost matrix");
    if (n < m) throw ValidationError("more targets than queries");
    for (const auto& row : cost)
        for (double c : row)
            if (!std::isfinite(c)) throw ValidationError("hungarian_assign: non-finite cost");

    // Shortest-augmenting-path Kuhn-Munkres over targets (rows of the dual
    // view), injecting each target into a distinct query. 1-indexed with a
    // virtual query 0, as in the classic formulation.
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(m + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> match(n + 1, 0);    // match[q] = target occupying query q (1-indexed)
    std::vector<int> way(n + 1, 0);

    for (int t = 1; t <= m; ++t) {
        match[0] = t;
        int q0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[q0] = 1;
            const int t0 = match[q0];
            double delta = kInf;
            int q1 = -1;
            for (int q = 1; q <= n; ++q) {
                if (used[q]) continue;
                const double cur = cost[q - 1][t0 - 1] - u[t0] - v[q];
                if (cur < minv[q]) {
                    minv[q] = cur;
                    way[q] = q0;
                }
                if (minv[q] < delta) {
                    delta = minv[q];
                    q1 = q;
                }
            }
            for (int q = 0; q <= n; ++q) {
                if (used[q]) {
                    u[match[q]] += delta;
                    v[q] -= delta;
                } else {
                    minv[q] -= delta;
                }
            }
            q0 = q1;
        } while (match[q0] != 0);
        do {
            const int q1 = way[q0];
            match[q0] = match[q1];
            q0 = q1;
        } while (q0);
    }

    std::vector<int> query_of_target(m, -1);
    for (int q = 1; q <= n; ++q)
        if (match[q] != 0) query_of_target[match[q] - 1] = q - 1;
    return finalize(cost, std::move(query_of_target));
}

Assignment brute_force_assign(const CostMatrix& cost) {
    const int n = static_cast<int>(cost.size());
    const int m = n ? static_cast<int>(cost[0].size()) : 0;
    if (n == 0 || m == 0) throw ValidationError("brute_force_assign: empty cost matrix");
    if (n < m) throw ValidationError("more targets than queries");
    if (m > 8) throw ValidationError("brute_force_assign: more than 8 targets");

    std::vector<int> current(m, -1), best;
    std::vector<char> used(n, 0);
    double best_total = std::numeric_limits<double>::infinity();

    // depth-first over targets, queries tried in ascending order; strict
    // improvement keeps the first (lowest-query-index) optimum
    auto recurse = [&](auto&& self, int target, double total) -> void {
        if (target == m) {
            if (total < best_total) {
                best_total = total;
                best = current;
            }
            return;
        }
        for (int q = 0; q < n; ++q) {
            if (used[q]) continue;
            used[q] = 1;
            current[target] = q;
            self(self, target + 1, total + cost[q][target]);
            used[q] = 0;
        }
    };
    recurse(recurse, 0, 0.0);
    return finalize(cost, std::move(best));
}

MultiAssignment one_to_many_assign(const std::vector<QueryPrediction>& preds,
                                   const std::vector<InstanceTarget>& targets,
                                   const CostMatrix& cost, const Assignment& o2o,
                                   const O2MConfig& cfg) {
    const int n = static_cast<int>(preds.size());
    const int m = static_cast<int>(targets.size());
    if (static_cast<int>(cost.size()) != n || (n && static_cast<int>(cost[0].size()) != m))
        throw ValidationError("one_to_many_assign: cost shape mismatch");

    std::vector<int> o2o_target_of(n, -1);
    for (auto [q, t] : o2o.pairs) o2o_target_of[q] = t;

    struct Admission {
        int query;
        int target;
        double score;
        bool is_o2o;
    };
    std::vector<Admission> admitted;

    for (int j = 0; j < m; ++j) {
        std::vector<Admission> candidates;
        for (int i = 0; i < n; ++i) {
            if (o2o_target_of[i] != -1 && o2o_target_of[i] != j) continue;
            const double p = sigmoid_clamped(preds[i].class_logit);
            const double s =
                cfg.alpha_o2m * p + (1.0 - cfg.alpha_o2m) * box_iou(preds[i].box, targets[j].box);
            candidates.push_back({i, j, s, o2o_target_of[i] == j});
        }
        // O2O partner first, then by descending score, ties on lower index
        std::sort(candidates.begin(), candidates.end(), [](const Admission& a, const Admission& b) {
            if (a.is_o2o != b.is_o2o) return a.is_o2o;
            if (a.score != b.score) return a.score > b.score;
            return a.query < b.query;
        });
        int taken = 0;
        for (const auto& c : candidates) {
            if (taken >= cfg.top_k) break;
            if (!c.is_o2o && c.score < cfg.threshold) continue;
            admitted.push_back(c);
            ++taken;
        }
    }

    // a query admitted for several targets keeps only its best-scoring one
    // (O2O membership wins, then score, then lower target index)
    std::vector<int> best_idx(n, -1);
    for (int k = 0; k < static_cast<int>(admitted.size()); ++k) {
        const auto& c = admitted[k];
        if (best_idx[c.query] == -1) {
            best_idx[c.query] = k;
            continue;
        }
        const auto& prev = admitted[best_idx[c.query]];
        if ((c.is_o2o && !prev.is_o2o) || (c.is_o2o == prev.is_o2o && c.score > prev.score))
            best_idx[c.query] = k;
    }

    MultiAssignment out;
    for (int k = 0; k < static_cast<int>(admitted.size()); ++k)
        if (best_idx[admitted[k].query] == k)
            out.pairs.emplace_back(admitted[k].query, admitted[k].target);
    std::sort(out.pairs.begin(), out.pairs.end());
    return out;
}

} // namespace promptseg
