#include "promptseg/objective.hpp"

#include <array>
#include <cmath>

#include "promptseg/errors.hpp"

namespace promptseg {

Assignment match_example(const std::vector<QueryPrediction>& preds,
                         const ExampleTargets& targets, const MatcherWeights& w,
                         CostMatrix* cost_out) {
    if (targets.instances.empty()) {
        if (cost_out) cost_out->clear();
        Assignment a;
        for (int i = 0; i < static_cast<int>(preds.size()); ++i) a.unmatched_queries.push_back(i);
        return a;
    }
    CostMatrix cost = pairwise_cost(preds, targets.instances, w);
    Assignment a = hungarian_assign(cost);
    if (cost_out) *cost_out = std::move(cost);
    return a;
}

ExampleLoss build_example_objective(Tape& tape, const ForwardOutput& out,
                                    const QuerySegmenter& model, const ExampleTargets& targets,
                                    const ObjectiveWeights& w, double matched_norm,
                                    double presence_norm, const Assignment* precomputed_o2o,
                                    const MultiAssignment* precomputed_o2m) {
    const ModelConfig& cfg = model.config();
    const int n_q = cfg.n_q;
    const int mg = cfg.resolved_mask_grid();
    if (static_cast<int>(targets.instances.size()) > n_q)
        throw ValidationError("objective: more targets than queries");

    ExampleLoss result;
    if (precomputed_o2o) {
        result.o2o = *precomputed_o2o;
        if (precomputed_o2m) result.o2m = *precomputed_o2m;
    } else {
        const std::vector<QueryPrediction> preds = model.predictions_from(tape, out);
        CostMatrix cost;
        result.o2o = match_example(preds, targets, w.matcher, &cost);
        if (!targets.instances.empty())
            result.o2m = one_to_many_assign(preds, targets.instances, cost, result.o2o, w.o2m);
    }

    const double inv_norm = 1.0 / matched_norm;
    std::vector<std::pair<Var, double>> terms;

    auto add_find_branch = [&](const std::vector<std::pair<int, int>>& pairs, double branch_w,
                               double* ce_out, double* pres_out, double* l1_out,
                               double* giou_out) {
        std::vector<int> y(n_q, 0);
        std::vector<int> box_rows;
        std::vector<std::array<double, 4>> box_targets;
        for (auto [q, t] : pairs) {
            y[q] = 1;
            box_rows.push_back(q);
            const NormBox& tb = targets.instances[t].box;
            box_targets.push_back({tb.cx, tb.cy, tb.w, tb.h});
        }
        Var ce = tape.focal_bce_sum(out.class_logits, y, w.find.alpha_cls, w.find.gamma_cls);
        Var pres = tape.presence_bce_sum(out.presence_logits, y, w.find.pos_weight);
        terms.emplace_back(ce, branch_w * w.find.lambda_ce * inv_norm);
        terms.emplace_back(pres, branch_w * w.find.lambda_pr * inv_norm);
        *ce_out = branch_w * w.find.lambda_ce * inv_norm * tape.scalar(ce);
        *pres_out = branch_w * w.find.lambda_pr * inv_norm * tape.scalar(pres);
        *l1_out = 0;
        *giou_out = 0;
        if (!box_rows.empty()) {
            Var l1 = tape.box_l1_sum(out.boxes, box_rows, box_targets);
            Var gi = tape.box_giou_sum(out.boxes, box_rows, box_targets);
            terms.emplace_back(l1, branch_w * w.find.lambda_l1 * inv_norm);
            terms.emplace_back(gi, branch_w * w.find.lambda_g * inv_norm);
            *l1_out = branch_w * w.find.lambda_l1 * inv_norm * tape.scalar(l1);
            *giou_out = branch_w * w.find.lambda_g * inv_norm * tape.scalar(gi);
        }
    };

    double ce, pres, l1, giou;
    add_find_branch(result.o2o.pairs, 1.0, &ce, &pres, &l1, &giou);
    result.values.ce = ce;
    result.values.pres = pres;
    result.values.l1 = l1;
    result.values.giou = giou;
    result.values.find_o2o = ce + pres + l1 + giou;

    double ce2, pres2, l12, giou2;
    add_find_branch(result.o2m.pairs, w.lambda_o2m, &ce2, &pres2, &l12, &giou2);
    // stored unweighted so total == find_o2o + lambda_o2m * find_o2m + seg
    result.values.find_o2m =
        w.lambda_o2m != 0.0 ? (ce2 + pres2 + l12 + giou2) / w.lambda_o2m : 0.0;

    // segmentation loss over O2O-matched masks at canvas resolution
    double seg_focal = 0, seg_dice = 0;
    for (auto [q, t] : result.o2o.pairs) {
        Var row = tape.gather_rows(out.mask_logits, {q});
        Var up = tape.upsample_rows(row, mg, mg, cfg.canvas, cfg.canvas);
        Var focal = tape.mask_focal_mean(up, targets.instances[t].mask.v, w.seg.alpha_seg,
                                         w.seg.gamma_seg);
        Var dce = tape.mask_dice(up, targets.instances[t].mask.v, w.seg.dice_eps);
        terms.emplace_back(focal, w.seg.lambda_f * inv_norm);
        terms.emplace_back(dce, w.seg.lambda_d * inv_norm);
        seg_focal += w.seg.lambda_f * inv_norm * tape.scalar(focal);
        seg_dice += w.seg.lambda_d * inv_norm * tape.scalar(dce);
    }
    Var sp = tape.max_confidence_bce(out.class_logits, out.presence_logits,
                                     targets.prompt_present);
    terms.emplace_back(sp, w.seg.lambda_sp * presence_norm);

    result.values.seg_focal = seg_focal;
    result.values.dice = seg_dice;
    result.values.seg_pres = w.seg.lambda_sp * presence_norm * tape.scalar(sp);
    result.values.matched_count = static_cast<int>(std::lround(matched_norm));
    result.total = tape.weighted_sum(terms);
    result.values.total = tape.scalar(result.total);
    return result;
}

} // namespace promptseg
