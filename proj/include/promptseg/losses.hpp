#pragma once

#include <optional>
#include <vector>

#include "promptseg/matching.hpp"
#include "promptseg/predictions.hpp"

namespace promptseg {

// Finding-loss weights (classification, presence, box regression).
struct FindWeights {
    double lambda_ce = 20.0;
    double lambda_pr = 20.0;
    double alpha_cls = 0.25;
    double gamma_cls = 2.0;
    double pos_weight = 10.0;
    double lambda_l1 = 5.0;
    double lambda_g = 2.0;
    int n_q = 200;
};

// Segmentation-loss weights (pixel focal, dice, semantic presence).
struct SegWeights {
    double alpha_seg = 0.6;
    double gamma_seg = 2.0;
    double lambda_f = 20.0;
    double lambda_d = 30.0;
    double lambda_sp = 1.0;
    double dice_eps = 1.0;
};

constexpr double kLambdaO2M = 2.0;

// Per-component loss values for one step; every component already carries its
// lambda weight and the matched-count normalization.
struct LossBreakdown {
    double ce = 0;
    double pres = 0;
    double l1 = 0;
    double giou = 0;
    double find_o2o = 0;
    double find_o2m = 0;
    double seg_focal = 0;
    double dice = 0;
    double seg_pres = 0;
    double total = 0;
    int matched_count = 1;
};

// ---- scalar kernels (value + analytic d/dlogit) -------------------------

// Focal BCE on a probability. y=1: -alpha*(1-p)^gamma*log(p);
// y=0: -(1-alpha)*p^gamma*log(1-p).
double focal_bce(double p, int y, double alpha, double gamma);
// Same loss driven by a logit (p = clamped sigmoid); also yields d/dlogit.
double focal_bce_logit(double logit, int y, double alpha, double gamma,
                       double* dlogit = nullptr);

// Weighted BCE for query presence: -[w*y*log(p) + (1-y)*log(1-p)].
double presence_loss(double p, int y, double pos_weight = 10.0);
double presence_loss_logit(double logit, int y, double pos_weight, double* dlogit = nullptr);

// Smooth dice loss: 1 - (2*sum(p*g)+eps) / (sum(p)+sum(g)+eps).
double dice_loss(const Grid& pred_probs, const BinaryMask& gt, double eps);
// Logit-driven variant over a flat pixel vector, with optional gradient.
double dice_loss_logits(const std::vector<double>& logits, const std::vector<uint8_t>& gt,
                        double eps, std::vector<double>* dlogits = nullptr);

// ---- composite objectives -----------------------------------------------

struct FindLossResult {
    double total = 0;     // normalized
    double ce = 0, pres = 0, l1 = 0, giou = 0;    // normalized components (with lambdas)
    int matched_count = 1;
};

// Finding loss over n_q queries: focal classification and presence
// over every query (matched -> positive), plus L1/GIoU over matched pairs,
// all divided by matched_count. `normalizer` overrides the count (used for
// batch-wise normalization); the assignment's own clamped pair count is the
// default.
FindLossResult find_loss(const std::vector<QueryPrediction>& preds,
                         const std::vector<InstanceTarget>& targets,
                         const std::vector<std::pair<int, int>>& pairs, const FindWeights& w,
                         std::optional<int> normalizer = std::nullopt);

struct SegLossResult {
    double total = 0;
    double focal = 0, dice = 0, presence = 0;    // weighted components
    int matched_count = 1;
};

// Segmentation loss over matched masks (probabilities at canvas resolution,
// aligned with gt_masks) plus the image-level semantic presence term.
// Per-mask terms are normalized by matched_count (overridable); the presence
// term is not.
SegLossResult seg_loss(const std::vector<Grid>& pred_mask_probs,
                       const std::vector<const BinaryMask*>& gt_masks, int prompt_present,
                       double global_presence_prob, const SegWeights& w,
                       std::optional<int> normalizer = std::nullopt);

// Total objective: find_o2o + lambda_o2m * find_o2m + seg.
double total_loss(double find_o2o, double find_o2m, double seg, double lambda_o2m = kLambdaO2M);

} // namespace promptseg
