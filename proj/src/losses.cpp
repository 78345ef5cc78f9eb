#include "promptseg/losses.hpp"

#include <cmath>

#include "promptseg/errors.hpp"

namespace promptseg {

namespace {

double clamp_prob(double p) {
    if (p < kProbClamp) return kProbClamp;
    if (p > 1.0 - kProbClamp) return 1.0 - kProbClamp;
    return p;
}

// d(clamped sigmoid)/dlogit; zero inside the clamp band.
double dsigmoid(double logit) {
    const double p = sigmoid(logit);
    if (p <= kProbClamp || p >= 1.0 - kProbClamp) return 0.0;
    return p * (1.0 - p);
}

double bce(double p, int y) { return y ? -std::log(p) : -std::log(1.0 - p); }

} // namespace

double focal_bce(double p, int y, double alpha, double gamma) {
    p = clamp_prob(p);
    if (y)
        return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
    return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

double focal_bce_logit(double logit, int y, double alpha, double gamma, double* dlogit) {
    const double p = sigmoid_clamped(logit);
    const double val = focal_bce(p, y, alpha, gamma);
    if (dlogit) {
        double dp;
        if (y) {
            const double mod = std::pow(1.0 - p, gamma);
            dp = -alpha * mod / p;
            if (gamma != 0.0) dp += alpha * gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p);
        } else {
            const double mod = std::pow(p, gamma);
            dp = (1.0 - alpha) * mod / (1.0 - p);
            if (gamma != 0.0)
                dp += -(1.0 - alpha) * gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p);
        }
        *dlogit = dp * dsigmoid(logit);
    }
    return val;
}

double presence_loss(double p, int y, double pos_weight) {
    p = clamp_prob(p);
    return y ? pos_weight * -std::log(p) : -std::log(1.0 - p);
}

double presence_loss_logit(double logit, int y, double pos_weight, double* dlogit) {
    const double p = sigmoid_clamped(logit);
    if (dlogit) {
        // (-w*y/p + (1-y)/(1-p)) * p(1-p), simplified
        const double g = y ? -pos_weight * (1.0 - p) : p;
        *dlogit = (dsigmoid(logit) == 0.0) ? 0.0 : g;
    }
    return presence_loss(p, y, pos_weight);
}

double dice_loss(const Grid& pred_probs, const BinaryMask& gt, double eps) {
    if (pred_probs.h != gt.h || pred_probs.w != gt.w)
        throw ValidationError("dice_loss: shape mismatch");
    double inter = 0, sum_p = 0, sum_g = 0;
    for (size_t i = 0; i < pred_probs.size(); ++i) {
        const double p = pred_probs.v[i];
        const double g = gt.v[i] ? 1.0 : 0.0;
        inter += p * g;
        sum_p += p;
        sum_g += g;
    }
    return 1.0 - (2.0 * inter + eps) / (sum_p + sum_g + eps);
}

double dice_loss_logits(const std::vector<double>& logits, const std::vector<uint8_t>& gt,
                        double eps, std::vector<double>* dlogits) {
    if (logits.size() != gt.size()) throw ValidationError("dice_loss: shape mismatch");
    double inter = 0, sum_p = 0, sum_g = 0;
    std::vector<double> probs(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        probs[i] = sigmoid_clamped(logits[i]);
        const double g = gt[i] ? 1.0 : 0.0;
        inter += probs[i] * g;
        sum_p += probs[i];
        sum_g += g;
    }
    const double denom = sum_p + sum_g + eps;
    const double num = 2.0 * inter + eps;
    if (dlogits) {
        dlogits->resize(logits.size());
        for (size_t i = 0; i < logits.size(); ++i) {
            const double g = gt[i] ? 1.0 : 0.0;
            const double dp = -(2.0 * g * denom - num) / (denom * denom);
            (*dlogits)[i] = dp * dsigmoid(logits[i]);
        }
    }
    return 1.0 - num / denom;
}

FindLossResult find_loss(const std::vector<QueryPrediction>& preds,
                         const std::vector<InstanceTarget>& targets,
                         const std::vector<std::pair<int, int>>& pairs, const FindWeights& w,
                         std::optional<int> normalizer) {
    if (static_cast<int>(preds.size()) != w.n_q)
        throw ValidationError("find_loss: queries must be padded to n_q");
    std::vector<int> matched(preds.size(), 0);
    for (auto [q, t] : pairs) {
        if (q < 0 || q >= static_cast<int>(preds.size()) || t < 0 ||
            t >= static_cast<int>(targets.size()))
            throw ValidationError("find_loss: assignment index out of range");
        matched[q] = 1;
    }

    FindLossResult r;
    r.matched_count = normalizer.value_or(std::max<int>(1, static_cast<int>(pairs.size())));

    double ce = 0, pres = 0, l1 = 0, giou = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        ce += focal_bce(sigmoid_clamped(preds[i].class_logit), matched[i], w.alpha_cls,
                        w.gamma_cls);
        pres += presence_loss(sigmoid_clamped(preds[i].presence_logit), matched[i], w.pos_weight);
    }
    for (auto [q, t] : pairs) {
        l1 += l1_box(preds[q].box, targets[t].box);
        giou += 1.0 - box_giou(preds[q].box, targets[t].box);
    }
    const double mc = r.matched_count;
    r.ce = w.lambda_ce * ce / mc;
    r.pres = w.lambda_pr * pres / mc;
    r.l1 = w.lambda_l1 * l1 / mc;
    r.giou = w.lambda_g * giou / mc;
    r.total = r.ce + r.pres + r.l1 + r.giou;
    return r;
}

SegLossResult seg_loss(const std::vector<Grid>& pred_mask_probs,
                       const std::vector<const BinaryMask*>& gt_masks, int prompt_present,
                       double global_presence_prob, const SegWeights& w,
                       std::optional<int> normalizer) {
    if (pred_mask_probs.size() != gt_masks.size())
        throw ValidationError("seg_loss: mask count mismatch");

    SegLossResult r;
    r.matched_count =
        normalizer.value_or(std::max<int>(1, static_cast<int>(pred_mask_probs.size())));

    double focal_sum = 0, dice_sum = 0;
    for (size_t k = 0; k < pred_mask_probs.size(); ++k) {
        const Grid& probs = pred_mask_probs[k];
        const BinaryMask& gt = *gt_masks[k];
        if (probs.h != gt.h || probs.w != gt.w)
            throw ValidationError("seg_loss: mask shape mismatch");
        double px_sum = 0;
        for (size_t i = 0; i < probs.size(); ++i)
            px_sum += focal_bce(probs.v[i], gt.v[i] ? 1 : 0, w.alpha_seg, w.gamma_seg);
        focal_sum += px_sum / static_cast<double>(probs.size());    // mean over pixels
        dice_sum += dice_loss(probs, gt, w.dice_eps);
    }
    const double mc = r.matched_count;
    r.focal = w.lambda_f * focal_sum / mc;
    r.dice = w.lambda_d * dice_sum / mc;
    r.presence = w.lambda_sp * bce(clamp_prob(global_presence_prob), prompt_present);
    r.total = r.focal + r.dice + r.presence;
    return r;
}

double total_loss(double find_o2o, double find_o2m, double seg, double lambda_o2m) {
    return find_o2o + lambda_o2m * find_o2m + seg;
}

} // namespace promptseg
