#include "promptseg/schedule.hpp"

#include <cmath>

#include "promptseg/errors.hpp"

namespace promptseg {

double llrd_rate(int layer, const LLRDSpec& spec) {
    if (layer < 1 || layer > spec.layers)
        throw ValidationError("llrd_rate: layer " + std::to_string(layer) + " out of 1.." +
                              std::to_string(spec.layers));
    return spec.eta_base * std::pow(spec.gamma, spec.layers - layer);
}

double lr_at_step(int64_t step, double base, const ScheduleSpec& spec) {
    if (step < 1) throw ValidationError("lr_at_step: step must be >= 1");
    if (step <= spec.warmup_steps)
        return base * static_cast<double>(step) / static_cast<double>(spec.warmup_steps);
    return base * std::sqrt(static_cast<double>(spec.warmup_steps) / static_cast<double>(step));
}

double effective_rate(const std::string& group, int layer, int64_t step, const GroupRates& rates,
                      const LLRDSpec& llrd, const ScheduleSpec& sched) {
    double base;
    if (group == kGroupVision) {
        LLRDSpec s = llrd;
        s.eta_base = rates.vision_backbone;
        base = llrd_rate(layer, s);
    } else {
        if (layer != 0)
            throw ValidationError("effective_rate: layer index only applies to the vision backbone");
        if (group == kGroupDecoder)
            base = rates.decoder_seg_dot;
        else if (group == kGroupLanguage)
            base = rates.language_projection;
        else if (group == kGroupGeometry)
            base = rates.geometry_prompt;
        else
            throw ValidationError("effective_rate: unknown group '" + group + "'");
    }
    return lr_at_step(step, base, sched);
}

void adamw_step(Param& p, double lr, const AdamWConfig& cfg, int64_t step) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
        p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = p.m[i] / bc1;
        const double vhat = p.v[i] / bc2;
        p.value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.value[i]);
    }
}

} // namespace promptseg
