#pragma once

#include <cstdint>
#include <string>

#include "promptseg/tape.hpp"

namespace promptseg {

// Layer-wise learning-rate decay: eta_l = eta_base * gamma^(L-l), layer L
// (nearest the output) keeps the base rate.
struct LLRDSpec {
    double eta_base = 5e-5;
    int layers = 12;
    double gamma = 0.85;
};

// Per-group base learning rates.
struct GroupRates {
    double decoder_seg_dot = 3e-4;
    double vision_backbone = 5e-5;
    double language_projection = 5e-5;
    double geometry_prompt = 1e-4;
};

// Linear warmup to the base rate over `warmup_steps`, then inverse-sqrt decay.
struct ScheduleSpec {
    int warmup_steps = 1000;
    double beta1 = 0.9;
    double beta2 = 0.999;
};

// Canonical group names used by Param::group.
inline constexpr const char* kGroupDecoder = "decoder_seg_dot";
inline constexpr const char* kGroupVision = "vision_backbone";
inline constexpr const char* kGroupLanguage = "language_projection";
inline constexpr const char* kGroupGeometry = "geometry_prompt";

double llrd_rate(int layer, const LLRDSpec& spec);
double lr_at_step(int64_t step, double base, const ScheduleSpec& spec);

// Composition: group rate x LLRD factor (vision backbone only) x schedule.
// `layer` must be 0 for non-backbone groups and 1..L for the backbone.
double effective_rate(const std::string& group, int layer, int64_t step, const GroupRates& rates,
                      const LLRDSpec& llrd, const ScheduleSpec& sched);

// Decoupled-weight-decay Adam step on one parameter tensor. `step` is
// 1-based and drives the bias correction.
struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

void adamw_step(Param& p, double lr, const AdamWConfig& cfg, int64_t step);

} // namespace promptseg
