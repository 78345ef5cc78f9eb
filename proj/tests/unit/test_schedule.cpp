#include <doctest.h>

#include <cmath>

#include "promptseg/errors.hpp"
#include "promptseg/schedule.hpp"

using namespace promptseg;

TEST_SUITE("schedule") {

TEST_CASE("llrd rates: identity at the top layer, exact decay below") {
    LLRDSpec spec;
    spec.eta_base = 5e-5;
    CHECK(llrd_rate(12, spec) == doctest::Approx(5e-5).epsilon(1e-15));
    CHECK(llrd_rate(11, spec) == doctest::Approx(4.25e-5).epsilon(1e-12));
    CHECK(llrd_rate(1, spec) == doctest::Approx(8.3671621844812e-06).epsilon(1e-9));
    CHECK_THROWS_AS(llrd_rate(0, spec), ValidationError);
    CHECK_THROWS_AS(llrd_rate(13, spec), ValidationError);
}

TEST_CASE("llrd is strictly increasing in the layer with ratio gamma") {
    LLRDSpec spec;
    spec.eta_base = 1.0;
    for (int l = 1; l < 12; ++l) {
        CHECK(llrd_rate(l, spec) < llrd_rate(l + 1, spec));
        CHECK(llrd_rate(l, spec) / llrd_rate(l + 1, spec) == doctest::Approx(0.85).epsilon(1e-12));
    }
}

TEST_CASE("warmup ramp, continuity at W, and inverse-sqrt decay") {
    ScheduleSpec spec;
    spec.warmup_steps = 100;
    CHECK(lr_at_step(1, 1.0, spec) == doctest::Approx(0.01));
    CHECK(lr_at_step(100, 1.0, spec) == doctest::Approx(1.0));
    CHECK(lr_at_step(101, 1.0, spec) == doctest::Approx(std::sqrt(100.0 / 101.0)));
    CHECK(lr_at_step(400, 1.0, spec) == doctest::Approx(0.5));
    CHECK_THROWS_AS(lr_at_step(0, 1.0, spec), ValidationError);
}

TEST_CASE("schedule is non-increasing after warmup") {
    ScheduleSpec spec;
    spec.warmup_steps = 50;
    double prev = lr_at_step(50, 1.0, spec);
    for (int64_t t = 51; t < 500; t += 7) {
        const double cur = lr_at_step(t, 1.0, spec);
        CHECK(cur <= prev);
        prev = cur;
    }
}

TEST_CASE("effective rate composes group, llrd and schedule") {
    const GroupRates rates;
    const LLRDSpec llrd;
    ScheduleSpec sched;
    sched.warmup_steps = 1000;

    CHECK(effective_rate(kGroupDecoder, 0, 1000, rates, llrd, sched) ==
          doctest::Approx(3e-4).epsilon(1e-12));
    CHECK(effective_rate(kGroupVision, 12, 1000, rates, llrd, sched) ==
          doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(effective_rate(kGroupVision, 1, 4000, rates, llrd, sched) ==
          doctest::Approx(5e-5 * std::pow(0.85, 11) * 0.5).epsilon(1e-9));
    CHECK(effective_rate(kGroupLanguage, 0, 1000, rates, llrd, sched) ==
          doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(effective_rate(kGroupGeometry, 0, 1000, rates, llrd, sched) ==
          doctest::Approx(1e-4).epsilon(1e-12));
}

TEST_CASE("layer index outside the vision backbone is rejected") {
    const GroupRates rates;
    const LLRDSpec llrd;
    const ScheduleSpec sched;
    CHECK_THROWS_AS(effective_rate(kGroupDecoder, 3, 10, rates, llrd, sched), ValidationError);
    CHECK_THROWS_AS(effective_rate("nonexistent", 0, 10, rates, llrd, sched), ValidationError);
}

TEST_CASE("one adamw step descends a quadratic bowl") {
    // f(x) = 0.5 * x^2, gradient x
    Param p("x", 1, 1, kGroupDecoder);
    p.value[0] = 3.0;
    AdamWConfig cfg;
    cfg.weight_decay = 0.01;
    double loss_before = 0.5 * p.value[0] * p.value[0];
    for (int64_t t = 1; t <= 5; ++t) {
        p.grad[0] = p.value[0];
        adamw_step(p, 0.05, cfg, t);
        std::fill(p.grad.begin(), p.grad.end(), 0.0);
    }
    const double loss_after = 0.5 * p.value[0] * p.value[0];
    CHECK(loss_after < loss_before);
}

TEST_CASE("decoupled weight decay shrinks parameters with zero gradient") {
    Param p("w", 1, 1, kGroupDecoder);
    p.value[0] = 1.0;
    AdamWConfig cfg;
    cfg.weight_decay = 0.1;
    adamw_step(p, 0.5, cfg, 1);    // grad == 0, only decay applies
    CHECK(p.value[0] == doctest::Approx(1.0 - 0.5 * 0.1 * 1.0));
}

} // TEST_SUITE
