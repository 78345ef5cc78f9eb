#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "promptseg/losses.hpp"
#include "promptseg/matching.hpp"
#include "promptseg/model.hpp"
#include "promptseg/objective.hpp"
#include "promptseg/schedule.hpp"

namespace promptseg {

// Resolved run configuration. Every default below is a training constant of
// the system and is pinned by the golden-config acceptance test; any field
// can be overridden from a config file or the command line.
struct RunConfig {
    // data / run
    std::string manifest;
    std::string out_dir = "out";
    double train_fraction = 0.85;
    uint64_t seed = 42;
    int64_t max_steps = 0;    // 0: run the full epoch budget
    int epochs = 10;
    int batch_size = 4;
    int64_t val_every = 250;
    int64_t ckpt_every = 500;
    std::string resume;       // checkpoint path to continue from

    // model
    int canvas = 1008;
    int n_q = 200;
    int embed_dim = 64;
    int enc_layers = 12;
    int patch = 16;
    int mask_grid = 0;
    int mask_dim = 32;
    int dec_layers = 2;
    int mlp_ratio = 2;

    // one-to-one matcher
    double w_cls = 2.0;
    double w_box = 5.0;
    double w_giou = 2.0;
    double alpha_match = 0.25;
    double gamma_match = 2.0;
    bool stable = false;

    // one-to-many matcher
    int top_k = 4;
    double threshold = 0.4;
    double alpha_o2m = 0.3;
    double lambda_o2m = 2.0;

    // finding loss
    double lambda_ce = 20.0;
    double lambda_pr = 20.0;
    double alpha_cls = 0.25;
    double gamma_cls = 2.0;
    double pos_weight = 10.0;
    double lambda_l1 = 5.0;
    double lambda_g = 2.0;

    // segmentation loss
    double alpha_seg = 0.6;
    double gamma_seg = 2.0;
    double lambda_f = 20.0;
    double lambda_d = 30.0;
    double lambda_sp = 1.0;
    double dice_eps = 1.0;

    // optimizer / schedule
    double lr_decoder = 3e-4;
    double lr_vision = 5e-5;
    double lr_language = 5e-5;
    double lr_geometry = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.01;
    double adam_eps = 1e-8;
    int warmup_steps = 1000;
    double llrd_gamma = 0.85;
    int llrd_layers = 12;

    // derived views
    ModelConfig model_config() const;
    ObjectiveWeights objective_weights() const;
    GroupRates group_rates() const;
    LLRDSpec llrd_spec() const;
    ScheduleSpec schedule_spec() const;
    AdamWConfig adamw_config() const;

    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    // Flat "key = value" dump, one line per field, declaration order.
    std::string print() const;
};

// Parse a flat key-value config file ("key = value", '#' comments) on top of
// the defaults, then apply CLI overrides in order.
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides = {});
RunConfig apply_overrides(RunConfig cfg,
                          const std::vector<std::pair<std::string, std::string>>& overrides);

} // namespace promptseg
