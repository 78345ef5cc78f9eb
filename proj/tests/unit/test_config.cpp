#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "promptseg/config.hpp"
#include "promptseg/errors.hpp"

using namespace promptseg;

TEST_SUITE("config") {

TEST_CASE("defaults carry the training constants") {
    const RunConfig cfg;
    CHECK(cfg.w_cls == 2.0);
    CHECK(cfg.w_box == 5.0);
    CHECK(cfg.w_giou == 2.0);
    CHECK(cfg.alpha_match == 0.25);
    CHECK(cfg.gamma_match == 2.0);
    CHECK(cfg.stable == false);
    CHECK(cfg.top_k == 4);
    CHECK(cfg.threshold == 0.4);
    CHECK(cfg.alpha_o2m == 0.3);
    CHECK(cfg.lambda_o2m == 2.0);
    CHECK(cfg.lambda_ce == 20.0);
    CHECK(cfg.lambda_pr == 20.0);
    CHECK(cfg.alpha_cls == 0.25);
    CHECK(cfg.gamma_cls == 2.0);
    CHECK(cfg.pos_weight == 10.0);
    CHECK(cfg.n_q == 200);
    CHECK(cfg.lambda_l1 == 5.0);
    CHECK(cfg.lambda_g == 2.0);
    CHECK(cfg.alpha_seg == 0.6);
    CHECK(cfg.gamma_seg == 2.0);
    CHECK(cfg.lambda_f == 20.0);
    CHECK(cfg.lambda_d == 30.0);
    CHECK(cfg.lambda_sp == 1.0);
    CHECK(cfg.lr_decoder == 3e-4);
    CHECK(cfg.lr_vision == 5e-5);
    CHECK(cfg.lr_language == 5e-5);
    CHECK(cfg.lr_geometry == 1e-4);
    CHECK(cfg.beta1 == 0.9);
    CHECK(cfg.beta2 == 0.999);
    CHECK(cfg.llrd_gamma == 0.85);
    CHECK(cfg.llrd_layers == 12);
    CHECK(cfg.canvas == 1008);
    CHECK(cfg.train_fraction == 0.85);
    CHECK(cfg.seed == 42);
    CHECK(cfg.epochs == 10);
}

TEST_CASE("typed views mirror the flat fields") {
    RunConfig cfg;
    cfg.n_q = 17;
    cfg.lambda_d = 31.0;
    const ObjectiveWeights w = cfg.objective_weights();
    CHECK(w.find.n_q == 17);
    CHECK(w.seg.lambda_d == 31.0);
    CHECK(w.matcher.w_box == 5.0);
    CHECK(cfg.group_rates().geometry_prompt == 1e-4);
    CHECK(cfg.schedule_spec().warmup_steps == 1000);
    CHECK(cfg.adamw_config().weight_decay == 0.01);
}

TEST_CASE("config file parsing with comments and overrides") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "ps_cfg.txt").string();
    {
        std::ofstream out(path);
        out << "# toy settings\n"
            << "canvas = 128\n"
            << "n_q = 20   # queries\n"
            << "lambda_d = 25.5\n"
            << "stable = true\n";
    }
    const RunConfig cfg = load_run_config(path, {{"n_q", "24"}, {"out_dir", "/tmp/x"}});
    CHECK(cfg.canvas == 128);
    CHECK(cfg.n_q == 24);    // override wins over the file
    CHECK(cfg.lambda_d == 25.5);
    CHECK(cfg.stable == true);
    CHECK(cfg.out_dir == "/tmp/x");
    std::remove(path.c_str());
}

TEST_CASE("unknown keys and malformed values are rejected") {
    RunConfig cfg;
    CHECK_THROWS_AS(cfg.set("no_such_key", "1"), ValidationError);
    CHECK_THROWS_AS(cfg.set("lambda_d", "abc"), ValidationError);
    CHECK_THROWS_AS(cfg.set("stable", "maybe"), ValidationError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/ps.cfg"), ValidationError);
}

TEST_CASE("print emits every field and round trips through set") {
    const RunConfig cfg;
    const std::string text = cfg.print();
    CHECK(text.find("w_cls = 2.0") != std::string::npos);
    CHECK(text.find("lr_decoder = 0.0003") != std::string::npos);
    CHECK(text.find("beta2 = 0.999") != std::string::npos);

    // re-apply every printed line onto a fresh config: identical dump
    RunConfig cfg2;
    cfg2.lambda_d = 1.0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        REQUIRE(eq != std::string::npos);
        cfg2.set(line.substr(0, eq), line.substr(eq + 3));
    }
    CHECK(cfg2.print() == text);
}

} // TEST_SUITE
