#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "promptseg/synthetic.hpp"
#include "promptseg/trainer.hpp"

using namespace promptseg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

struct CliResult {
    int code;
    std::string output;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(PROMPTSEG_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string output;
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) output += buf;
    const int status = pclose(pipe);
    return {WEXITSTATUS(status), output};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const char* stem) : path(fs::temp_directory_path() / stem) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

RunConfig toy_config(const std::string& manifest, const std::string& out_dir) {
    RunConfig cfg;
    cfg.manifest = manifest;
    cfg.out_dir = out_dir;
    cfg.canvas = 64;
    cfg.patch = 16;
    cfg.n_q = 8;
    cfg.embed_dim = 16;
    cfg.mask_grid = 16;
    cfg.mask_dim = 8;
    cfg.dec_layers = 1;
    cfg.batch_size = 2;
    cfg.warmup_steps = 4;
    cfg.val_every = 3;
    cfg.ckpt_every = 100;
    return cfg;
}

} // namespace

TEST_SUITE("pipeline") {

TEST_CASE("synthetic corpus, prepare idempotence, short training, resume, eval") {
    TempDir corpus("ps_pipe_corpus");
    TempDir out("ps_pipe_out");

    SyntheticSpec spec;
    spec.n_images = 12;
    spec.size = 64;
    spec.seed = 5;
    const std::string manifest = generate_synthetic_corpus(corpus.str(), spec);
    CHECK(fs::exists(manifest));

    // prepare: 85/15 of 12 ids -> 10/2, byte-stable across reruns
    const PrepareResult prep = run_prepare(manifest, out.str(), SplitSpec{});
    CHECK(prep.n_train == 10);
    CHECK(prep.n_val == 2);
    const std::string train_bytes = slurp(prep.train_ids_path);
    const std::string dict_bytes = slurp(prep.dictionary_path);
    run_prepare(manifest, out.str(), SplitSpec{});
    CHECK(slurp(prep.train_ids_path) == train_bytes);
    CHECK(slurp(prep.dictionary_path) == dict_bytes);

    // training depends on prepared splits
    RunConfig missing = toy_config(manifest, (fs::temp_directory_path() / "ps_none").string());
    CHECK_THROWS_AS(run_training(missing), ValidationError);

    // uninterrupted 8-step run for the resume comparison
    TempDir out_ref("ps_pipe_ref");
    run_prepare(manifest, out_ref.str(), SplitSpec{});
    RunConfig ref_cfg = toy_config(manifest, out_ref.str());
    ref_cfg.max_steps = 8;
    const TrainResult ref = run_training(ref_cfg);
    CHECK(ref.steps == 8);

    // 6 steps, then resume to 8
    RunConfig cfg = toy_config(manifest, out.str());
    cfg.max_steps = 6;
    const TrainResult first = run_training(cfg);
    CHECK(first.steps == 6);
    CHECK(fs::exists(first.best_checkpoint));
    CHECK(fs::exists(first.last_checkpoint));

    {
        std::ifstream log(first.loss_log);
        std::string line;
        int lines = 0;
        double first_lr = -1;
        while (std::getline(log, line)) {
            const auto rec = nlohmann::json::parse(line);
            if (++lines == 1) first_lr = rec.at("lr_decoder_seg_dot").get<double>();
            CHECK(rec.at("total").get<double>() >= 0.0);
        }
        CHECK(lines == 6);
        CHECK(first_lr == doctest::Approx(3e-4 * 1.0 / 4.0));    // warmup step 1 of 4
    }

    RunConfig resume_cfg = cfg;
    resume_cfg.resume = first.last_checkpoint;
    resume_cfg.max_steps = 8;
    const TrainResult resumed = run_training(resume_cfg);
    CHECK(resumed.steps == 8);

    // the resumed log continues where the uninterrupted run would be
    auto last_total = [](const std::string& log_path) {
        std::ifstream log(log_path);
        std::string line, last;
        while (std::getline(log, line))
            if (!line.empty()) last = line;
        return nlohmann::json::parse(last).at("total").get<double>();
    };
    CHECK(last_total(resumed.loss_log) ==
          doctest::Approx(last_total(ref.loss_log)).epsilon(1e-9));

    // eval: byte-identical across reruns
    const EvalOutput e1 = run_eval(first.best_checkpoint, manifest, "val", out.str(), "internal");
    const std::string records_bytes = slurp(e1.records_path);
    const std::string report_bytes = slurp(e1.report_path);
    const EvalOutput e2 = run_eval(first.best_checkpoint, manifest, "val", out.str(), "internal");
    CHECK(slurp(e2.records_path) == records_bytes);
    CHECK(slurp(e2.report_path) == report_bytes);
    CHECK(e1.mean_dice >= 0.0);
    CHECK(e1.mean_dice <= 1.0);

    // report over the produced records
    const ReportOutput rep = run_report({e1.records_path}, out.str());
    CHECK(fs::exists(rep.table_path));
    CHECK(fs::exists(rep.figure_path));
    CHECK(rep.table_text.find("shapes") != std::string::npos);
}

TEST_CASE("cli exit codes: validation failures map to 2") {
    TempDir dir("ps_cli_codes");

    // broken manifest line 2
    const std::string bad_manifest = (dir.path / "bad.jsonl").string();
    {
        std::ofstream out(bad_manifest);
        out << R"({"id":"a","image":"x.png","mask":"y.png","dataset":"d","labels":{"1":"c"}})"
            << "\n";
        out << "{broken\n";
    }
    const CliResult prep = run_cli("prepare --manifest " + bad_manifest + " --out " + dir.str());
    CHECK(prep.code == 2);
    CHECK(prep.output.find("line 2") != std::string::npos);

    const CliResult missing = run_cli("prepare --manifest /nonexistent.jsonl --out " + dir.str());
    CHECK(missing.code == 2);

    // report on an empty record file
    const std::string empty_records = (dir.path / "empty.jsonl").string();
    std::ofstream(empty_records).close();
    const CliResult rep = run_cli("report " + empty_records + " --out " + dir.str());
    CHECK(rep.code == 2);

    // missing required option
    const CliResult noargs = run_cli("eval");
    CHECK(noargs.code == 2);
}

TEST_CASE("cli print-config dumps defaults without running") {
    const CliResult res = run_cli("train --print-config");
    CHECK(res.code == 0);
    CHECK(res.output.find("w_cls = 2.0") != std::string::npos);
    CHECK(res.output.find("n_q = 200") != std::string::npos);

    // overrides are reflected in the dump
    const CliResult over = run_cli("train --print-config --n_q 20 --canvas 128");
    CHECK(over.code == 0);
    CHECK(over.output.find("n_q = 20") != std::string::npos);
    CHECK(over.output.find("canvas = 128") != std::string::npos);
}

} // TEST_SUITE
