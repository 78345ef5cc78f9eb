#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "promptseg/config.hpp"
#include "promptseg/errors.hpp"
#include "promptseg/synthetic.hpp"
#include "promptseg/trainer.hpp"

namespace {

// exit codes: 0 ok, 1 runtime failure, 2 input validation failure
constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kValidationError = 2;

std::vector<std::pair<std::string, std::string>> parse_overrides(
    const std::vector<std::string>& extras) {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (size_t i = 0; i < extras.size(); ++i) {
        std::string key = extras[i];
        if (key.rfind("--", 0) != 0)
            throw promptseg::ValidationError("expected --key value overrides, got '" + key + "'");
        key = key.substr(2);
        const auto eq = key.find('=');
        if (eq != std::string::npos) {
            overrides.emplace_back(key.substr(0, eq), key.substr(eq + 1));
        } else {
            if (i + 1 >= extras.size())
                throw promptseg::ValidationError("missing value for override '--" + key + "'");
            overrides.emplace_back(key, extras[++i]);
        }
    }
    return overrides;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"text-prompted set-prediction segmentation workbench"};
    app.require_subcommand(1);

    // prepare
    std::string prep_manifest, prep_out = "out";
    uint64_t prep_seed = 42;
    double prep_frac = 0.85;
    auto* prepare = app.add_subcommand("prepare", "build splits and the concept dictionary");
    prepare->add_option("--manifest", prep_manifest, "manifest path")->required();
    prepare->add_option("--seed", prep_seed, "split seed");
    prepare->add_option("--train-frac", prep_frac, "train fraction");
    prepare->add_option("--out", prep_out, "output directory");

    // train
    std::string train_config;
    bool print_config = false;
    auto* train = app.add_subcommand("train", "train with the set-prediction objective");
    train->add_option("--config", train_config, "flat key=value config file");
    train->add_flag("--print-config", print_config, "dump the resolved config and exit");
    train->allow_extras();

    // eval
    std::string eval_ckpt, eval_manifest, eval_split = "val", eval_out = "out",
                eval_kind = "internal";
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    eval->add_option("--manifest", eval_manifest, "manifest path")->required();
    eval->add_option("--split", eval_split, "train | val | all");
    eval->add_option("--out", eval_out, "directory with split files; receives records/report");
    eval->add_option("--split-kind", eval_kind, "internal | external tag for records");

    // report
    std::vector<std::string> report_files;
    std::string report_out = "out";
    auto* report = app.add_subcommand("report", "aggregate one or two record files");
    report->add_option("files", report_files, "record file(s)")->expected(1, 2);
    report->add_option("--out", report_out, "output directory");

    // synth
    std::string synth_out;
    int synth_images = 200, synth_size = 128;
    uint64_t synth_seed = 7;
    auto* synth = app.add_subcommand("synth", "generate the synthetic shapes corpus");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--images", synth_images, "number of images");
    synth->add_option("--size", synth_size, "image side length");
    synth->add_option("--seed", synth_seed, "generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidationError;
    }

    try {
        if (prepare->parsed()) {
            promptseg::SplitSpec spec{prep_frac, prep_seed};
            const auto res = promptseg::run_prepare(prep_manifest, prep_out, spec);
            std::cout << "train ids: " << res.train_ids_path << " (" << res.n_train << ")\n"
                      << "val ids:   " << res.val_ids_path << " (" << res.n_val << ")\n"
                      << "dictionary: " << res.dictionary_path << "\n";
        } else if (train->parsed()) {
            const auto overrides = parse_overrides(train->remaining());
            promptseg::RunConfig cfg = promptseg::load_run_config(train_config, overrides);
            if (print_config) {
                std::cout << cfg.print();
                return kOk;
            }
            const auto res = promptseg::run_training(cfg, &std::cout);
            std::cout << "trained " << res.steps << " steps; best val dice " << res.best_val_dice
                      << "\nbest checkpoint: " << res.best_checkpoint
                      << "\nlast checkpoint: " << res.last_checkpoint << "\n";
        } else if (eval->parsed()) {
            const auto res = promptseg::run_eval(eval_ckpt, eval_manifest, eval_split, eval_out,
                                                 eval_kind, &std::cout);
            std::cout << "records: " << res.records_path << "\nreport:  " << res.report_path
                      << "\n";
        } else if (report->parsed()) {
            const auto res = promptseg::run_report(report_files, report_out, &std::cerr);
            std::cout << res.table_text;
            std::cout << "table:  " << res.table_path << "\nfigure: " << res.figure_path << "\n";
        } else if (synth->parsed()) {
            promptseg::SyntheticSpec spec;
            spec.n_images = synth_images;
            spec.size = synth_size;
            spec.seed = synth_seed;
            const std::string manifest = promptseg::generate_synthetic_corpus(synth_out, spec);
            std::cout << "manifest: " << manifest << "\n";
        }
    } catch (const promptseg::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidationError;
    } catch (const promptseg::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidationError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kOk;
}
