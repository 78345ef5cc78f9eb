#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "promptseg/config.hpp"
#include "promptseg/corpus.hpp"
#include "promptseg/inference.hpp"

namespace promptseg {

// prepare: split files + concept dictionary, idempotent.
struct PrepareResult {
    std::string train_ids_path;
    std::string val_ids_path;
    std::string dictionary_path;
    int n_train = 0;
    int n_val = 0;
};

PrepareResult run_prepare(const std::string& manifest_path, const std::string& out_dir,
                          const SplitSpec& spec);

// train: the full objective with matching, grouped LLRD rates and the
// warmup / inverse-sqrt schedule. Requires run_prepare outputs in
// cfg.out_dir. Keeps the best-validation-dice checkpoint.
struct TrainResult {
    std::string best_checkpoint;
    std::string last_checkpoint;
    std::string loss_log;
    double best_val_dice = 0.0;
    double final_val_dice = 0.0;
    int64_t steps = 0;
};

TrainResult run_training(const RunConfig& cfg, std::ostream* info = nullptr);

// One evaluation sample with everything inference needs, cached in memory.
struct EvalSample {
    std::string id;
    std::string dataset;
    Image canvas_image;
    LetterboxInfo info;
    std::vector<std::string> concepts;              // dataset prompt list, sorted
    std::vector<BinaryMask> gt_masks;               // native resolution, aligned with concepts
};

EvalSample load_eval_sample(const SampleRecord& record, const ConceptDictionary& dict,
                            int canvas);

// Score one predicted canvas-resolution semantic map against the sample's
// native-resolution ground truth, one record per dataset concept.
std::vector<EvalRecord> score_semantic_map(const LabelMap& canvas_labels, const EvalSample& s,
                                           const std::string& split_kind);

// Semantic-map evaluation: per-concept dice/iou against the native-resolution
// ground truth, deterministic record order.
std::vector<EvalRecord> evaluate_samples(const QuerySegmenter& model,
                                         const std::vector<EvalSample>& samples,
                                         const std::string& split_kind);

// eval CLI body: loads the checkpoint, evaluates the requested split of the
// manifest ("train" / "val" / "all"), writes records + report.
struct EvalOutput {
    std::string records_path;
    std::string report_path;
    double mean_dice = 0.0;
};

EvalOutput run_eval(const std::string& checkpoint_path, const std::string& manifest_path,
                    const std::string& split_name, const std::string& out_dir,
                    const std::string& split_kind, std::ostream* info = nullptr);

// report CLI body: aggregate one or two record files into a table (+ figure).
struct ReportOutput {
    std::string table_path;
    std::string figure_path;
    std::string table_text;
};

ReportOutput run_report(const std::vector<std::string>& record_files, const std::string& out_dir,
                        std::ostream* info = nullptr);

// helpers shared with tests
std::vector<std::string> read_id_file(const std::string& path);
void write_id_file(const std::string& path, const std::vector<std::string>& ids);

} // namespace promptseg
