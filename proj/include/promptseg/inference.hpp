#pragma once

#include <map>
#include <string>
#include <vector>

#include "promptseg/model.hpp"
#include "promptseg/predictions.hpp"

namespace promptseg {

// Result of prompting one concept: the highest-confidence query's mask.
// ("concept" is a C++20 keyword, hence concept_name.)
struct PromptResult {
    std::string concept_name;
    double confidence = 0;      // sigmoid(class) * sigmoid(presence) of the chosen query
    BinaryMask mask;            // raw_probs >= 0.5
    Grid raw_probs;             // canvas-resolution probabilities
};

// Single-label-per-pixel map with its legend (0 = background).
struct SemanticMap {
    LabelMap labels;
    std::map<int, std::string> legend;    // label id -> concept
};

struct EvalRecord {
    std::string dataset;
    std::string concept_name;
    double dice = 0;
    double iou = 0;
    std::string sample_id;
    std::string split_kind;    // "internal" or "external"
};

// Per-query confidence = sigmoid(class_logit) * sigmoid(presence_logit);
// the argmax query's mask is upsampled to the canvas and thresholded at 0.5.
// Ties break on the lowest query index.
PromptResult predict_concept(const QuerySegmenter& model, const Image& image,
                             const std::string& concept_name);

// Query each concept independently; pixels claimed by several concepts
// (raw_prob >= 0.5) go to the one with maximal confidence * raw_prob, ties to
// the earlier concept in the list. Labels are 1-based positions in `concepts`.
SemanticMap predict_semantic_map(const QuerySegmenter& model, const Image& image,
                                 const std::vector<std::string>& concepts);

// Same overlap resolution applied to precomputed prompt results; exposed so
// the rule can be tested against a per-pixel oracle without a model.
SemanticMap resolve_semantic_map(const std::vector<PromptResult>& results,
                                 const std::vector<std::string>& concepts);

// Overlap metrics on binary masks. Both empty -> 1.0; exactly one empty -> 0.
double dice(const BinaryMask& pred, const BinaryMask& gt);
double iou(const BinaryMask& pred, const BinaryMask& gt);

// Aggregated report: per-dataset mean dice/iou within each split kind plus the
// unweighted per-split averages.
struct DatasetAggregate {
    std::string split_kind;
    std::string dataset;
    double mean_dice = 0;    // fractional [0,1]
    double mean_iou = 0;
    int n_records = 0;
};

struct Report {
    std::vector<DatasetAggregate> datasets;              // sorted by (split_kind, dataset)
    std::map<std::string, std::pair<double, double>> split_avg;    // split -> (dice, iou)
};

Report aggregate(std::vector<EvalRecord> records);

// JSONL record stream readers/writers (one EvalRecord per line).
void write_records(const std::string& path, const std::vector<EvalRecord>& records);
std::vector<EvalRecord> read_records(const std::string& path);

// Fixed-format text table for one or two runs; deltas are computed on
// unrounded means and all displayed values are rounded to one decimal.
std::string format_report_table(const Report& a, const Report* b = nullptr);

// Minimal SVG bar chart of per-dataset dice for one or two runs.
std::string render_report_svg(const Report& a, const Report* b = nullptr);

} // namespace promptseg
