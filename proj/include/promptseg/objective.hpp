#pragma once

#include <optional>
#include <vector>

#include "promptseg/losses.hpp"
#include "promptseg/matching.hpp"
#include "promptseg/model.hpp"
#include "promptseg/tape.hpp"

namespace promptseg {

// One training example after target assembly: the prompt, its instances, and
// the presence flag (0 when the concept is absent from the image).
struct ExampleTargets {
    std::vector<InstanceTarget> instances;
    int prompt_present = 1;
};

struct ExampleLoss {
    Var total;                 // scalar tape node, ready for backward()
    Assignment o2o;            // empty when the example has no instances
    MultiAssignment o2m;
    LossBreakdown values;      // components of this example (already scaled)
};

struct ObjectiveWeights {
    MatcherWeights matcher;
    O2MConfig o2m;
    double lambda_o2m = kLambdaO2M;
    FindWeights find;
    SegWeights seg;
};

// Build the full set-prediction objective for one example on the tape:
// O2O focal-Hungarian matching, the auxiliary O2M branch, finding losses for
// both assignments, and the segmentation loss over O2O-matched masks.
// `matched_norm` is the batch-wise matched count (clamped >= 1);
// `presence_norm` scales the seg-presence term (1/batch size). Precomputed
// assignments (from a prior match_example pass) skip the internal matching.
ExampleLoss build_example_objective(Tape& tape, const ForwardOutput& out,
                                    const QuerySegmenter& model, const ExampleTargets& targets,
                                    const ObjectiveWeights& w, double matched_norm,
                                    double presence_norm,
                                    const Assignment* precomputed_o2o = nullptr,
                                    const MultiAssignment* precomputed_o2m = nullptr);

// Count the O2O matches this example will contribute (runs the matcher on
// prediction values only). Lets the trainer compute the batch-wise
// normalizer before building loss nodes.
Assignment match_example(const std::vector<QueryPrediction>& preds,
                         const ExampleTargets& targets, const MatcherWeights& w,
                         CostMatrix* cost_out = nullptr);

} // namespace promptseg
