#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "promptseg/geometry.hpp"
#include "promptseg/grid.hpp"

namespace promptseg {

// One decoder query's output for the prompted concept.
struct QueryPrediction {
    double class_logit = 0;
    double presence_logit = 0;
    NormBox box;          // center-size, already squashed into (0,1)
    Grid mask_logits;     // low-res grid, upsampled to canvas at loss/inference time
};

// One ground-truth instance of the prompted concept.
struct InstanceTarget {
    int concept_id = -1;  // index into the vocabulary
    NormBox box;
    BinaryMask mask;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Probabilities clamped into (1e-7, 1-1e-7) so log terms stay finite.
inline constexpr double kProbClamp = 1e-7;

inline double sigmoid_clamped(double x) {
    const double p = sigmoid(x);
    if (p < kProbClamp) return kProbClamp;
    if (p > 1.0 - kProbClamp) return 1.0 - kProbClamp;
    return p;
}

} // namespace promptseg
