#pragma once

#include <cstdint>
#include <string>

namespace promptseg {

// Synthetic desk-scale corpus: colored shapes (circle / square / triangle)
// on noisy backgrounds, one label id per shape kind, written as a PNG corpus
// with a JSONL manifest. Every image contains all three concepts; a fraction
// carries a second instance of one concept.
struct SyntheticSpec {
    int n_images = 200;
    int size = 128;
    uint64_t seed = 7;
    double multi_instance_fraction = 0.25;
};

// Writes images/, masks/ and manifest.jsonl under out_dir; returns the
// manifest path.
std::string generate_synthetic_corpus(const std::string& out_dir, const SyntheticSpec& spec);

} // namespace promptseg
