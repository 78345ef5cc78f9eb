#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "promptseg/grid.hpp"
#include "promptseg/image.hpp"

namespace promptseg {

// One manifest line: a (image, label-map mask, label dictionary) record.
struct SampleRecord {
    std::string id;
    std::string image_path;
    std::string mask_path;
    std::map<int, std::string> label_map;    // label id -> concept, 0 reserved for background
    std::string dataset_name;
    std::string modality;
};

// Corpus-wide canonical naming: (dataset, label id) -> concept string plus
// the deduplicated sorted vocabulary.
struct ConceptDictionary {
    std::map<std::pair<std::string, int>, std::string> entries;
    std::vector<std::string> vocabulary;

    const std::string& concept_for(const std::string& dataset, int label) const;
    // Sorted unique concepts used by one dataset (the per-dataset prompt list).
    std::vector<std::string> dataset_concepts(const std::string& dataset) const;
    int concept_index(const std::string& concept_str) const;    // index into vocabulary, -1 if absent
};

// One training/eval record: image plus per-instance masks and concepts.
struct TripletSample {
    Image image;
    std::vector<BinaryMask> instance_masks;
    std::vector<std::string> concepts;       // aligned with instance_masks
    std::string source_id;
};

struct SplitSpec {
    double train_fraction = 0.85;
    uint64_t seed = 42;
};

// Lowercase, trim, collapse internal whitespace. Idempotent.
std::string canonicalize_concept(const std::string& raw);

// Newline-delimited JSON records with keys id/image/mask/dataset/modality/
// labels. Paths stay relative to the manifest's directory (resolved by the
// caller via manifest_dir). Empty lines are skipped.
std::vector<SampleRecord> load_manifest(const std::string& path);

ConceptDictionary build_concept_dictionary(const std::vector<SampleRecord>& records);

// Split a label map into 8-connected components per label id, ordered by
// (label id, top-left pixel in row-major order). Label ids present in the
// mask but missing from label_map raise a validation error; ids with no
// foreground produce no instances.
std::vector<BinaryMask> connected_instances(const LabelMap& mask,
                                            const std::map<int, std::string>& label_map,
                                            std::vector<std::string>* concepts_out,
                                            const ConceptDictionary* dict = nullptr,
                                            const std::string& dataset = "");

// Load the record's image and mask, letterbox both to the canvas, then expand
// instances. canvas <= 0 keeps the native resolution (mask must match image).
TripletSample expand_to_triplets(const SampleRecord& record, const ConceptDictionary& dict,
                                 int canvas = 0, LetterboxInfo* info = nullptr);

// Deterministic split: sort ids lexicographically, Fisher-Yates shuffle with
// SplitMix64(seed), first floor(fraction*N) ids are train.
std::pair<std::vector<std::string>, std::vector<std::string>> split_train_val(
    std::vector<std::string> ids, const SplitSpec& spec);

// Dictionary (de)serialization; deterministic output for byte-stable reruns.
std::string dictionary_to_json(const ConceptDictionary& dict);
ConceptDictionary dictionary_from_json(const std::string& text);

// Resolve a manifest-relative path.
std::string resolve_path(const std::string& manifest_path, const std::string& rel);

} // namespace promptseg
