#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptseg/image.hpp"
#include "promptseg/predictions.hpp"
#include "promptseg/tape.hpp"

namespace promptseg {

// Deterministic unit-norm text embedding: FNV-1a hash of the concept string
// seeds a SplitMix64 stream, dim uniform draws in [-1,1), normalized.
struct ConceptEmbedding {
    std::vector<double> v;
};

ConceptEmbedding embed_concept(const std::string& concept_text, int dim);

struct ModelConfig {
    int n_q = 200;
    int embed_dim = 64;      // model width, also the text embedding dim
    int enc_layers = 12;     // fixed depth; layer-wise LR decay indexes 1..enc_layers
    int canvas = 1008;
    int patch = 16;
    int mask_grid = 0;       // mask logit resolution; 0 resolves to canvas/4
    int mask_dim = 32;
    int dec_layers = 2;
    int mlp_ratio = 2;

    int resolved_mask_grid() const { return mask_grid > 0 ? mask_grid : canvas / 4; }
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// Tape handles for one forward pass.
struct ForwardOutput {
    Var class_logits;       // [n_q, 1]
    Var presence_logits;    // [n_q, 1]
    Var boxes;              // [n_q, 4], center-size in (0,1)
    Var mask_logits;        // [n_q, mask_grid^2]
};

// Text-conditioned query segmenter: a 12-block transformer encoder over
// image patches, FiLM-style text modulation, a small query decoder, and
// per-query class / presence / box / mask heads with dot-product text
// scoring.
class QuerySegmenter {
public:
    QuerySegmenter(const ModelConfig& cfg, uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    Param& param(const std::string& name);

    ForwardOutput forward(Tape& tape, const Image& image,
                          const std::vector<double>& text_embedding);

    // Inference convenience: forward on a private tape, values only.
    std::vector<QueryPrediction> infer(const Image& image,
                                       const std::vector<double>& text_embedding) const;

    std::vector<QueryPrediction> predictions_from(const Tape& tape,
                                                  const ForwardOutput& out) const;

    // Group name -> parameter indices. Verifies the groups partition the
    // parameter set and that the vision backbone covers layers 1..enc_layers.
    std::map<std::string, std::vector<int>> parameter_groups() const;
    std::vector<int> vision_layer_indices() const;    // sorted unique layer ids

    size_t total_scalar_params() const;

private:
    ModelConfig cfg_;
    std::vector<Param> params_;
    std::map<std::string, int> index_;

    Param& add(const std::string& name, int rows, int cols, const std::string& group,
               int layer = 0);
    friend struct ModelBuilderAccess;
};

// Checkpoint archive: named tensors (+ Adam moments) plus a JSON metadata
// record carrying the model config and trainer state.
void save_checkpoint(const std::string& path, const QuerySegmenter& model,
                     const nlohmann::json& metadata, bool include_moments = true);
QuerySegmenter load_checkpoint(const std::string& path, nlohmann::json* metadata_out = nullptr);

} // namespace promptseg
