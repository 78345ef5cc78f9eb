#include "promptseg/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "promptseg/errors.hpp"
#include "promptseg/rng.hpp"
#include "promptseg/schedule.hpp"

namespace promptseg {

using nlohmann::json;

ConceptEmbedding embed_concept(const std::string& concept_text, int dim) {
    if (concept_text.empty()) throw ValidationError("embed_concept: empty concept string");
    if (dim < 1) throw ValidationError("embed_concept: dim must be >= 1");
    SplitMix64 rng(fnv1a64(concept_text));
    ConceptEmbedding e;
    e.v.resize(dim);
    double norm_sq = 0.0;
    for (int i = 0; i < dim; ++i) {
        e.v[i] = 2.0 * rng.next_double() - 1.0;
        norm_sq += e.v[i] * e.v[i];
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& x : e.v) x *= inv;
    return e;
}

void ModelConfig::validate() const {
    if (n_q < 1) throw ValidationError("model: n_q must be >= 1");
    if (embed_dim < 4) throw ValidationError("model: embed_dim too small");
    if (enc_layers < 1) throw ValidationError("model: enc_layers must be >= 1");
    if (canvas < patch || canvas % patch != 0)
        throw ValidationError("model: canvas must be a positive multiple of patch");
    const int mg = resolved_mask_grid();
    if (mg < 1 || canvas % mg != 0)
        throw ValidationError("model: mask_grid must divide canvas");
    if (mask_dim < 1 || dec_layers < 1 || mlp_ratio < 1)
        throw ValidationError("model: bad head dimensions");
}

json ModelConfig::to_json() const {
    return json{{"n_q", n_q},           {"embed_dim", embed_dim}, {"enc_layers", enc_layers},
                {"canvas", canvas},     {"patch", patch},         {"mask_grid", mask_grid},
                {"mask_dim", mask_dim}, {"dec_layers", dec_layers}, {"mlp_ratio", mlp_ratio}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    c.n_q = j.at("n_q").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.enc_layers = j.at("enc_layers").get<int>();
    c.canvas = j.at("canvas").get<int>();
    c.patch = j.at("patch").get<int>();
    c.mask_grid = j.at("mask_grid").get<int>();
    c.mask_dim = j.at("mask_dim").get<int>();
    c.dec_layers = j.at("dec_layers").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    return c;
}

namespace {

double draw_normal(SplitMix64& rng) {
    double u1 = rng.next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    const double u2 = rng.next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void init_normal(Param& p, SplitMix64& rng, double std_dev) {
    for (double& v : p.value) v = draw_normal(rng) * std_dev;
}

void init_xavier(Param& p, SplitMix64& rng) {
    init_normal(p, rng, std::sqrt(2.0 / (p.rows + p.cols)));
}

void init_const(Param& p, double v) { std::fill(p.value.begin(), p.value.end(), v); }

// Row-major patch matrix: one row per patch, pixels row-major within the
// patch, channels interleaved.
std::vector<double> patchify(const Image& img, int patch) {
    const int g = img.h / patch;
    std::vector<double> out(static_cast<size_t>(g) * g * patch * patch * img.c);
    size_t k = 0;
    for (int py = 0; py < g; ++py)
        for (int px = 0; px < g; ++px)
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x)
                    for (int c = 0; c < img.c; ++c)
                        out[k++] = img.at(py * patch + y, px * patch + x, c);
    return out;
}

} // namespace

Param& QuerySegmenter::add(const std::string& name, int rows, int cols, const std::string& group,
                           int layer) {
    if (group != kGroupDecoder && group != kGroupVision && group != kGroupLanguage &&
        group != kGroupGeometry)
        throw ValidationError("model: parameter '" + name + "' has no valid group");
    index_[name] = static_cast<int>(params_.size());
    params_.emplace_back(name, rows, cols, group, layer);
    return params_.back();
}

Param& QuerySegmenter::param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("model: unknown parameter '" + name + "'");
    return params_[it->second];
}

QuerySegmenter::QuerySegmenter(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    const int D = cfg_.embed_dim;
    const int T = (cfg_.canvas / cfg_.patch) * (cfg_.canvas / cfg_.patch);
    const int H = D * cfg_.mlp_ratio;
    const int mg = cfg_.resolved_mask_grid();
    const int stem_stride = cfg_.canvas / mg;
    SplitMix64 rng(init_seed);

    auto linear_pair = [&](const std::string& stem, int in, int out, const std::string& grp,
                           int layer) {
        init_xavier(add(stem + ".W", in, out, grp, layer), rng);
        init_const(add(stem + ".b", 1, out, grp, layer), 0.0);
    };
    auto ln_pair = [&](const std::string& stem, const std::string& grp, int layer) {
        init_const(add(stem + ".g", 1, D, grp, layer), 1.0);
        init_const(add(stem + ".b", 1, D, grp, layer), 0.0);
    };
    auto attn_block = [&](const std::string& stem, const std::string& grp, int layer) {
        linear_pair(stem + ".q", D, D, grp, layer);
        linear_pair(stem + ".k", D, D, grp, layer);
        linear_pair(stem + ".v", D, D, grp, layer);
        linear_pair(stem + ".o", D, D, grp, layer);
    };
    auto mlp_block = [&](const std::string& stem, const std::string& grp, int layer) {
        linear_pair(stem + ".m1", D, H, grp, layer);
        linear_pair(stem + ".m2", H, D, grp, layer);
    };

    // vision backbone, layers 1..enc_layers
    linear_pair("patch", cfg_.patch * cfg_.patch * 3, D, kGroupVision, 1);
    init_normal(add("pos", T, D, kGroupVision, 1), rng, 0.02);
    for (int l = 1; l <= cfg_.enc_layers; ++l) {
        const std::string stem = "enc" + std::to_string(l);
        ln_pair(stem + ".ln1", kGroupVision, l);
        attn_block(stem + ".attn", kGroupVision, l);
        ln_pair(stem + ".ln2", kGroupVision, l);
        mlp_block(stem + ".mlp", kGroupVision, l);
    }
    ln_pair("enc_out.ln", kGroupVision, cfg_.enc_layers);

    // language projection (FiLM gate over encoder features)
    init_normal(add("film.W", D, D, kGroupLanguage), rng, 0.02);

    // decoder, heads, dot-product scoring, segmentation head
    init_normal(add("queries", cfg_.n_q, D, kGroupDecoder), rng, 0.02);
    init_xavier(add("qtext.W", D, D, kGroupDecoder), rng);
    for (int l = 0; l < cfg_.dec_layers; ++l) {
        const std::string stem = "dec" + std::to_string(l);
        ln_pair(stem + ".ln1", kGroupDecoder, 0);
        attn_block(stem + ".self", kGroupDecoder, 0);
        ln_pair(stem + ".ln2", kGroupDecoder, 0);
        attn_block(stem + ".cross", kGroupDecoder, 0);
        ln_pair(stem + ".ln3", kGroupDecoder, 0);
        mlp_block(stem + ".mlp", kGroupDecoder, 0);
    }
    init_xavier(add("cls.U", D, D, kGroupDecoder), rng);
    init_xavier(add("cls.P", D, D, kGroupDecoder), rng);
    init_const(add("cls.bias", 1, 1, kGroupDecoder), -2.0);
    linear_pair("pres", D, 1, kGroupDecoder, 0);
    init_const(param("pres.b"), -2.0);
    linear_pair("box.h", D, D, kGroupDecoder, 0);
    // wide init spreads the initial boxes across the canvas, giving the
    // matcher distinct anchors to specialize from
    init_normal(add("box.out.W", D, 4, kGroupDecoder), rng, 0.3);
    init_const(add("box.out.b", 1, 4, kGroupDecoder), 0.0);
    linear_pair("maskup", D, cfg_.mask_dim, kGroupDecoder, 0);
    linear_pair("stem", stem_stride * stem_stride * 3, cfg_.mask_dim, kGroupDecoder, 0);
    linear_pair("maskembed", D, cfg_.mask_dim, kGroupDecoder, 0);
    init_const(add("mask.bias", 1, 1, kGroupDecoder), 0.0);

    // geometry prompt encoder: present for the optimizer grouping contract,
    // unused under text-only training
    init_xavier(add("geo.W", 4, D, kGroupGeometry), rng);
    init_const(add("geo.b", 1, D, kGroupGeometry), 0.0);

    parameter_groups();    // validates the partition and layer coverage
}

ForwardOutput QuerySegmenter::forward(Tape& t, const Image& image,
                                      const std::vector<double>& text_embedding) {
    const int D = cfg_.embed_dim;
    if (image.h != cfg_.canvas || image.w != cfg_.canvas || image.c != 3)
        throw ValidationError("forward: image must be a 3-channel canvas-sized raster");
    if (static_cast<int>(text_embedding.size()) != D)
        throw ValidationError("forward: text embedding dim mismatch");

    const int g = cfg_.canvas / cfg_.patch;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(D));
    auto P = [&](const std::string& name) { return t.param(param(name)); };
    auto attention = [&](Var queries, Var keys_vals, const std::string& stem) {
        Var q = t.linear(queries, P(stem + ".q.W"), P(stem + ".q.b"));
        Var k = t.linear(keys_vals, P(stem + ".k.W"), P(stem + ".k.b"));
        Var v = t.linear(keys_vals, P(stem + ".v.W"), P(stem + ".v.b"));
        Var att = t.softmax_rows(t.affine(t.matmul_nt(q, k), att_scale, 0.0));
        return t.linear(t.matmul(att, v), P(stem + ".o.W"), P(stem + ".o.b"));
    };
    auto mlp = [&](Var x, const std::string& stem) {
        return t.linear(t.gelu(t.linear(x, P(stem + ".m1.W"), P(stem + ".m1.b"))),
                        P(stem + ".m2.W"), P(stem + ".m2.b"));
    };

    // encoder
    Var x = t.linear(t.input(g * g, cfg_.patch * cfg_.patch * 3, patchify(image, cfg_.patch)),
                     P("patch.W"), P("patch.b"));
    x = t.add(x, P("pos"));
    for (int l = 1; l <= cfg_.enc_layers; ++l) {
        const std::string stem = "enc" + std::to_string(l);
        Var pre = t.layernorm(x, P(stem + ".ln1.g"), P(stem + ".ln1.b"));
        x = t.add(x, attention(pre, pre, stem + ".attn"));
        Var pre2 = t.layernorm(x, P(stem + ".ln2.g"), P(stem + ".ln2.b"));
        x = t.add(x, mlp(pre2, stem + ".mlp"));
    }
    x = t.layernorm(x, P("enc_out.ln.g"), P("enc_out.ln.b"));

    // text conditioning: FiLM gate over encoder features
    Var z = t.input(1, D, text_embedding.data());
    Var gate = t.affine(t.matmul(z, P("film.W")), 1.0, 1.0);
    Var feats = t.mul_row(x, gate);

    // query decoder; the text embedding enters the query state directly so
    // queries act as concept-conditioned probes from the first step
    Var qs = t.add_row(P("queries"), t.matmul(z, P("qtext.W")));
    for (int l = 0; l < cfg_.dec_layers; ++l) {
        const std::string stem = "dec" + std::to_string(l);
        Var a = t.layernorm(qs, P(stem + ".ln1.g"), P(stem + ".ln1.b"));
        qs = t.add(qs, attention(a, a, stem + ".self"));
        Var b = t.layernorm(qs, P(stem + ".ln2.g"), P(stem + ".ln2.b"));
        qs = t.add(qs, attention(b, feats, stem + ".cross"));
        Var c = t.layernorm(qs, P(stem + ".ln3.g"), P(stem + ".ln3.b"));
        qs = t.add(qs, mlp(c, stem + ".mlp"));
    }

    // heads
    ForwardOutput out;
    Var u = t.linear(qs, P("cls.U"), Var{});
    Var tv = t.matmul(z, P("cls.P"));
    out.class_logits = t.add_scalar(t.affine(t.matmul_nt(u, tv), att_scale, 0.0), P("cls.bias"));
    out.presence_logits = t.linear(qs, P("pres.W"), P("pres.b"));
    out.boxes = t.sigmoid(
        t.linear(t.gelu(t.linear(qs, P("box.h.W"), P("box.h.b"))), P("box.out.W"), P("box.out.b")));

    const int mg = cfg_.resolved_mask_grid();
    const int stride = cfg_.canvas / mg;
    Var pix_tokens = t.upsample_grid_rows(x, g, g, mg, mg);
    Var pa = t.linear(pix_tokens, P("maskup.W"), P("maskup.b"));
    Var pb = t.linear(t.input(mg * mg, stride * stride * 3, patchify(image, stride)),
                      P("stem.W"), P("stem.b"));
    Var pix = t.gelu(t.add(pa, pb));
    Var membed = t.linear(qs, P("maskembed.W"), P("maskembed.b"));
    const double mask_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.mask_dim));
    out.mask_logits =
        t.add_scalar(t.affine(t.matmul_nt(membed, pix), mask_scale, 0.0), P("mask.bias"));
    return out;
}

std::vector<QueryPrediction> QuerySegmenter::predictions_from(const Tape& t,
                                                              const ForwardOutput& out) const {
    const int mg = cfg_.resolved_mask_grid();
    std::vector<QueryPrediction> preds(cfg_.n_q);
    const auto& cls = t.value(out.class_logits);
    const auto& pres = t.value(out.presence_logits);
    const auto& boxes = t.value(out.boxes);
    const auto& masks = t.value(out.mask_logits);
    for (int i = 0; i < cfg_.n_q; ++i) {
        QueryPrediction& p = preds[i];
        p.class_logit = cls[i];
        p.presence_logit = pres[i];
        p.box = NormBox{boxes[i * 4 + 0], boxes[i * 4 + 1], boxes[i * 4 + 2], boxes[i * 4 + 3]};
        p.mask_logits = Grid(mg, mg);
        std::copy_n(&masks[static_cast<size_t>(i) * mg * mg], static_cast<size_t>(mg) * mg,
                    p.mask_logits.v.begin());
    }
    return preds;
}

std::vector<QueryPrediction> QuerySegmenter::infer(const Image& image,
                                                   const std::vector<double>& text_embedding) const {
    // forward only; the tape is discarded without backward, so parameters
    // are never mutated
    auto* self = const_cast<QuerySegmenter*>(this);
    Tape tape;
    ForwardOutput out = self->forward(tape, image, text_embedding);
    return predictions_from(tape, out);
}

std::map<std::string, std::vector<int>> QuerySegmenter::parameter_groups() const {
    std::map<std::string, std::vector<int>> groups;
    for (int i = 0; i < static_cast<int>(params_.size()); ++i)
        groups[params_[i].group].push_back(i);
    size_t covered = 0;
    for (const auto& [name, idx] : groups) covered += idx.size();
    if (covered != params_.size())
        throw ValidationError("parameter_groups: groups do not partition the parameter set");
    const auto layers = vision_layer_indices();
    if (static_cast<int>(layers.size()) != cfg_.enc_layers)
        throw ValidationError("parameter_groups: vision backbone must cover every layer index");
    return groups;
}

std::vector<int> QuerySegmenter::vision_layer_indices() const {
    std::set<int> layers;
    for (const Param& p : params_)
        if (p.group == kGroupVision) layers.insert(p.layer);
    return {layers.begin(), layers.end()};
}

size_t QuerySegmenter::total_scalar_params() const {
    size_t n = 0;
    for (const Param& p : params_) n += p.size();
    return n;
}

// ---- checkpoint archive ---------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'S', 'E', 'G', 'C', 'K', 'P', '1'};

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const QuerySegmenter& model, const json& metadata,
                     bool include_moments) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);

    json meta = metadata;
    meta["model_config"] = model.config().to_json();
    const std::string meta_str = meta.dump();

    out.write(kMagic, sizeof(kMagic));
    write_pod<uint64_t>(out, meta_str.size());
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    write_pod<uint64_t>(out, model.params().size());
    for (const Param& p : model.params()) {
        write_pod<uint32_t>(out, static_cast<uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_pod<uint32_t>(out, static_cast<uint32_t>(p.rows));
        write_pod<uint32_t>(out, static_cast<uint32_t>(p.cols));
        write_pod<uint8_t>(out, include_moments ? 1 : 0);
        out.write(reinterpret_cast<const char*>(p.value.data()),
                  static_cast<std::streamsize>(p.value.size() * sizeof(double)));
        if (include_moments) {
            out.write(reinterpret_cast<const char*>(p.m.data()),
                      static_cast<std::streamsize>(p.m.size() * sizeof(double)));
            out.write(reinterpret_cast<const char*>(p.v.data()),
                      static_cast<std::streamsize>(p.v.size() * sizeof(double)));
        }
    }
    if (!out) throw IoError("short write on checkpoint: " + path);
}

QuerySegmenter load_checkpoint(const std::string& path, json* metadata_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ValidationError("not a checkpoint file: " + path);

    const uint64_t meta_len = read_pod<uint64_t>(in);
    std::string meta_str(meta_len, '\0');
    in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    json meta;
    try {
        meta = json::parse(meta_str);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("corrupt checkpoint metadata: ") + e.what());
    }

    QuerySegmenter model(ModelConfig::from_json(meta.at("model_config")), /*init_seed=*/0);
    const uint64_t n_tensors = read_pod<uint64_t>(in);
    for (uint64_t i = 0; i < n_tensors; ++i) {
        const uint32_t name_len = read_pod<uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint32_t rows = read_pod<uint32_t>(in);
        const uint32_t cols = read_pod<uint32_t>(in);
        const uint8_t has_moments = read_pod<uint8_t>(in);
        Param& p = model.param(name);
        if (static_cast<uint32_t>(p.rows) != rows || static_cast<uint32_t>(p.cols) != cols)
            throw ValidationError("checkpoint tensor shape mismatch for '" + name + "'");
        in.read(reinterpret_cast<char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.size() * sizeof(double)));
        if (has_moments) {
            in.read(reinterpret_cast<char*>(p.m.data()),
                    static_cast<std::streamsize>(p.m.size() * sizeof(double)));
            in.read(reinterpret_cast<char*>(p.v.data()),
                    static_cast<std::streamsize>(p.v.size() * sizeof(double)));
        }
        if (!in) throw IoError("truncated checkpoint: " + path);
    }
    if (metadata_out) *metadata_out = meta;
    return model;
}

} // namespace promptseg
