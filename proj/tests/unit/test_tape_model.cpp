#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "promptseg/config.hpp"
#include "promptseg/objective.hpp"
#include "promptseg/rng.hpp"

using namespace promptseg;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.n_q = 5;
    cfg.embed_dim = 16;
    cfg.enc_layers = 12;
    cfg.canvas = 32;
    cfg.patch = 16;
    cfg.mask_grid = 8;
    cfg.mask_dim = 8;
    cfg.dec_layers = 1;
    cfg.mlp_ratio = 2;
    return cfg;
}

Image random_image(SplitMix64& rng, int size) {
    Image img(size, size, 3);
    for (auto& v : img.v) v = rng.next_double();
    return img;
}

ExampleTargets blob_targets(int canvas) {
    ExampleTargets tg;
    tg.prompt_present = 1;
    BinaryMask a(canvas, canvas, 0), b(canvas, canvas, 0);
    for (int r = 4; r < 12; ++r)
        for (int c = 4; c < 14; ++c) a.at(r, c) = 1;
    for (int r = 20; r < 28; ++r)
        for (int c = 18; c < 30; ++c) b.at(r, c) = 1;
    for (BinaryMask* m : {&a, &b}) {
        InstanceTarget t;
        t.box = box_from_mask(*m);
        t.mask = *m;
        tg.instances.push_back(std::move(t));
    }
    return tg;
}

} // namespace

TEST_SUITE("tape") {

TEST_CASE("engine gradients match finite differences through a composed graph") {
    SplitMix64 rng(2024);
    Param w1("w1", 6, 8, kGroupDecoder), b1("b1", 1, 8, kGroupDecoder);
    Param gate_w("gate", 1, 8, kGroupDecoder);
    Param g("g", 1, 8, kGroupDecoder), bb("bb", 1, 8, kGroupDecoder);
    Param w2("w2", 8, 8, kGroupDecoder);
    Param s("s", 1, 1, kGroupDecoder);
    for (Param* p : {&w1, &b1, &gate_w, &g, &bb, &w2, &s})
        for (auto& v : p->value) v = rng.next_double(-0.8, 0.8);
    for (auto& v : g.value) v = 1.0 + 0.2 * v;    // keep layernorm gain near 1

    std::vector<double> xdata(4 * 6);
    for (auto& v : xdata) v = rng.next_double(-1, 1);
    std::vector<uint8_t> gt(16);    // one upsampled 4x4 row
    for (auto& v : gt) v = static_cast<uint8_t>(rng.next_below(2));
    const std::vector<int> labels{1, 0, 1, 0};

    auto eval = [&](bool backward) {
        Tape t;
        Var x = t.input(4, 6, xdata.data());
        Var h = t.gelu(t.linear(x, t.param(w1), t.param(b1)));
        h = t.mul_row(h, t.param(gate_w));
        h = t.layernorm(h, t.param(g), t.param(bb));
        Var k = t.matmul(h, t.param(w2));
        Var att = t.softmax_rows(t.affine(t.matmul_nt(h, k), 0.35, 0.0));
        Var mixed = t.add(t.matmul(att, k), h);
        Var up = t.upsample_rows(t.add_scalar(mixed, t.param(s)), 2, 4, 4, 4);
        Var d1 = t.mask_dice(t.gather_rows(up, {1}), gt, 1.0);
        Var f1 = t.mask_focal_mean(t.gather_rows(up, {2}), gt, 0.6, 2.0);
        Var rowsum = t.focal_bce_sum(t.gather_rows(mixed, {0, 1, 2, 3}),
                                     std::vector<int>(32, 1), 0.25, 2.0);
        Var pres = t.presence_bce_sum(t.gather_rows(mixed, {0}),
                                      std::vector<int>(8, 0), 10.0);
        Var loss = t.weighted_sum({{d1, 2.0}, {f1, 3.0}, {rowsum, 0.25}, {pres, 0.5}});
        if (backward) t.backward(loss);
        return t.scalar(loss);
    };

    eval(/*backward=*/true);
    const double h_step = 1e-6;
    int checked = 0;
    for (Param* p : {&w1, &b1, &gate_w, &g, &bb, &w2, &s}) {
        for (size_t i = 0; i < p->value.size(); i += 3) {
            const double saved = p->value[i];
            p->value[i] = saved + h_step;
            const double up_val = eval(false);
            p->value[i] = saved - h_step;
            const double dn_val = eval(false);
            p->value[i] = saved;
            const double fd = (up_val - dn_val) / (2 * h_step);
            if (std::abs(fd) < 1e-10) {
                CHECK(std::abs(p->grad[i]) < 1e-7);
            } else {
                CHECK(p->grad[i] == doctest::Approx(fd).epsilon(1e-4));
            }
            ++checked;
        }
    }
    CHECK(checked > 40);
}

} // TEST_SUITE

TEST_SUITE("model") {

TEST_CASE("concept embeddings are deterministic, unit norm, and match the golden file") {
    const ConceptEmbedding a = embed_concept("polyp", 16);
    const ConceptEmbedding b = embed_concept("polyp", 16);
    CHECK(a.v == b.v);

    double norm = 0;
    for (double v : a.v) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));

    std::ifstream in(std::string(PROMPTSEG_GOLDEN_DIR) + "/embeddings_d16.json");
    REQUIRE(in.good());
    const nlohmann::json golden = nlohmann::json::parse(in);
    const auto polyp = golden.at("polyp").get<std::vector<double>>();
    const auto lung = golden.at("lung").get<std::vector<double>>();
    for (int i = 0; i < 16; ++i)
        CHECK(a.v[i] == doctest::Approx(polyp[i]).epsilon(1e-12));
    const ConceptEmbedding l = embed_concept("lung", 16);
    for (int i = 0; i < 16; ++i)
        CHECK(l.v[i] == doctest::Approx(lung[i]).epsilon(1e-12));
    CHECK(a.v != l.v);

    CHECK_THROWS_AS(embed_concept("", 16), ValidationError);
}

TEST_CASE("forward honors the shape contract and is deterministic") {
    const ModelConfig cfg = tiny_config();
    QuerySegmenter model(cfg, 7);
    SplitMix64 rng(3);
    const Image img = random_image(rng, cfg.canvas);
    const auto z = embed_concept("polyp", cfg.embed_dim);

    const auto preds = model.infer(img, z.v);
    REQUIRE(static_cast<int>(preds.size()) == cfg.n_q);
    for (const auto& p : preds) {
        CHECK(std::isfinite(p.class_logit));
        CHECK(p.mask_logits.h == cfg.mask_grid);
        CHECK(p.mask_logits.w == cfg.mask_grid);
        CHECK(p.box.w > 0);
        CHECK(p.box.w <= 1);
        CHECK(p.box.cx >= 0);
        CHECK(p.box.cx <= 1);
    }
    const auto preds2 = model.infer(img, z.v);
    for (int i = 0; i < cfg.n_q; ++i) {
        CHECK(preds[i].class_logit == preds2[i].class_logit);
        CHECK(preds[i].mask_logits.v == preds2[i].mask_logits.v);
    }
}

TEST_CASE("swapping the concept changes class logits") {
    const ModelConfig cfg = tiny_config();
    QuerySegmenter model(cfg, 7);
    SplitMix64 rng(5);
    const Image img = random_image(rng, cfg.canvas);
    const auto a = model.infer(img, embed_concept("polyp", cfg.embed_dim).v);
    const auto b = model.infer(img, embed_concept("lung", cfg.embed_dim).v);
    bool any_diff = false;
    for (int i = 0; i < cfg.n_q; ++i) any_diff |= a[i].class_logit != b[i].class_logit;
    CHECK(any_diff);
}

TEST_CASE("dimension mismatches are rejected") {
    QuerySegmenter model(tiny_config(), 7);
    SplitMix64 rng(5);
    const Image img = random_image(rng, 32);
    CHECK_THROWS_AS(model.infer(img, std::vector<double>(7, 0.1)), ValidationError);
    const Image wrong = random_image(rng, 16);
    CHECK_THROWS_AS(model.infer(wrong, std::vector<double>(16, 0.1)), ValidationError);
}

TEST_CASE("parameter groups partition the model and expose 12 backbone layers") {
    QuerySegmenter model(tiny_config(), 7);
    const auto groups = model.parameter_groups();
    REQUIRE(groups.size() == 4);
    CHECK(groups.count(kGroupDecoder));
    CHECK(groups.count(kGroupVision));
    CHECK(groups.count(kGroupLanguage));
    CHECK(groups.count(kGroupGeometry));

    size_t total = 0;
    for (const auto& [name, idx] : groups) total += idx.size();
    CHECK(total == model.params().size());

    const auto layers = model.vision_layer_indices();
    REQUIRE(layers.size() == 12);
    for (int l = 1; l <= 12; ++l) CHECK(layers[l - 1] == l);

    CHECK(model.total_scalar_params() < 2'000'000);
}

TEST_CASE("geometry prompt parameters receive zero gradients in text-only training") {
    const ModelConfig cfg = tiny_config();
    QuerySegmenter model(cfg, 7);
    SplitMix64 rng(11);
    const Image img = random_image(rng, cfg.canvas);
    const auto z = embed_concept("polyp", cfg.embed_dim);

    Tape tape;
    const ForwardOutput out = model.forward(tape, img, z.v);
    RunConfig rc;
    const ExampleLoss loss = build_example_objective(tape, out, model, blob_targets(cfg.canvas),
                                                     rc.objective_weights(), 2.0, 1.0);
    tape.backward(loss.total);

    std::map<std::string, double> group_grad;
    for (const Param& p : model.params()) {
        double sum = 0;
        for (double gv : p.grad) sum += std::abs(gv);
        CHECK(std::isfinite(sum));
        group_grad[p.group] += sum;
    }
    CHECK(group_grad[kGroupGeometry] == 0.0);
    CHECK(group_grad[kGroupDecoder] > 0.0);
    CHECK(group_grad[kGroupVision] > 0.0);
    CHECK(group_grad[kGroupLanguage] > 0.0);
}

TEST_CASE("model gradients match finite differences through the full objective") {
    const ModelConfig cfg = tiny_config();
    QuerySegmenter model(cfg, 21);
    SplitMix64 rng(13);
    const Image img = random_image(rng, cfg.canvas);
    const auto z = embed_concept("polyp", cfg.embed_dim);
    const ExampleTargets targets = blob_targets(cfg.canvas);
    RunConfig rc;
    const ObjectiveWeights weights = rc.objective_weights();

    // fixed assignments so the loss is smooth in the parameters
    Assignment o2o;
    MultiAssignment o2m;
    {
        Tape t;
        const ForwardOutput out = model.forward(t, img, z.v);
        const auto preds = model.predictions_from(t, out);
        CostMatrix cost;
        o2o = match_example(preds, targets, weights.matcher, &cost);
        o2m = one_to_many_assign(preds, targets.instances, cost, o2o, weights.o2m);
    }

    auto eval = [&](bool backward) {
        Tape t;
        const ForwardOutput out = model.forward(t, img, z.v);
        const ExampleLoss el =
            build_example_objective(t, out, model, targets, weights, 2.0, 1.0, &o2o, &o2m);
        if (backward) t.backward(el.total);
        return el.values.total;
    };

    for (Param& p : model.params())
        std::fill(p.grad.begin(), p.grad.end(), 0.0);
    eval(/*backward=*/true);

    // probe 10 scalar parameters spread across groups
    SplitMix64 pick(99);
    const double h_step = 1e-5;
    int probed = 0;
    while (probed < 10) {
        Param& p = model.params()[pick.next_below(model.params().size())];
        if (p.group == kGroupGeometry) continue;
        const size_t i = pick.next_below(p.size());
        const double saved = p.value[i];
        p.value[i] = saved + h_step;
        const double up = eval(false);
        p.value[i] = saved - h_step;
        const double dn = eval(false);
        p.value[i] = saved;
        const double fd = (up - dn) / (2 * h_step);
        if (std::abs(fd) < 1e-8) continue;    // skip dead directions
        CHECK(p.grad[i] == doctest::Approx(fd).epsilon(1e-3));
        ++probed;
    }
}

TEST_CASE("objective values agree with the standalone loss functions") {
    const ModelConfig cfg = tiny_config();
    QuerySegmenter model(cfg, 33);
    SplitMix64 rng(17);
    const Image img = random_image(rng, cfg.canvas);
    const auto z = embed_concept("square", cfg.embed_dim);
    const ExampleTargets targets = blob_targets(cfg.canvas);
    RunConfig rc;
    rc.n_q = cfg.n_q;
    const ObjectiveWeights weights = rc.objective_weights();

    Tape tape;
    const ForwardOutput out = model.forward(tape, img, z.v);
    const ExampleLoss el =
        build_example_objective(tape, out, model, targets, weights, 2.0, 1.0);
    const auto preds = model.predictions_from(tape, out);

    const FindLossResult find =
        find_loss(preds, targets.instances, el.o2o.pairs, weights.find, 2);
    CHECK(el.values.find_o2o == doctest::Approx(find.total).epsilon(1e-10));
    CHECK(el.values.ce == doctest::Approx(find.ce).epsilon(1e-10));

    // o2m branch reuses find_loss with the o2m pairs as positives
    const FindLossResult find_o2m =
        find_loss(preds, targets.instances, el.o2m.pairs, weights.find, 2);
    CHECK(el.values.find_o2m == doctest::Approx(find_o2m.total).epsilon(1e-10));

    // seg loss over the matched masks at canvas resolution
    std::vector<Grid> probs;
    std::vector<const BinaryMask*> gts;
    for (auto [q, t] : el.o2o.pairs) {
        const Grid raw = upsample_bilinear(preds[q].mask_logits, cfg.canvas, cfg.canvas);
        Grid pr(cfg.canvas, cfg.canvas);
        for (size_t i = 0; i < raw.size(); ++i) pr.v[i] = sigmoid_clamped(raw.v[i]);
        probs.push_back(std::move(pr));
        gts.push_back(&targets.instances[t].mask);
    }
    double best_conf = -1;
    for (const auto& p : preds)
        best_conf = std::max(best_conf,
                             sigmoid_clamped(p.class_logit) * sigmoid_clamped(p.presence_logit));
    const SegLossResult seg = seg_loss(probs, gts, 1, best_conf, weights.seg, 2);
    CHECK(el.values.seg_focal == doctest::Approx(seg.focal).epsilon(1e-9));
    CHECK(el.values.dice == doctest::Approx(seg.dice).epsilon(1e-9));
    CHECK(el.values.seg_pres == doctest::Approx(seg.presence).epsilon(1e-9));

    // total composes per the pinned linear combination
    const double seg_total = el.values.seg_focal + el.values.dice + el.values.seg_pres;
    CHECK(el.values.total ==
          doctest::Approx(total_loss(el.values.find_o2o, el.values.find_o2m, seg_total,
                                     weights.lambda_o2m))
              .epsilon(1e-9));
}

TEST_CASE("checkpoint round trip restores parameters, config and moments") {
    namespace fs = std::filesystem;
    const ModelConfig cfg = tiny_config();
    QuerySegmenter model(cfg, 77);
    SplitMix64 rng(1);
    for (Param& p : model.params()) {
        for (auto& v : p.m) v = rng.next_double(-1, 1);
        for (auto& v : p.v) v = rng.next_double(0, 1);
    }
    const std::string path = (fs::temp_directory_path() / "ps_ckpt_rt.bin").string();
    nlohmann::json meta{{"step", 123}, {"best_val_dice", 0.5}};
    save_checkpoint(path, model, meta);

    nlohmann::json meta2;
    QuerySegmenter back = load_checkpoint(path, &meta2);
    CHECK(meta2.at("step") == 123);
    CHECK(back.config().n_q == cfg.n_q);
    REQUIRE(back.params().size() == model.params().size());
    for (size_t i = 0; i < model.params().size(); ++i) {
        CHECK(back.params()[i].name == model.params()[i].name);
        CHECK(back.params()[i].value == model.params()[i].value);
        CHECK(back.params()[i].m == model.params()[i].m);
        CHECK(back.params()[i].v == model.params()[i].v);
    }

    const Image img = random_image(rng, cfg.canvas);
    const auto z = embed_concept("polyp", cfg.embed_dim);
    const auto a = model.infer(img, z.v);
    const auto b = back.infer(img, z.v);
    for (int i = 0; i < cfg.n_q; ++i) CHECK(a[i].class_logit == b[i].class_logit);
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ps.ckpt"), IoError);
}

} // TEST_SUITE
