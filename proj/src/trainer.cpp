#include "promptseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "promptseg/errors.hpp"
#include "promptseg/objective.hpp"
#include "promptseg/rng.hpp"

namespace promptseg {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> read_id_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("id file not found: " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

void write_id_file(const std::string& path, const std::vector<std::string>& ids) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write id file: " + path);
    for (const std::string& id : ids) out << id << "\n";
}

PrepareResult run_prepare(const std::string& manifest_path, const std::string& out_dir,
                          const SplitSpec& spec) {
    const std::vector<SampleRecord> records = load_manifest(manifest_path);
    if (records.empty()) throw ValidationError("manifest has no records: " + manifest_path);
    const ConceptDictionary dict = build_concept_dictionary(records);

    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& r : records) ids.push_back(r.id);
    auto [train, val] = split_train_val(std::move(ids), spec);

    fs::create_directories(out_dir);
    PrepareResult res;
    res.train_ids_path = (fs::path(out_dir) / "train_ids.txt").string();
    res.val_ids_path = (fs::path(out_dir) / "val_ids.txt").string();
    res.dictionary_path = (fs::path(out_dir) / "dictionary.json").string();
    write_id_file(res.train_ids_path, train);
    write_id_file(res.val_ids_path, val);
    std::ofstream dict_out(res.dictionary_path);
    if (!dict_out) throw IoError("cannot write dictionary: " + res.dictionary_path);
    dict_out << dictionary_to_json(dict);
    res.n_train = static_cast<int>(train.size());
    res.n_val = static_cast<int>(val.size());
    return res;
}

namespace {

struct LoadedSample {
    std::string id;
    std::string dataset;
    Image image;    // letterboxed canvas
    std::vector<InstanceTarget> instances;
    std::vector<std::string> instance_concepts;
};

struct TrainExample {
    int sample = -1;
    std::string concept_name;
    std::vector<int> instance_idx;
    int prompt_present = 0;
};

std::map<std::string, SampleRecord> index_records(const std::string& manifest_path) {
    std::map<std::string, SampleRecord> by_id;
    for (SampleRecord& r : load_manifest(manifest_path)) {
        r.image_path = resolve_path(manifest_path, r.image_path);
        r.mask_path = resolve_path(manifest_path, r.mask_path);
        by_id.emplace(r.id, std::move(r));
    }
    return by_id;
}

const SampleRecord& record_for(const std::map<std::string, SampleRecord>& by_id,
                               const std::string& id) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("split id '" + id + "' missing from manifest");
    return it->second;
}

LoadedSample load_train_sample(const SampleRecord& rec, const ConceptDictionary& dict,
                               int canvas) {
    TripletSample triplet = expand_to_triplets(rec, dict, canvas);
    LoadedSample s;
    s.id = rec.id;
    s.dataset = rec.dataset_name;
    s.image = std::move(triplet.image);
    for (size_t i = 0; i < triplet.instance_masks.size(); ++i) {
        InstanceTarget t;
        t.concept_id = dict.concept_index(triplet.concepts[i]);
        t.box = box_from_mask(triplet.instance_masks[i]);
        t.mask = std::move(triplet.instance_masks[i]);
        s.instances.push_back(std::move(t));
        s.instance_concepts.push_back(triplet.concepts[i]);
    }
    return s;
}

std::vector<int> epoch_permutation(size_t n, uint64_t seed, int64_t epoch) {
    std::vector<int> perm(n);
    for (size_t i = 0; i < n; ++i) perm[i] = static_cast<int>(i);
    SplitMix64 rng(seed + 0x9E3779B97F4A7C15ull * static_cast<uint64_t>(epoch + 1));
    for (size_t i = n - 1; i > 0; --i) {
        const size_t j = static_cast<size_t>(rng.next_below(i + 1));
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

double mean_dice_of(const std::vector<EvalRecord>& records) {
    if (records.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& r : records) sum += r.dice;
    return sum / static_cast<double>(records.size());
}

} // namespace

EvalSample load_eval_sample(const SampleRecord& record, const ConceptDictionary& dict,
                            int canvas) {
    Image image = read_image_png(record.image_path);
    LabelMap native_mask = read_mask_png(record.mask_path);
    if (image.h != native_mask.h || image.w != native_mask.w)
        throw ValidationError("image/mask shape mismatch for sample '" + record.id + "'");

    EvalSample s;
    s.id = record.id;
    s.dataset = record.dataset_name;
    s.canvas_image = letterbox_image(image, canvas, &s.info);
    s.concepts = dict.dataset_concepts(record.dataset_name);
    for (const std::string& concept_name : s.concepts) {
        BinaryMask gt(native_mask.h, native_mask.w, 0);
        for (const auto& [label, mapped] : record.label_map)
            if (dict.concept_for(record.dataset_name, label) == concept_name)
                for (size_t i = 0; i < native_mask.size(); ++i)
                    if (native_mask.v[i] == label) gt.v[i] = 1;
        s.gt_masks.push_back(std::move(gt));
    }
    return s;
}

std::vector<EvalRecord> score_semantic_map(const LabelMap& canvas_labels, const EvalSample& s,
                                           const std::string& split_kind) {
    const LabelMap native = unletterbox_labels(canvas_labels, s.info);
    std::vector<EvalRecord> records;
    for (size_t k = 0; k < s.concepts.size(); ++k) {
        BinaryMask pred(native.h, native.w, 0);
        const uint8_t label = static_cast<uint8_t>(k + 1);
        for (size_t i = 0; i < native.size(); ++i) pred.v[i] = native.v[i] == label;
        EvalRecord r;
        r.dataset = s.dataset;
        r.concept_name = s.concepts[k];
        r.dice = dice(pred, s.gt_masks[k]);
        r.iou = iou(pred, s.gt_masks[k]);
        r.sample_id = s.id;
        r.split_kind = split_kind;
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<EvalRecord> evaluate_samples(const QuerySegmenter& model,
                                         const std::vector<EvalSample>& samples,
                                         const std::string& split_kind) {
    std::vector<EvalRecord> records;
    for (const EvalSample& s : samples) {
        const SemanticMap sem = predict_semantic_map(model, s.canvas_image, s.concepts);
        for (EvalRecord& r : score_semantic_map(sem.labels, s, split_kind))
            records.push_back(std::move(r));
    }
    return records;
}

TrainResult run_training(const RunConfig& cfg, std::ostream* info) {
    if (cfg.manifest.empty()) throw ValidationError("train: manifest not set");
    if (cfg.llrd_layers != cfg.enc_layers)
        throw ValidationError("train: llrd_layers must equal enc_layers");
    const auto by_id = index_records(cfg.manifest);

    const fs::path out_dir(cfg.out_dir);
    const std::string dict_path = (out_dir / "dictionary.json").string();
    const std::string train_ids_path = (out_dir / "train_ids.txt").string();
    const std::string val_ids_path = (out_dir / "val_ids.txt").string();
    if (!fs::exists(dict_path) || !fs::exists(train_ids_path))
        throw ValidationError("train: missing prepared splits in '" + cfg.out_dir +
                              "' (run prepare first)");
    std::ifstream dict_in(dict_path);
    std::stringstream dict_buf;
    dict_buf << dict_in.rdbuf();
    const ConceptDictionary dict = dictionary_from_json(dict_buf.str());
    const std::vector<std::string> train_ids = read_id_file(train_ids_path);
    const std::vector<std::string> val_ids = read_id_file(val_ids_path);

    // model + optimizer state
    QuerySegmenter model = [&] {
        if (cfg.resume.empty()) return QuerySegmenter(cfg.model_config(), cfg.seed);
        return load_checkpoint(cfg.resume);
    }();
    int64_t start_step = 0;
    double best_val = -1.0;
    if (!cfg.resume.empty()) {
        json meta;
        load_checkpoint(cfg.resume, &meta);    // reread for metadata only
        start_step = meta.value("step", 0);
        best_val = meta.value("best_val_dice", -1.0);
    }

    // data: training samples and prompt examples
    std::vector<LoadedSample> samples;
    samples.reserve(train_ids.size());
    for (const std::string& id : train_ids)
        samples.push_back(load_train_sample(record_for(by_id, id), dict, cfg.canvas));

    std::vector<TrainExample> examples;
    for (int si = 0; si < static_cast<int>(samples.size()); ++si) {
        for (const std::string& concept_name : dict.dataset_concepts(samples[si].dataset)) {
            TrainExample ex;
            ex.sample = si;
            ex.concept_name = concept_name;
            for (int k = 0; k < static_cast<int>(samples[si].instances.size()); ++k)
                if (samples[si].instance_concepts[k] == concept_name) ex.instance_idx.push_back(k);
            ex.prompt_present = ex.instance_idx.empty() ? 0 : 1;
            examples.push_back(std::move(ex));
        }
    }
    if (examples.empty()) throw ValidationError("train: no training examples");

    std::map<std::string, std::vector<double>> embeddings;
    for (const std::string& c : dict.vocabulary)
        embeddings[c] = embed_concept(c, cfg.embed_dim).v;

    std::vector<EvalSample> val_samples;
    for (const std::string& id : val_ids)
        val_samples.push_back(load_eval_sample(record_for(by_id, id), dict, cfg.canvas));

    const size_t n_examples = examples.size();
    const int64_t steps_per_epoch =
        static_cast<int64_t>((n_examples + cfg.batch_size - 1) / cfg.batch_size);
    const int64_t total_steps =
        cfg.max_steps > 0 ? cfg.max_steps : steps_per_epoch * cfg.epochs;

    const ObjectiveWeights weights = cfg.objective_weights();
    const GroupRates rates = cfg.group_rates();
    const LLRDSpec llrd = cfg.llrd_spec();
    const ScheduleSpec sched = cfg.schedule_spec();
    const AdamWConfig adamw = cfg.adamw_config();

    fs::create_directories(out_dir);
    TrainResult result;
    result.best_checkpoint = (out_dir / "best.ckpt").string();
    result.last_checkpoint = (out_dir / "last.ckpt").string();
    result.loss_log = (out_dir / "loss_log.jsonl").string();
    std::ofstream log(result.loss_log, start_step > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write loss log: " + result.loss_log);

    // (seed, epoch)-keyed permutation; reconstructed on resume so an
    // interrupted run replays the identical example stream
    int64_t perm_epoch = -1;
    std::vector<int> perm;
    auto example_at = [&](int64_t consumed) -> const TrainExample& {
        const int64_t epoch = consumed / static_cast<int64_t>(n_examples);
        const int64_t offset = consumed % static_cast<int64_t>(n_examples);
        if (epoch != perm_epoch) {
            perm = epoch_permutation(n_examples, cfg.seed, epoch);
            perm_epoch = epoch;
        }
        return examples[perm[static_cast<size_t>(offset)]];
    };

    auto save_ckpt = [&](const std::string& path, int64_t step) {
        json meta{{"step", step},
                  {"best_val_dice", best_val},
                  {"run_config", cfg.print()},
                  {"trained_vocabulary", dict.vocabulary}};
        save_checkpoint(path, model, meta, /*include_moments=*/true);
    };

    for (int64_t step = start_step + 1; step <= total_steps; ++step) {
        const int64_t base_consumed = (step - 1) * cfg.batch_size;

        // forward + matching across the whole batch first: the batch-wise
        // matched-count normalizer needs every assignment up front
        std::deque<Tape> tapes;
        std::vector<ForwardOutput> outs;
        std::vector<ExampleTargets> targets;
        std::vector<Assignment> o2os;
        std::vector<MultiAssignment> o2ms;
        std::vector<std::string> batch_ids;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const TrainExample& ex = example_at(base_consumed + b);
            batch_ids.push_back(samples[ex.sample].id + ":" + ex.concept_name);
        }
        auto abort_with_batch = [&](const std::string& why) -> std::runtime_error {
            std::string ids;
            for (const auto& id : batch_ids) ids += " " + id;
            return std::runtime_error(why + " at step " + std::to_string(step) +
                                      "; offending batch:" + ids);
        };

        LossBreakdown step_loss;
        try {
            int matched_raw = 0;
            for (int b = 0; b < cfg.batch_size; ++b) {
                const TrainExample& ex = example_at(base_consumed + b);
                const LoadedSample& s = samples[ex.sample];

                ExampleTargets tg;
                tg.prompt_present = ex.prompt_present;
                for (int k : ex.instance_idx) tg.instances.push_back(s.instances[k]);

                tapes.emplace_back();
                ForwardOutput out =
                    model.forward(tapes.back(), s.image, embeddings[ex.concept_name]);
                const auto preds = model.predictions_from(tapes.back(), out);

                CostMatrix cost;
                Assignment o2o = match_example(preds, tg, weights.matcher, &cost);
                MultiAssignment o2m;
                if (!tg.instances.empty())
                    o2m = one_to_many_assign(preds, tg.instances, cost, o2o, weights.o2m);
                matched_raw += static_cast<int>(o2o.pairs.size());

                outs.push_back(out);
                targets.push_back(std::move(tg));
                o2os.push_back(std::move(o2o));
                o2ms.push_back(std::move(o2m));
            }
            const double matched_norm = std::max(1, matched_raw);

            step_loss.matched_count = static_cast<int>(matched_norm);
            for (int b = 0; b < cfg.batch_size; ++b) {
                ExampleLoss el = build_example_objective(tapes[b], outs[b], model, targets[b],
                                                         weights, matched_norm,
                                                         1.0 / cfg.batch_size, &o2os[b], &o2ms[b]);
                if (!std::isfinite(el.values.total)) throw abort_with_batch("non-finite loss");
                tapes[b].backward(el.total);
                step_loss.ce += el.values.ce;
                step_loss.pres += el.values.pres;
                step_loss.l1 += el.values.l1;
                step_loss.giou += el.values.giou;
                step_loss.find_o2o += el.values.find_o2o;
                step_loss.find_o2m += el.values.find_o2m;
                step_loss.seg_focal += el.values.seg_focal;
                step_loss.dice += el.values.dice;
                step_loss.seg_pres += el.values.seg_pres;
                step_loss.total += el.values.total;
            }
        } catch (const ValidationError& e) {
            // non-finite logits surface as matcher validation errors; keep
            // the batch diagnostic either way
            throw abort_with_batch(e.what());
        }

        for (Param& p : model.params()) {
            const int layer = p.group == kGroupVision ? p.layer : 0;
            const double lr = effective_rate(p.group, layer, step, rates, llrd, sched);
            adamw_step(p, lr, adamw, step);
            std::fill(p.grad.begin(), p.grad.end(), 0.0);
        }

        json rec{{"step", step},
                 {"total", step_loss.total},
                 {"ce", step_loss.ce},
                 {"pres", step_loss.pres},
                 {"l1", step_loss.l1},
                 {"giou", step_loss.giou},
                 {"find_o2o", step_loss.find_o2o},
                 {"find_o2m", step_loss.find_o2m},
                 {"seg_focal", step_loss.seg_focal},
                 {"dice", step_loss.dice},
                 {"seg_pres", step_loss.seg_pres},
                 {"matched_count", step_loss.matched_count},
                 {"lr_decoder_seg_dot", effective_rate(kGroupDecoder, 0, step, rates, llrd, sched)},
                 {"lr_vision_backbone",
                  effective_rate(kGroupVision, llrd.layers, step, rates, llrd, sched)},
                 {"lr_language_projection",
                  effective_rate(kGroupLanguage, 0, step, rates, llrd, sched)},
                 {"lr_geometry_prompt",
                  effective_rate(kGroupGeometry, 0, step, rates, llrd, sched)}};
        log << rec.dump() << "\n";

        const bool last = step == total_steps;
        if (!val_samples.empty() && (step % cfg.val_every == 0 || last)) {
            const double val_dice = mean_dice_of(evaluate_samples(model, val_samples, "internal"));
            if (info)
                (*info) << "step " << step << " loss " << step_loss.total << " val_dice "
                        << val_dice << "\n";
            if (val_dice > best_val) {
                best_val = val_dice;
                save_ckpt(result.best_checkpoint, step);
            }
            if (last) result.final_val_dice = val_dice;
        } else if (info && (step % 100 == 0 || step == 1)) {
            (*info) << "step " << step << " loss " << step_loss.total << "\n";
        }
        if (step % cfg.ckpt_every == 0 || last) save_ckpt(result.last_checkpoint, step);
        result.steps = step;
    }

    if (best_val < 0 && result.steps > 0) save_ckpt(result.best_checkpoint, result.steps);
    result.best_val_dice = std::max(best_val, 0.0);
    return result;
}

EvalOutput run_eval(const std::string& checkpoint_path, const std::string& manifest_path,
                    const std::string& split_name, const std::string& out_dir,
                    const std::string& split_kind, std::ostream* info) {
    json meta;
    const QuerySegmenter model = load_checkpoint(checkpoint_path, &meta);
    const auto by_id = index_records(manifest_path);

    std::vector<std::string> ids;
    if (split_name == "all") {
        for (const auto& [id, rec] : by_id) ids.push_back(id);
    } else {
        ids = read_id_file((fs::path(out_dir) / (split_name + "_ids.txt")).string());
    }
    std::sort(ids.begin(), ids.end());

    std::vector<SampleRecord> records;
    records.reserve(ids.size());
    for (const std::string& id : ids) records.push_back(record_for(by_id, id));
    // prompt lists come from the corpus-wide dictionary, not the split subset
    std::vector<SampleRecord> all_records;
    all_records.reserve(by_id.size());
    for (const auto& [id, rec] : by_id) all_records.push_back(rec);
    const ConceptDictionary dict = build_concept_dictionary(all_records);

    std::vector<EvalSample> samples;
    samples.reserve(records.size());
    for (const SampleRecord& rec : records)
        samples.push_back(load_eval_sample(rec, dict, model.config().canvas));

    const std::vector<EvalRecord> eval_records = evaluate_samples(model, samples, split_kind);

    fs::create_directories(out_dir);
    EvalOutput out;
    out.records_path = (fs::path(out_dir) / (split_name + "_records.jsonl")).string();
    out.report_path = (fs::path(out_dir) / (split_name + "_report.txt")).string();
    write_records(out.records_path, eval_records);
    const Report report = aggregate(eval_records);
    std::ofstream rep(out.report_path);
    if (!rep) throw IoError("cannot write report: " + out.report_path);
    rep << format_report_table(report);
    out.mean_dice = mean_dice_of(eval_records);
    if (info) (*info) << "evaluated " << eval_records.size() << " records, mean dice "
                      << out.mean_dice << "\n";
    return out;
}

ReportOutput run_report(const std::vector<std::string>& record_files, const std::string& out_dir,
                        std::ostream* info) {
    if (record_files.empty() || record_files.size() > 2)
        throw ValidationError("report: need one or two record files");
    const std::vector<EvalRecord> records_a = read_records(record_files[0]);
    if (records_a.empty()) throw ValidationError("report: empty record file " + record_files[0]);
    const Report a = aggregate(records_a);

    Report b;
    const Report* b_ptr = nullptr;
    if (record_files.size() == 2) {
        const std::vector<EvalRecord> records_b = read_records(record_files[1]);
        if (records_b.empty())
            throw ValidationError("report: empty record file " + record_files[1]);
        b = aggregate(records_b);
        b_ptr = &b;

        auto names = [](const Report& r) {
            std::vector<std::string> out;
            for (const auto& d : r.datasets) out.push_back(d.split_kind + "/" + d.dataset);
            return out;
        };
        if (info && names(a) != names(b))
            (*info) << "warning: dataset sets differ; reporting the intersection\n";
    }

    fs::create_directories(out_dir);
    ReportOutput out;
    out.table_text = format_report_table(a, b_ptr);
    out.table_path = (fs::path(out_dir) / "report.txt").string();
    out.figure_path = (fs::path(out_dir) / "report.svg").string();
    std::ofstream table(out.table_path);
    if (!table) throw IoError("cannot write report: " + out.table_path);
    table << out.table_text;
    std::ofstream fig(out.figure_path);
    if (!fig) throw IoError("cannot write figure: " + out.figure_path);
    fig << render_report_svg(a, b_ptr);
    return out;
}

} // namespace promptseg
