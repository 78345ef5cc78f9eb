#include "promptseg/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "promptseg/errors.hpp"

namespace promptseg {

using nlohmann::json;

PromptResult predict_concept(const QuerySegmenter& model, const Image& image,
                             const std::string& concept_name) {
    const ConceptEmbedding z = embed_concept(concept_name, model.config().embed_dim);
    const std::vector<QueryPrediction> preds = model.infer(image, z.v);

    int best = 0;
    double best_conf = -1.0;
    for (int i = 0; i < static_cast<int>(preds.size()); ++i) {
        const double conf = sigmoid(preds[i].class_logit) * sigmoid(preds[i].presence_logit);
        if (conf > best_conf) {
            best_conf = conf;
            best = i;
        }
    }

    PromptResult r;
    r.concept_name = concept_name;
    r.confidence = best_conf;
    const int canvas = model.config().canvas;
    Grid logits = upsample_bilinear(preds[best].mask_logits, canvas, canvas);
    r.raw_probs = Grid(canvas, canvas);
    r.mask = BinaryMask(canvas, canvas, 0);
    for (size_t i = 0; i < logits.size(); ++i) {
        r.raw_probs.v[i] = sigmoid(logits.v[i]);
        r.mask.v[i] = r.raw_probs.v[i] >= 0.5 ? 1 : 0;
    }
    return r;
}

SemanticMap resolve_semantic_map(const std::vector<PromptResult>& results,
                                 const std::vector<std::string>& concepts) {
    if (results.empty() || results.size() != concepts.size())
        throw ValidationError("resolve_semantic_map: need one result per concept");
    const int h = results[0].raw_probs.h, w = results[0].raw_probs.w;
    SemanticMap out;
    out.labels = LabelMap(h, w, 0);
    for (size_t k = 0; k < concepts.size(); ++k) {
        out.legend[static_cast<int>(k) + 1] = concepts[k];
        if (results[k].raw_probs.h != h || results[k].raw_probs.w != w)
            throw ValidationError("resolve_semantic_map: result shape mismatch");
    }
    for (size_t px = 0; px < out.labels.size(); ++px) {
        double best_score = 0.0;
        int best_label = 0;
        for (size_t k = 0; k < results.size(); ++k) {
            const double prob = results[k].raw_probs.v[px];
            if (prob < 0.5) continue;    // the concept does not claim this pixel
            const double score = results[k].confidence * prob;
            if (best_label == 0 || score > best_score) {
                best_score = score;
                best_label = static_cast<int>(k) + 1;
            }
        }
        out.labels.v[px] = static_cast<uint8_t>(best_label);
    }
    return out;
}

SemanticMap predict_semantic_map(const QuerySegmenter& model, const Image& image,
                                 const std::vector<std::string>& concepts) {
    if (concepts.empty()) throw ValidationError("predict_semantic_map: empty concept list");
    std::vector<PromptResult> results;
    results.reserve(concepts.size());
    for (const std::string& c : concepts) results.push_back(predict_concept(model, image, c));
    return resolve_semantic_map(results, concepts);
}

namespace {

struct OverlapCounts {
    size_t inter = 0, p = 0, g = 0;
};

OverlapCounts count_overlap(const BinaryMask& pred, const BinaryMask& gt, const char* what) {
    require_same_shape(pred, gt, what);
    OverlapCounts c;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool pp = pred.v[i] != 0, gg = gt.v[i] != 0;
        c.inter += (pp && gg);
        c.p += pp;
        c.g += gg;
    }
    return c;
}

} // namespace

double dice(const BinaryMask& pred, const BinaryMask& gt) {
    const OverlapCounts c = count_overlap(pred, gt, "dice");
    if (c.p == 0 && c.g == 0) return 1.0;
    if (c.p == 0 || c.g == 0) return 0.0;
    return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.p + c.g);
}

double iou(const BinaryMask& pred, const BinaryMask& gt) {
    const OverlapCounts c = count_overlap(pred, gt, "iou");
    if (c.p == 0 && c.g == 0) return 1.0;
    if (c.p == 0 || c.g == 0) return 0.0;
    return static_cast<double>(c.inter) / static_cast<double>(c.p + c.g - c.inter);
}

Report aggregate(std::vector<EvalRecord> records) {
    if (records.empty()) throw ValidationError("aggregate: no records");
    std::sort(records.begin(), records.end(), [](const EvalRecord& a, const EvalRecord& b) {
        return std::tie(a.split_kind, a.dataset, a.sample_id, a.concept_name) <
               std::tie(b.split_kind, b.dataset, b.sample_id, b.concept_name);
    });

    Report rep;
    size_t i = 0;
    while (i < records.size()) {
        size_t j = i;
        double dsum = 0, isum = 0;
        while (j < records.size() && records[j].split_kind == records[i].split_kind &&
               records[j].dataset == records[i].dataset) {
            dsum += records[j].dice;
            isum += records[j].iou;
            ++j;
        }
        DatasetAggregate agg;
        agg.split_kind = records[i].split_kind;
        agg.dataset = records[i].dataset;
        agg.n_records = static_cast<int>(j - i);
        agg.mean_dice = dsum / agg.n_records;
        agg.mean_iou = isum / agg.n_records;
        rep.datasets.push_back(agg);
        i = j;
    }
    std::map<std::string, std::array<double, 3>> acc;    // split -> (dice sum, iou sum, count)
    for (const auto& d : rep.datasets) {
        acc[d.split_kind][0] += d.mean_dice;
        acc[d.split_kind][1] += d.mean_iou;
        acc[d.split_kind][2] += 1.0;
    }
    for (const auto& [split, a] : acc) rep.split_avg[split] = {a[0] / a[2], a[1] / a[2]};
    return rep;
}

void write_records(const std::string& path, const std::vector<EvalRecord>& records) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write records: " + path);
    for (const EvalRecord& r : records) {
        json line{{"dataset", r.dataset}, {"concept", r.concept_name}, {"dice", r.dice},
                  {"iou", r.iou},         {"sample_id", r.sample_id},  {"split_kind", r.split_kind}};
        out << line.dump() << "\n";
    }
}

std::vector<EvalRecord> read_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("record file not found: " + path);
    std::vector<EvalRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            json obj = json::parse(line);
            EvalRecord r;
            r.dataset = obj.at("dataset").get<std::string>();
            r.concept_name = obj.at("concept").get<std::string>();
            r.dice = obj.at("dice").get<double>();
            r.iou = obj.at("iou").get<double>();
            r.sample_id = obj.at("sample_id").get<std::string>();
            r.split_kind = obj.value("split_kind", std::string("internal"));
            records.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw ParseError("record file " + path + " line " + std::to_string(line_no) + ": " +
                             e.what());
        }
    }
    return records;
}

namespace {

std::string pct(double frac) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", frac * 100.0);
    return buf;
}

std::string pct_delta(double frac_delta) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%+.1f", frac_delta * 100.0);
    return buf;
}

const DatasetAggregate* find_dataset(const Report& r, const std::string& split,
                                     const std::string& dataset) {
    for (const auto& d : r.datasets)
        if (d.split_kind == split && d.dataset == dataset) return &d;
    return nullptr;
}

} // namespace

std::string format_report_table(const Report& a, const Report* b) {
    size_t name_w = 16;
    for (const auto& d : a.datasets)
        name_w = std::max(name_w, d.split_kind.size() + d.dataset.size() + 1);
    name_w += 2;

    std::ostringstream out;
    auto pad = [&](const std::string& s, size_t w) {
        out << s;
        for (size_t i = s.size(); i < w; ++i) out << ' ';
    };
    auto col = [&](const std::string& s) {
        for (size_t i = s.size(); i < 8; ++i) out << ' ';
        out << s;
    };

    pad("dataset", name_w);
    col("dice");
    col("iou");
    if (b) {
        col("dice_b");
        col("iou_b");
        col("d_dice");
        col("d_iou");
    }
    out << "\n";

    // rows per split kind, then the split average, mirroring the two-block
    // internal/external layout
    std::set<std::string> splits;
    for (const auto& d : a.datasets) splits.insert(d.split_kind);
    for (const std::string& split : splits) {
        std::array<double, 4> avg{0, 0, 0, 0};    // dice_a, iou_a, dice_b, iou_b
        int n = 0;
        for (const auto& d : a.datasets) {
            if (d.split_kind != split) continue;
            const DatasetAggregate* other = b ? find_dataset(*b, split, d.dataset) : nullptr;
            if (b && !other) continue;    // report the intersection
            pad(split + "/" + d.dataset, name_w);
            col(pct(d.mean_dice));
            col(pct(d.mean_iou));
            if (other) {
                col(pct(other->mean_dice));
                col(pct(other->mean_iou));
                col(pct_delta(other->mean_dice - d.mean_dice));
                col(pct_delta(other->mean_iou - d.mean_iou));
            }
            out << "\n";
            avg[0] += d.mean_dice;
            avg[1] += d.mean_iou;
            if (other) {
                avg[2] += other->mean_dice;
                avg[3] += other->mean_iou;
            }
            ++n;
        }
        if (n == 0) continue;
        for (double& v : avg) v /= n;
        pad(split + "/Avg", name_w);
        col(pct(avg[0]));
        col(pct(avg[1]));
        if (b) {
            col(pct(avg[2]));
            col(pct(avg[3]));
            col(pct_delta(avg[2] - avg[0]));
            col(pct_delta(avg[3] - avg[1]));
        }
        out << "\n";
    }
    return out.str();
}

std::string render_report_svg(const Report& a, const Report* b) {
    const int bar_h = 14, gap = 6, left = 220, width = 640;
    std::vector<const DatasetAggregate*> rows;
    for (const auto& d : a.datasets)
        if (!b || find_dataset(*b, d.split_kind, d.dataset)) rows.push_back(&d);
    const int per_row = b ? 2 * bar_h + gap : bar_h + gap;
    const int height = 30 + static_cast<int>(rows.size()) * per_row;

    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "' font-family='monospace' font-size='11'>\n";
    svg << "<text x='8' y='16'>mean dice by dataset (%)</text>\n";
    int y = 28;
    for (const auto* d : rows) {
        svg << "<text x='8' y='" << y + bar_h - 3 << "'>" << d->split_kind << "/" << d->dataset
            << "</text>\n";
        const double wa = d->mean_dice * (width - left - 60);
        svg << "<rect x='" << left << "' y='" << y << "' width='" << wa << "' height='"
            << bar_h - 2 << "' fill='#4477aa'/>\n";
        svg << "<text x='" << left + wa + 4 << "' y='" << y + bar_h - 3 << "'>"
            << pct(d->mean_dice) << "</text>\n";
        y += bar_h;
        if (b) {
            const DatasetAggregate* other = find_dataset(*b, d->split_kind, d->dataset);
            const double wb = other->mean_dice * (width - left - 60);
            svg << "<rect x='" << left << "' y='" << y << "' width='" << wb << "' height='"
                << bar_h - 2 << "' fill='#cc6677'/>\n";
            svg << "<text x='" << left + wb + 4 << "' y='" << y + bar_h - 3 << "'>"
                << pct(other->mean_dice) << "</text>\n";
            y += bar_h;
        }
        y += gap;
    }
    svg << "</svg>\n";
    return svg.str();
}

} // namespace promptseg
