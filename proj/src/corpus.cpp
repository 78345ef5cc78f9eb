#include "promptseg/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "promptseg/errors.hpp"
#include "promptseg/rng.hpp"

namespace promptseg {

using nlohmann::json;

const std::string& ConceptDictionary::concept_for(const std::string& dataset, int label) const {
    auto it = entries.find({dataset, label});
    if (it == entries.end())
        throw ValidationError("no concept for dataset '" + dataset + "' label " +
                              std::to_string(label));
    return it->second;
}

std::vector<std::string> ConceptDictionary::dataset_concepts(const std::string& dataset) const {
    std::set<std::string> uniq;
    for (const auto& [key, concept_str] : entries)
        if (key.first == dataset) uniq.insert(concept_str);
    return {uniq.begin(), uniq.end()};
}

int ConceptDictionary::concept_index(const std::string& concept_str) const {
    auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), concept_str);
    if (it == vocabulary.end() || *it != concept_str) return -1;
    return static_cast<int>(it - vocabulary.begin());
}

std::string canonicalize_concept(const std::string& raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (char ch : raw) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
    return out;
}

std::vector<SampleRecord> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("manifest not found: " + path);

    std::vector<SampleRecord> records;
    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        SampleRecord rec;
        try {
            rec.id = obj.at("id").get<std::string>();
            rec.image_path = obj.at("image").get<std::string>();
            rec.mask_path = obj.at("mask").get<std::string>();
            rec.dataset_name = obj.at("dataset").get<std::string>();
            rec.modality = obj.value("modality", std::string{});
            for (const auto& [key, val] : obj.at("labels").items()) {
                size_t pos = 0;
                int label = std::stoi(key, &pos);
                if (pos != key.size() || label <= 0)
                    throw ParseError("manifest line " + std::to_string(line_no) +
                                     ": label ids must be positive integers, got '" + key + "'");
                rec.label_map[label] = canonicalize_concept(val.get<std::string>());
            }
        } catch (const json::exception& e) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what());
        } catch (const std::invalid_argument&) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": bad label id");
        }
        if (!seen.insert(rec.id).second)
            throw ValidationError("duplicate sample id '" + rec.id + "' in manifest");
        records.push_back(std::move(rec));
    }
    return records;
}

ConceptDictionary build_concept_dictionary(const std::vector<SampleRecord>& records) {
    if (records.empty()) throw ValidationError("cannot build dictionary from zero records");
    ConceptDictionary dict;
    for (const auto& rec : records) {
        for (const auto& [label, concept_str] : rec.label_map) {
            auto key = std::make_pair(rec.dataset_name, label);
            auto [it, inserted] = dict.entries.emplace(key, concept_str);
            if (!inserted && it->second != concept_str)
                throw ValidationError("conflicting concepts for dataset '" + rec.dataset_name +
                                      "' label " + std::to_string(label) + ": '" + it->second +
                                      "' vs '" + concept_str + "'");
        }
    }
    std::set<std::string> vocab;
    for (const auto& [key, concept_str] : dict.entries) vocab.insert(concept_str);
    dict.vocabulary.assign(vocab.begin(), vocab.end());
    return dict;
}

std::vector<BinaryMask> connected_instances(const LabelMap& mask,
                                            const std::map<int, std::string>& label_map,
                                            std::vector<std::string>* concepts_out,
                                            const ConceptDictionary* dict,
                                            const std::string& dataset) {
    // validate label coverage first
    std::set<int> present;
    for (uint8_t p : mask.v)
        if (p != 0) present.insert(p);
    for (int label : present)
        if (!label_map.count(label))
            throw ValidationError("mask contains label id " + std::to_string(label) +
                                  " absent from label_map");

    std::vector<BinaryMask> instances;
    if (concepts_out) concepts_out->clear();
    std::vector<uint8_t> visited(mask.size(), 0);
    std::deque<std::pair<int, int>> queue;

    for (const auto& [label, raw_concept] : label_map) {    // map iterates label ids in order
        const std::string concept_str =
            dict ? dict->concept_for(dataset, label) : canonicalize_concept(raw_concept);
        std::fill(visited.begin(), visited.end(), 0);
        for (int r = 0; r < mask.h; ++r) {
            for (int c = 0; c < mask.w; ++c) {
                if (mask.at(r, c) != label || visited[static_cast<size_t>(r) * mask.w + c])
                    continue;
                // new component; BFS with 8-connectivity from its top-left pixel
                BinaryMask inst(mask.h, mask.w, 0);
                queue.clear();
                queue.emplace_back(r, c);
                visited[static_cast<size_t>(r) * mask.w + c] = 1;
                while (!queue.empty()) {
                    auto [y, x] = queue.front();
                    queue.pop_front();
                    inst.at(y, x) = 1;
                    for (int dy = -1; dy <= 1; ++dy) {
                        for (int dx = -1; dx <= 1; ++dx) {
                            if (dy == 0 && dx == 0) continue;
                            const int ny = y + dy, nx = x + dx;
                            if (ny < 0 || ny >= mask.h || nx < 0 || nx >= mask.w) continue;
                            const size_t idx = static_cast<size_t>(ny) * mask.w + nx;
                            if (visited[idx] || mask.at(ny, nx) != label) continue;
                            visited[idx] = 1;
                            queue.emplace_back(ny, nx);
                        }
                    }
                }
                instances.push_back(std::move(inst));
                if (concepts_out) concepts_out->push_back(concept_str);
            }
        }
    }
    return instances;
}

TripletSample expand_to_triplets(const SampleRecord& record, const ConceptDictionary& dict,
                                 int canvas, LetterboxInfo* info_out) {
    Image image = read_image_png(record.image_path);
    LabelMap mask = read_mask_png(record.mask_path);
    if (image.h != mask.h || image.w != mask.w)
        throw ValidationError("image/mask shape mismatch for sample '" + record.id + "'");

    LetterboxInfo info;
    if (canvas > 0) {
        image = letterbox_image(image, canvas, &info);
        mask = letterbox_mask(mask, canvas, nullptr);
    } else {
        info.src_h = info.box_h = info.canvas = image.h;
        info.src_w = info.box_w = image.w;
    }
    if (info_out) *info_out = info;

    TripletSample out;
    out.source_id = record.id;
    out.image = std::move(image);
    std::vector<std::string> concepts;
    std::vector<BinaryMask> raw =
        connected_instances(mask, record.label_map, &concepts, &dict, record.dataset_name);
    // instances can drop to zero pixels only through resizing; skip those
    for (size_t i = 0; i < raw.size(); ++i) {
        if (count_foreground(raw[i]) == 0) continue;
        out.instance_masks.push_back(std::move(raw[i]));
        out.concepts.push_back(concepts[i]);
    }
    return out;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_train_val(
    std::vector<std::string> ids, const SplitSpec& spec) {
    if (ids.empty()) throw ValidationError("cannot split an empty id list");
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
        throw ValidationError("train_fraction must be in (0,1)");

    std::sort(ids.begin(), ids.end());
    SplitMix64 rng(spec.seed);
    for (size_t i = ids.size() - 1; i > 0; --i) {
        const size_t j = static_cast<size_t>(rng.next_below(i + 1));
        std::swap(ids[i], ids[j]);
    }
    const size_t n_train = static_cast<size_t>(
        std::floor(spec.train_fraction * static_cast<double>(ids.size())));
    std::vector<std::string> train(ids.begin(), ids.begin() + n_train);
    std::vector<std::string> val(ids.begin() + n_train, ids.end());
    return {std::move(train), std::move(val)};
}

std::string dictionary_to_json(const ConceptDictionary& dict) {
    json datasets = json::object();
    for (const auto& [key, concept_str] : dict.entries)
        datasets[key.first][std::to_string(key.second)] = concept_str;
    json out;
    out["datasets"] = datasets;
    out["vocabulary"] = dict.vocabulary;
    return out.dump(2) + "\n";
}

ConceptDictionary dictionary_from_json(const std::string& text) {
    ConceptDictionary dict;
    json obj;
    try {
        obj = json::parse(text);
        for (const auto& [dataset, labels] : obj.at("datasets").items())
            for (const auto& [label, concept_str] : labels.items())
                dict.entries[{dataset, std::stoi(label)}] = concept_str.get<std::string>();
        dict.vocabulary = obj.at("vocabulary").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad dictionary file: ") + e.what());
    }
    return dict;
}

std::string resolve_path(const std::string& manifest_path, const std::string& rel) {
    namespace fs = std::filesystem;
    fs::path p(rel);
    if (p.is_absolute()) return rel;
    return (fs::path(manifest_path).parent_path() / p).string();
}

} // namespace promptseg
