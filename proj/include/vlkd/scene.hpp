#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlkd/errors.hpp"
#include "vlkd/rng.hpp"
#include "vlkd/vocab.hpp"

namespace vlkd {

// Synthetic stand-in for an image-caption corpus: a small grid of colored
// shapes, rendered to patch vectors and described by template captions with
// attribute/count question-answer pairs.

inline const std::vector<std::string>& shape_catalog() {
    static const std::vector<std::string> v{"circle", "square", "star", "triangle"};
    return v;
}

inline const std::vector<std::string>& color_catalog() {
    static const std::vector<std::string> v{"blue", "green", "purple", "red", "yellow"};
    return v;
}

inline const std::vector<std::string>& count_catalog() {
    static const std::vector<std::string> v{"one", "two", "three"};
    return v;
}

struct SceneCell {
    int shape = -1;
    int color = -1;
    bool occupied() const { return shape >= 0; }
};

struct SceneSpec {
    uint64_t seed = 0;
    int grid = 3;
    std::vector<SceneCell> cells; // grid*grid, row-major

    const SceneCell& cell(int r, int c) const { return cells[static_cast<size_t>(r) * grid + c]; }
};

struct QaPair {
    std::string question;
    std::string answer;
};

struct SceneSample {
    SceneSpec scene;
    std::string caption; // bare description, no prefix or period
    std::vector<QaPair> qa;
};

struct PatchSequence {
    int count = 0;
    int dim = 0;
    std::vector<double> data; // count x dim, row-major
};

// -------------------------------------------------------------- generation

inline std::string caption_for(const SceneSpec& scene) {
    std::vector<const SceneCell*> objs;
    std::vector<int> idx;
    for (size_t i = 0; i < scene.cells.size(); ++i)
        if (scene.cells[i].occupied()) {
            objs.push_back(&scene.cells[i]);
            idx.push_back(static_cast<int>(i));
        }
    auto phrase = [](const SceneCell& c) {
        return "a " + color_catalog()[static_cast<size_t>(c.color)] + " " +
               shape_catalog()[static_cast<size_t>(c.shape)];
    };
    if (objs.empty()) return "an empty picture";
    if (objs.size() == 1) return phrase(*objs[0]);
    if (objs.size() == 2) {
        const bool same_row = idx[0] / scene.grid == idx[1] / scene.grid;
        return phrase(*objs[0]) + (same_row ? " beside " : " above ") + phrase(*objs[1]);
    }
    std::string out = phrase(*objs[0]);
    for (size_t i = 1; i < objs.size(); ++i) out += " and " + phrase(*objs[i]);
    return out;
}

inline std::vector<QaPair> qa_for(const SceneSpec& scene) {
    std::vector<int> shape_count(shape_catalog().size(), 0);
    std::vector<int> color_count(color_catalog().size(), 0);
    std::vector<const SceneCell*> objs;
    for (const auto& c : scene.cells)
        if (c.occupied()) {
            ++shape_count[static_cast<size_t>(c.shape)];
            ++color_count[static_cast<size_t>(c.color)];
            objs.push_back(&c);
        }
    std::vector<QaPair> qa;
    for (const auto* obj : objs) {
        if (shape_count[static_cast<size_t>(obj->shape)] == 1)
            qa.push_back({"what color is the " + shape_catalog()[static_cast<size_t>(obj->shape)] + " ?",
                          color_catalog()[static_cast<size_t>(obj->color)]});
        if (color_count[static_cast<size_t>(obj->color)] == 1)
            qa.push_back({"what shape is the " + color_catalog()[static_cast<size_t>(obj->color)] + " thing ?",
                          shape_catalog()[static_cast<size_t>(obj->shape)]});
    }
    qa.push_back({"how many things are there ?", count_catalog()[objs.size() - 1]});
    if (objs.size() == 1)
        qa.push_back({"what is in the picture ?", color_catalog()[static_cast<size_t>(objs[0]->color)] + " " +
                                                      shape_catalog()[static_cast<size_t>(objs[0]->shape)]});
    return qa;
}

// Pure function of the seed: scene layout, caption and QA pairs.
inline SceneSample generate_scene(uint64_t seed, int grid = 3) {
    Rng rng(seed ^ 0x5ce4e5eedull);
    SceneSpec scene;
    scene.seed = seed;
    scene.grid = grid;
    scene.cells.assign(static_cast<size_t>(grid) * grid, SceneCell{});
    const int n_objects = 1 + rng.next_int(3);
    std::vector<int> positions(scene.cells.size());
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    rng.shuffle(positions);
    positions.resize(static_cast<size_t>(n_objects));
    std::sort(positions.begin(), positions.end());
    for (int p : positions) {
        scene.cells[static_cast<size_t>(p)].shape = rng.next_int(static_cast<int>(shape_catalog().size()));
        scene.cells[static_cast<size_t>(p)].color = rng.next_int(static_cast<int>(color_catalog().size()));
    }
    SceneSample sample;
    sample.scene = scene;
    sample.caption = caption_for(scene);
    sample.qa = qa_for(scene);
    return sample;
}

// ---------------------------------------------------------------- rendering

// Fixed (training-free) embedding tables shared by every render call.
struct PatchBasis {
    int dim;
    std::vector<std::vector<double>> shape_base, color_base, pos_base;
    std::vector<double> empty_base;

    explicit PatchBasis(int d_img, int grid) : dim(d_img) {
        Rng rng(0x9d1a5cULL);
        auto draw = [&] {
            std::vector<double> v(static_cast<size_t>(d_img));
            for (auto& x : v) x = rng.normal() / std::sqrt(3.0);
            return v;
        };
        for (size_t i = 0; i < shape_catalog().size(); ++i) shape_base.push_back(draw());
        for (size_t i = 0; i < color_catalog().size(); ++i) color_base.push_back(draw());
        for (int i = 0; i < grid * grid; ++i) pos_base.push_back(draw());
        empty_base = draw();
    }
};

// patch_i = attribute embedding + positional offset + N(0, sigma^2) noise
inline PatchSequence render_patches(const SceneSpec& scene, uint64_t noise_seed, int d_img = 16,
                                    double sigma = 0.1) {
    static thread_local std::map<std::pair<int, int>, PatchBasis> cache;
    auto it = cache.find({d_img, scene.grid});
    if (it == cache.end()) it = cache.emplace(std::make_pair(d_img, scene.grid), PatchBasis(d_img, scene.grid)).first;
    const PatchBasis* basis = &it->second;
    Rng noise(noise_seed ^ (scene.seed * 0x100000001b3ull) ^ 0x0b5e55edull);
    PatchSequence out;
    out.count = scene.grid * scene.grid;
    out.dim = d_img;
    out.data.resize(static_cast<size_t>(out.count) * d_img);
    for (int p = 0; p < out.count; ++p) {
        const auto& cell = scene.cells[static_cast<size_t>(p)];
        for (int j = 0; j < d_img; ++j) {
            double v = basis->pos_base[static_cast<size_t>(p)][static_cast<size_t>(j)];
            if (cell.occupied())
                v += basis->shape_base[static_cast<size_t>(cell.shape)][static_cast<size_t>(j)] +
                     basis->color_base[static_cast<size_t>(cell.color)][static_cast<size_t>(j)];
            else
                v += basis->empty_base[static_cast<size_t>(j)];
            if (sigma > 0.0) v += sigma * noise.normal();
            out.data[static_cast<size_t>(p) * d_img + j] = v;
        }
    }
    return out;
}

// ------------------------------------------------------------- text forms

// the sentence paired with the image during teacher pretraining + distillation
inline std::string pair_text(const std::string& caption) { return "a picture of " + caption + " ."; }

// question-answer rendered as plain text, the format zero-shot VQA prompts
inline std::string qa_text(const QaPair& qa) { return qa.question + " answer : " + qa.answer + " ."; }

// caption followed by a grounded question-answer; text-only knowledge for
// the student, no visual input involved
inline std::string qa_context_text(const std::string& caption, const QaPair& qa) {
    return pair_text(caption) + " " + qa_text(qa);
}

// ------------------------------------------------------------------ dataset

struct PairRecord {
    uint64_t seed = 0;
    SceneSample sample;
};

inline std::vector<PairRecord> generate_dataset(uint64_t seed_base, int count, int grid = 3) {
    std::vector<PairRecord> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        PairRecord r;
        r.seed = seed_base + static_cast<uint64_t>(i);
        r.sample = generate_scene(r.seed, grid);
        out.push_back(std::move(r));
    }
    return out;
}

// evaluation pool with pairwise-distinct captions (retrieval needs an
// unambiguous ground truth)
inline std::vector<PairRecord> generate_unique_caption_dataset(uint64_t seed_base, int count, int grid = 3) {
    std::vector<PairRecord> out;
    std::set<std::string> seen;
    uint64_t seed = seed_base;
    while (static_cast<int>(out.size()) < count) {
        PairRecord r;
        r.seed = seed++;
        r.sample = generate_scene(r.seed, grid);
        if (seen.insert(r.sample.caption).second) out.push_back(std::move(r));
        if (seed - seed_base > 1000ull * static_cast<uint64_t>(count) + 10000ull)
            throw ContractError("generate_unique_caption_dataset: caption space exhausted before reaching " +
                                std::to_string(count));
    }
    return out;
}

inline std::vector<std::string> distillation_texts(const std::vector<PairRecord>& records) {
    std::vector<std::string> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(pair_text(r.sample.caption));
    return out;
}

// Text-only corpus standing in for the language knowledge a pre-trained
// model brings along: captions plus question-answer sentences, with and
// without the grounding context, deduplicated.
inline std::vector<std::string> pretraining_texts(const std::vector<PairRecord>& records) {
    std::set<std::string> uniq;
    for (const auto& r : records) {
        uniq.insert(pair_text(r.sample.caption));
        for (size_t qi = 0; qi < r.sample.qa.size(); ++qi) {
            uniq.insert(qa_text(r.sample.qa[qi]));
            uniq.insert(qa_context_text(r.sample.caption, r.sample.qa[qi]));
        }
    }
    return {uniq.begin(), uniq.end()};
}

// Structured pretraining example: the sentence to reconstruct, plus an
// optional related sentence whose pooled encoder summary may be offered as
// an extra context row (question-answer sentences relate to their caption,
// so answering from a summary is learned on text alone).
struct PretrainExample {
    std::string sentence;
    std::string summary_source; // empty: the sentence itself
};

inline std::vector<PretrainExample> pretraining_examples(const std::vector<PairRecord>& records) {
    std::set<std::pair<std::string, std::string>> seen;
    std::vector<PretrainExample> out;
    auto push = [&](std::string sentence, std::string source) {
        if (seen.insert({sentence, source}).second) out.push_back({std::move(sentence), std::move(source)});
    };
    for (const auto& r : records) {
        auto cap = pair_text(r.sample.caption);
        push(cap, "");
        for (const auto& qa : r.sample.qa) {
            push(qa_text(qa), cap); // answer recoverable from the caption's summary
            push(qa_context_text(r.sample.caption, qa), "");
        }
    }
    return out;
}

// ----------------------------------------------------------------- JSONL io

inline void export_jsonl(const std::string& path, const std::vector<PairRecord>& records) {
    std::ofstream out(path);
    if (!out) throw FormatError("export_jsonl: cannot open '" + path + "' for writing");
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["seed"] = r.seed;
        j["caption"] = r.sample.caption;
        nlohmann::ordered_json qa = nlohmann::ordered_json::array();
        for (const auto& p : r.sample.qa) qa.push_back({{"q", p.question}, {"a", p.answer}});
        j["qa"] = qa;
        nlohmann::ordered_json grid = nlohmann::ordered_json::array();
        for (int row = 0; row < r.sample.scene.grid; ++row) {
            nlohmann::ordered_json cells = nlohmann::ordered_json::array();
            for (int col = 0; col < r.sample.scene.grid; ++col) {
                const auto& c = r.sample.scene.cell(row, col);
                if (c.occupied())
                    cells.push_back({c.shape, c.color});
                else
                    cells.push_back(nullptr);
            }
            grid.push_back(cells);
        }
        j["grid"] = grid;
        out << j.dump() << "\n";
    }
}

// Patches are never stored; records are re-derived from their seed and
// validated against the stored caption.
inline std::vector<PairRecord> import_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("import_jsonl: cannot open '" + path + "'");
    std::vector<PairRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("import_jsonl: line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("seed") || !j.contains("caption") || !j.contains("grid"))
            throw FormatError("import_jsonl: line " + std::to_string(line_no) + " missing required fields");
        PairRecord r;
        r.seed = j["seed"].get<uint64_t>();
        const int grid = static_cast<int>(j["grid"].size());
        r.sample = generate_scene(r.seed, grid);
        if (r.sample.caption != j["caption"].get<std::string>())
            throw FormatError("import_jsonl: line " + std::to_string(line_no) +
                              ": caption does not match its seed (corrupt record)");
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace vlkd
