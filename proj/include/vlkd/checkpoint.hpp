#pragma once

#include <bit>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlkd/transformer.hpp"

namespace vlkd {

static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");

// On-disk checkpoint: a directory holding manifest.json (format version,
// caller metadata, one entry per tensor with name/shape/dtype/offset/frozen)
// and weights.bin (the tensors as little-endian f32, concatenated in
// manifest order).

struct LoadedCheckpoint {
    nlohmann::ordered_json meta;
    struct Entry {
        std::string name;
        Shape shape;
        bool frozen = false;
        std::vector<float> values;
    };
    std::vector<Entry> tensors;

    const Entry* find(const std::string& name) const {
        for (const auto& e : tensors)
            if (e.name == name) return &e;
        return nullptr;
    }
};

namespace detail {

inline nlohmann::ordered_json tensor_manifest(const std::string& name, const Shape& shape, bool frozen,
                                              size_t offset) {
    nlohmann::ordered_json t;
    t["name"] = name;
    nlohmann::ordered_json js = nlohmann::ordered_json::array();
    for (int d : shape) js.push_back(d);
    t["shape"] = js;
    t["dtype"] = "f32";
    t["offset"] = offset;
    t["frozen"] = frozen;
    return t;
}

inline void write_checkpoint_files(const std::string& dir, const nlohmann::ordered_json& manifest,
                                   const std::vector<const std::vector<float>*>& buffers) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir + "/manifest.json");
        if (!out) throw FormatError("save_checkpoint: cannot write '" + dir + "/manifest.json'");
        out << manifest.dump(2) << "\n";
    }
    {
        std::ofstream out(dir + "/weights.bin", std::ios::binary);
        if (!out) throw FormatError("save_checkpoint: cannot write '" + dir + "/weights.bin'");
        for (const auto* b : buffers)
            out.write(reinterpret_cast<const char*>(b->data()),
                      static_cast<std::streamsize>(b->size() * sizeof(float)));
    }
}

} // namespace detail

inline void save_checkpoint(const std::string& dir, const ParamList<float>& params,
                            const nlohmann::ordered_json& meta) {
    std::set<std::string> seen;
    for (const auto& p : params)
        if (!seen.insert(p.name).second)
            throw FormatError("save_checkpoint: duplicate tensor name '" + p.name + "'");
    nlohmann::ordered_json manifest;
    manifest["format_version"] = 1;
    manifest["meta"] = meta;
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    std::vector<const std::vector<float>*> buffers;
    size_t offset = 0;
    for (const auto& p : params) {
        tensors.push_back(detail::tensor_manifest(p.name, p.tensor->shape, p.frozen, offset));
        buffers.push_back(&p.tensor->v);
        offset += p.tensor->v.size() * sizeof(float);
    }
    manifest["tensors"] = tensors;
    detail::write_checkpoint_files(dir, manifest, buffers);
}

// verbatim re-save of a loaded checkpoint (round-trip identity)
inline void save_checkpoint(const std::string& dir, const LoadedCheckpoint& ck) {
    nlohmann::ordered_json manifest;
    manifest["format_version"] = 1;
    manifest["meta"] = ck.meta;
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    std::vector<const std::vector<float>*> buffers;
    size_t offset = 0;
    for (const auto& e : ck.tensors) {
        tensors.push_back(detail::tensor_manifest(e.name, e.shape, e.frozen, offset));
        buffers.push_back(&e.values);
        offset += e.values.size() * sizeof(float);
    }
    manifest["tensors"] = tensors;
    detail::write_checkpoint_files(dir, manifest, buffers);
}

inline LoadedCheckpoint load_checkpoint(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw FormatError("load_checkpoint: cannot open '" + dir + "/manifest.json'");
    nlohmann::ordered_json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("load_checkpoint: bad manifest: ") + e.what());
    }
    if (!manifest.contains("format_version") || manifest["format_version"].get<int>() != 1)
        throw FormatError("load_checkpoint: unsupported or missing format_version");
    if (!manifest.contains("tensors") || !manifest["tensors"].is_array())
        throw FormatError("load_checkpoint: manifest has no tensors array");

    std::ifstream win(dir + "/weights.bin", std::ios::binary);
    if (!win) throw FormatError("load_checkpoint: cannot open '" + dir + "/weights.bin'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(win)), std::istreambuf_iterator<char>());

    LoadedCheckpoint ck;
    if (manifest.contains("meta")) ck.meta = manifest["meta"];
    std::set<std::string> seen;
    size_t expected_offset = 0;
    for (const auto& t : manifest["tensors"]) {
        LoadedCheckpoint::Entry e;
        e.name = t.at("name").get<std::string>();
        if (!seen.insert(e.name).second)
            throw FormatError("load_checkpoint: tensor '" + e.name + "' listed more than once");
        for (const auto& d : t.at("shape")) e.shape.push_back(d.get<int>());
        if (t.at("dtype").get<std::string>() != "f32")
            throw FormatError("load_checkpoint: unsupported dtype for '" + e.name + "'");
        e.frozen = t.at("frozen").get<bool>();
        const size_t offset = t.at("offset").get<size_t>();
        if (offset != expected_offset)
            throw FormatError("load_checkpoint: offset mismatch for '" + e.name + "'");
        const size_t count = static_cast<size_t>(numel_of(e.shape));
        if (offset + count * sizeof(float) > bytes.size())
            throw FormatError("load_checkpoint: weights.bin too short for '" + e.name + "'");
        e.values.resize(count);
        std::memcpy(e.values.data(), bytes.data() + offset, count * sizeof(float));
        expected_offset = offset + count * sizeof(float);
        ck.tensors.push_back(std::move(e));
    }
    if (expected_offset != bytes.size())
        throw FormatError("load_checkpoint: weights.bin has " + std::to_string(bytes.size()) +
                          " bytes, manifest accounts for " + std::to_string(expected_offset));
    return ck;
}

// copy values into an existing model's parameters, matched by name
inline void apply_checkpoint(const LoadedCheckpoint& ck, const ParamList<float>& target) {
    for (const auto& p : target) {
        const auto* e = ck.find(p.name);
        if (!e) throw FormatError("apply_checkpoint: tensor '" + p.name + "' missing from checkpoint");
        if (e->shape != p.tensor->shape)
            throw FormatError("apply_checkpoint: shape mismatch for '" + p.name + "': checkpoint " +
                              shape_str(e->shape) + " vs model " + shape_str(p.tensor->shape));
        p.tensor->v = e->values;
    }
}

} // namespace vlkd
