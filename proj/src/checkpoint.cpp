#include "newsrl/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

namespace newsrl {

using nlohmann::json;

std::string checkpoint_to_json(const ParamSet& params, const std::string& header_json) {
    json doc;
    doc["format"] = "newsrl-checkpoint-v1";
    doc["header"] = header_json.empty() ? json::object() : json::parse(header_json);
    json p = json::object();
    for (const auto& [name, t] : params) {
        p[name] = json{{"shape", t.shape}, {"values", t.values}};
    }
    doc["params"] = std::move(p);
    return doc.dump();
}

void checkpoint_from_json(const std::string& text, ParamSet& params, std::string& header_json) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint: invalid JSON: ") + e.what());
    }
    if (doc.value("format", "") != "newsrl-checkpoint-v1") {
        throw DataError("checkpoint: unknown format tag");
    }
    params.clear();
    for (auto& [name, entry] : doc.at("params").items()) {
        Shape shape = entry.at("shape").get<Shape>();
        std::vector<double> values = entry.at("values").get<std::vector<double>>();
        params.emplace(name, Tensor(std::move(shape), std::move(values)));
    }
    header_json = doc.at("header").dump();
}

void save_checkpoint(const std::string& path, const ParamSet& params,
                     const std::string& header_json) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot write " + path);
    out << checkpoint_to_json(params, header_json);
}

std::string load_checkpoint(const std::string& path, ParamSet& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot read " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::string header;
    checkpoint_from_json(text, params, header);
    return header;
}

} // namespace newsrl
