#include "sepfit/schema.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sepfit/error.hpp"

namespace sepfit {

const char* to_string(ColumnKind kind) {
    switch (kind) {
        case ColumnKind::Covariate: return "covariate";
        case ColumnKind::Factor: return "factor";
        case ColumnKind::OrderedFactor: return "ordered";
        case ColumnKind::Response: return "response";
    }
    return "?";
}

namespace {

ColumnKind parse_kind(const std::string& s, const std::string& column) {
    if (s == "covariate") return ColumnKind::Covariate;
    if (s == "factor") return ColumnKind::Factor;
    if (s == "ordered") return ColumnKind::OrderedFactor;
    if (s == "response") return ColumnKind::Response;
    throw DataError("column '" + column + "': unknown kind '" + s + "'");
}

}  // namespace

ColumnSchema::ColumnSchema(std::vector<ColumnInfo> columns) : columns_(std::move(columns)) {
    std::set<std::string> names;
    int responses = 0;
    for (auto& c : columns_) {
        if (!names.insert(c.name).second) throw DataError("duplicate column '" + c.name + "' in schema");
        std::set<std::string> lv(c.levels.begin(), c.levels.end());
        if (lv.size() != c.levels.size()) throw DataError("column '" + c.name + "': duplicate levels");
        if (c.kind == ColumnKind::OrderedFactor && c.levels.empty())
            throw DataError("ordered factor '" + c.name + "' needs an explicit level list");
        if (c.kind == ColumnKind::Response) {
            ++responses;
            if (c.levels.empty()) c.levels = {"0", "1"};
        }
    }
    if (responses != 1)
        throw DataError("schema must declare exactly one response column (found " + std::to_string(responses) + ")");
}

const ColumnInfo* ColumnSchema::find(const std::string& name) const {
    for (const auto& c : columns_)
        if (c.name == name) return &c;
    return nullptr;
}

const ColumnInfo& ColumnSchema::at(const std::string& name) const {
    if (const auto* c = find(name)) return *c;
    throw DataError("unknown column '" + name + "'");
}

const ColumnInfo& ColumnSchema::response() const {
    for (const auto& c : columns_)
        if (c.kind == ColumnKind::Response) return c;
    throw DataError("schema has no response column");
}

ColumnSchema ColumnSchema::from_json_text(const std::string& text) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("schema is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw DataError("schema must be a JSON object mapping column -> {kind, levels}");
    std::vector<ColumnInfo> cols;
    for (auto it = j.begin(); it != j.end(); ++it) {
        ColumnInfo c;
        c.name = it.key();
        const auto& v = it.value();
        if (!v.is_object() || !v.contains("kind") || !v["kind"].is_string())
            throw DataError("column '" + c.name + "': expected an object with a string 'kind'");
        c.kind = parse_kind(v["kind"].get<std::string>(), c.name);
        if (v.contains("levels")) {
            if (!v["levels"].is_array()) throw DataError("column '" + c.name + "': 'levels' must be an array");
            for (const auto& l : v["levels"]) {
                if (l.is_string())
                    c.levels.push_back(l.get<std::string>());
                else if (l.is_number_integer())
                    c.levels.push_back(std::to_string(l.get<long long>()));
                else
                    throw DataError("column '" + c.name + "': levels must be strings");
            }
            if (c.levels.empty()) throw DataError("column '" + c.name + "': empty level list");
        }
        cols.push_back(std::move(c));
    }
    return ColumnSchema(std::move(cols));
}

ColumnSchema ColumnSchema::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open schema file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string ColumnSchema::to_json_text() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& c : columns_) {
        nlohmann::ordered_json e;
        e["kind"] = to_string(c.kind);
        if (!c.levels.empty()) e["levels"] = c.levels;
        j[c.name] = e;
    }
    return j.dump(2) + "\n";
}

}  // namespace sepfit
